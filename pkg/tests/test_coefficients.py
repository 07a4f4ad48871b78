import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from multihomog.coefficients import (MultiscaleCoefficient, check_ellipticity, check_periodicity,
                                     eval_multiscale, holder_quotient, identity_residual, lift_quasiperiodic,
                                     parse_coefficient, parse_expression, reperiodize)
from multihomog.errors import DegenerateMatrix, InvalidInput, ParseError, PeriodicityViolation

KERNEL_2S = "(2+sin(2*pi*y1))*(2+cos(2*pi*y2))"


# ------------------------------------------------------------ parsing


def test_parse_scalar_and_evaluate():
    a = parse_coefficient("2 + sin(2*pi*y1)")
    assert a.n == 1 and a.dim == 1
    assert a(np.array([[[0.25]]]))[0, 0, 0] == pytest.approx(3.0, abs=1e-15)


def test_parse_matrix():
    a = parse_coefficient("[[2+cos(2*pi*y1[1])*cos(2*pi*y2[2]), 0],[0, 2]]")
    assert (a.dim, a.n, a.cell_dim) == (2, 2, 2)
    val = a(np.array([[[0.0, 0.3], [0.7, 0.0]]]))[0]
    np.testing.assert_allclose(val, [[3.0, 0.0], [0.0, 2.0]], atol=1e-15)


def test_non_integer_frequency_rejected():
    with pytest.raises(PeriodicityViolation) as info:
        parse_coefficient("sin(3.5*y1)")
    assert info.value.position == 0


@pytest.mark.parametrize("text", ["2 + ", "sin(2*pi*z1)", "2 + sin(2*pi*y1", "[[1, 0], [0]]", "y1 @ 2"])
def test_malformed_expressions(text):
    with pytest.raises(ParseError):
        parse_coefficient(text)


def test_vector_slot_needs_component():
    with pytest.raises(ParseError):
        parse_coefficient("2 + sin(2*pi*y1)", dim=2)


def test_free_expression():
    ex = parse_expression("x^2 + 1", ("x",))
    np.testing.assert_allclose(ex(x=np.array([0.0, 2.0])), [1.0, 5.0])
    with pytest.raises(ParseError):
        parse_expression("y + 1", ("x",))


# ------------------------------------------------------------ evaluation


def test_eval_constant_kernel():
    c = MultiscaleCoefficient.from_expr("[[2, 0], [0, 2]]", [0.1])
    np.testing.assert_array_equal(eval_multiscale(c, [0.3, 0.9]), 2 * np.eye(2))


def test_eval_single_scale():
    c = MultiscaleCoefficient.from_expr("2+sin(2*pi*y1)", [0.1])
    assert eval_multiscale(c, 0.025)[0, 0] == pytest.approx(3.0, abs=1e-12)


def test_eval_two_scales():
    c = MultiscaleCoefficient.from_expr("2+sin(2*pi*y1)*cos(2*pi*y2)", [0.1, 0.01])
    assert eval_multiscale(c, 0.005)[0, 0] == pytest.approx(2 - math.sin(0.1 * math.pi), abs=1e-12)


def test_scales_validated():
    with pytest.raises(InvalidInput):
        MultiscaleCoefficient.from_expr("2+sin(2*pi*y1)*cos(2*pi*y2)", [0.01, 0.1])
    with pytest.raises(InvalidInput):
        MultiscaleCoefficient.from_expr("2", [-1.0])


def test_large_arguments_keep_phase():
    c = MultiscaleCoefficient.from_expr("2+sin(2*pi*y1)", [1e-7])
    x = 0.25e-7 + 12345 * 1e-7
    assert eval_multiscale(c, x)[0, 0] == pytest.approx(3.0, abs=1e-6)


# ------------------------------------------------------------ quasiperiodic lift


def test_lift_identity_M1():
    B = MultiscaleCoefficient.from_expr("2+sin(2*pi*y1)", [1.0])
    lifted = lift_quasiperiodic(B, [[1.0]], 0.1)
    x = np.random.default_rng(0).random(50)
    np.testing.assert_allclose(eval_multiscale(lifted, x), eval_multiscale(B.with_scales([0.1]), x), atol=1e-14)


def test_lift_irrational_frequency():
    B = MultiscaleCoefficient.from_expr("2+sin(2*pi*y1)", [1.0])
    lifted = lift_quasiperiodic(B, [[math.sqrt(2)]], 0.01)
    x = np.random.default_rng(1).random(100)
    direct = 2 + np.sin(2 * np.pi * math.sqrt(2) * x / 0.01)
    np.testing.assert_allclose(eval_multiscale(lifted, x)[:, 0, 0], direct, rtol=1e-12)


def test_lift_two_frequencies_gives_scale_list():
    phi = (1 + math.sqrt(5)) / 2
    B = MultiscaleCoefficient.from_expr("(2+sin(2*pi*y1[1]))*(2+cos(2*pi*y1[2]))", [1.0], dim=1, cell_dim=2)
    lifted = lift_quasiperiodic(B, [[1.0], [phi]], 0.05)
    assert lifted.scales == pytest.approx((0.05, 0.05 / phi))
    x = np.random.default_rng(2).random(200)
    direct = (2 + np.sin(2 * np.pi * x / 0.05)) * (2 + np.cos(2 * np.pi * phi * x / 0.05))
    np.testing.assert_allclose(eval_multiscale(lifted, x)[:, 0, 0], direct, rtol=1e-12)


def test_lift_rejects_zero_matrix():
    B = MultiscaleCoefficient.from_expr("2+sin(2*pi*y1)", [1.0])
    with pytest.raises(DegenerateMatrix):
        lift_quasiperiodic(B, [[0.0]], 0.1)


# ------------------------------------------------------------ reperiodization


def test_two_scale_example_reperiodized():
    eps, delta = 1e-3, 0.01
    c = MultiscaleCoefficient.from_expr(KERNEL_2S, [eps, eps * (1 / 3 + delta)])
    res = reperiodize(c, 30)
    a = res.approx
    assert (a.q, a.p) == (3, (1,))
    assert res.new_scales[1] == pytest.approx(eps * (1 + 3 * delta), rel=1e-12)
    assert res.new_scales[0] == pytest.approx(eps * (1 / 3 + delta) / delta, rel=1e-9)
    ys = np.random.default_rng(0).random((1000, 2, 1))
    explicit = np.stack([ys[:, 0] + ys[:, 1], 3 * ys[:, 1]], axis=1)
    np.testing.assert_allclose(res.sharp(ys), c(np.mod(explicit, 1)), atol=1e-13)
    x = np.random.default_rng(1).random(1000)
    assert identity_residual(c, res.sharp, x) <= 1e-10


def test_already_separated():
    c = MultiscaleCoefficient.from_expr(KERNEL_2S, [1.0, 1e-4])
    res = reperiodize(c, 10)
    assert res.approx.q == 1 and res.approx.p == (0,)
    assert res.approx.gamma[0] == pytest.approx(1e-4)
    assert res.new_scales == pytest.approx((1.0, 1e-4))


def test_exact_ratio_drops_a_scale():
    c = MultiscaleCoefficient.from_expr(KERNEL_2S, [2e-3, 1e-3])
    res = reperiodize(c, 2.5)
    assert res.approx.q == 2 and res.approx.gamma == (0.0,)
    assert res.sharp.n == 1 and res.dropped == (0,)
    x = np.random.default_rng(3).random(500)
    assert identity_residual(c, res.sharp, x) <= 1e-10


def random_kernel(rng, n, d):
    terms = []
    for _ in range(2):
        freqs = rng.integers(-3, 4, size=n)
        if d == 1:
            arg = " + ".join(f"({k})*y{i + 1}" for i, k in enumerate(freqs))
        else:
            arg = " + ".join(f"({k})*y{i + 1}[{rng.integers(1, 3)}]" for i, k in enumerate(freqs))
        terms.append(f"0.5*sin(2*pi*({arg}) + {rng.random():.3f})")
    scalar = "3 + " + " + ".join(terms)
    if d == 1:
        return scalar
    return f"[[{scalar}, 0.3*cos(2*pi*y{n}[1])], [0.3*cos(2*pi*y{n}[1]), 2 + 0.5*sin(2*pi*y1[2])]]"


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6), st.sampled_from([2, 3]), st.sampled_from([1, 2]), st.sampled_from([5.0, 30.0]))
def test_reperiodization_identity(seed, n, d, Q):
    rng = np.random.default_rng(seed)
    ratios = np.sort(rng.uniform(0.02, 0.98, size=n - 1))[::-1]
    eps1 = rng.uniform(0.05, 1.0)
    scales = [eps1] + [eps1 * float(np.prod(ratios[:k + 1])) for k in range(n - 1)]
    c = MultiscaleCoefficient.from_expr(random_kernel(rng, n, d), scales, dim=d)
    res = reperiodize(c, Q)
    x = rng.random((1000, d))
    vals = np.abs(eval_multiscale(c, x)).max()
    assert identity_residual(c, res.sharp, x) <= 1e-10 * (1 + vals)
    a = res.approx
    for g in a.gamma:
        if g > 0:
            assert 1 / (a.q * g) >= Q
    # new finest scale is Q-separated from every retained scale
    for s in res.new_scales[:-1]:
        assert s / res.new_scales[-1] >= Q * (1 - 1e-12)
    assert check_periodicity(res.sharp, n_samples=200, seed=seed).passed


def test_holder_constant_preserved():
    c = MultiscaleCoefficient.from_expr(KERNEL_2S, [0.01, 0.01 * (1 / 3 + 0.01)], holder=(1.0, 6 * math.pi))
    res = reperiodize(c, 30)
    assert holder_quotient(res.sharp, [0], n_samples=2000) <= 6 * math.pi


# ------------------------------------------------------------ checks


def test_ellipticity_checks():
    ident = MultiscaleCoefficient.from_expr("1", [1.0])
    rep = check_ellipticity(ident)
    assert rep.passed and rep.min_quotient == pytest.approx(1.0)
    a = MultiscaleCoefficient.from_expr("2 + sin(2*pi*y1)", [1.0], ellipticity=1 / 3)
    rep = check_ellipticity(a)
    assert rep.passed and rep.min_quotient >= 1.0
    bad = MultiscaleCoefficient.from_expr("sin(2*pi*y1)", [1.0], ellipticity=0.5)
    assert not check_ellipticity(bad).passed
