import math

import numpy as np
import pytest

from multihomog.cell import (reiterated_effective, reiterated_on_lattice, slow_lattice, solve_cell_1d,
                             solve_cell_2d)
from multihomog.coefficients import MultiscaleCoefficient
from multihomog.errors import InvalidInput, NonElliptic


def harmonic_mean_oracle(a, points=10**6):
    y = (np.arange(points) + 0.5) / points
    return 1.0 / np.mean(1.0 / a(y))


def laminate(y):
    a = 2 + np.sin(2 * np.pi * y[:, 0])
    out = np.zeros((len(y), 2, 2))
    out[:, 0, 0] = out[:, 1, 1] = a
    return out


# ------------------------------------------------------------ 1D


def test_constant_1d():
    corr, eff = solve_cell_1d(lambda y: np.full_like(y, 2.5))
    assert eff.value[0, 0] == 2.5
    assert np.all(corr.values == 0) and np.all(corr.gradient == 0)


def test_sqrt3():
    corr, eff = solve_cell_1d(lambda y: 2 + np.sin(2 * np.pi * y))
    assert abs(eff.value[0, 0] - math.sqrt(3)) <= 1e-8
    assert abs(eff.value[0, 0] - harmonic_mean_oracle(lambda y: 2 + np.sin(2 * np.pi * y))) <= 1e-8
    assert np.all(corr.mean_residual <= 1e-8)


def test_reciprocal_kernel():
    _, eff = solve_cell_1d(lambda y: 1 / (2 + np.cos(2 * np.pi * y)))
    assert eff.value[0, 0] == pytest.approx(0.5, abs=1e-10)


def test_1d_corrector_gradient():
    # chi' = ahat/a - 1
    corr, eff = solve_cell_1d(lambda y: 2 + np.sin(2 * np.pi * y), cells=256)
    y = np.arange(256) / 256
    expected = math.sqrt(3) / (2 + np.sin(2 * np.pi * y)) - 1
    np.testing.assert_allclose(corr.gradient[0, 0], expected, atol=1e-8)


def test_non_elliptic_1d():
    with pytest.raises(NonElliptic):
        solve_cell_1d(lambda y: np.sin(2 * np.pi * y))


# ------------------------------------------------------------ 2D


def test_identity_2d():
    corr, eff = solve_cell_2d(lambda y: np.broadcast_to(np.eye(2), (len(y), 2, 2)).copy(), 1 / 16)
    np.testing.assert_allclose(eff.value, np.eye(2), atol=1e-12)
    assert np.max(np.abs(corr.values)) <= 1e-12


def test_laminate_matches_1d():
    corr, eff = solve_cell_2d(laminate, 1 / 512)
    _, eff1 = solve_cell_1d(lambda y: 2 + np.sin(2 * np.pi * y))
    assert abs(eff.value[0, 0] - eff1.value[0, 0]) <= 1e-6
    assert eff.value[1, 1] == pytest.approx(2.0, abs=1e-10)
    assert abs(eff.value[0, 1]) <= 1e-10 and abs(eff.value[1, 0]) <= 1e-10
    assert np.all(corr.mean_residual <= 1e-8)


def test_symmetric_checkerboard():
    def A(y):
        a = 2 + np.cos(2 * np.pi * y[:, 0]) * np.cos(2 * np.pi * y[:, 1])
        return a[:, None, None] * np.eye(2)

    corr, eff = solve_cell_2d(A, 1 / 64)
    assert eff.value[0, 0] == pytest.approx(eff.value[1, 1], abs=1e-8)
    assert abs(eff.value[0, 1]) <= 1e-8
    lam = 1.0
    assert eff.min_rayleigh(seed=1) >= lam
    assert corr.energy_norm() <= 2 / lam
    assert np.all(corr.mean_residual <= 1e-8)


def test_grid_convergence_smooth_kernel():
    def A(y):
        a = 2 + np.cos(2 * np.pi * y[:, 0]) * np.cos(2 * np.pi * y[:, 1])
        return a[:, None, None] * np.eye(2)

    vals = [solve_cell_2d(A, h)[1].value[0, 0] for h in (1 / 16, 1 / 32, 1 / 64)]
    d1, d2 = abs(vals[0] - vals[1]), abs(vals[1] - vals[2])
    assert math.log2(d1 / d2) >= 1.5


def test_nonsymmetric_kernel():
    def A(y):
        out = np.zeros((len(y), 2, 2))
        out[:, 0, 0] = 2 + np.sin(2 * np.pi * y[:, 1])
        out[:, 1, 1] = 2
        out[:, 0, 1] = 0.5 * np.cos(2 * np.pi * y[:, 0])
        out[:, 1, 0] = -0.5 * np.cos(2 * np.pi * y[:, 0])
        return out

    corr, eff = solve_cell_2d(A, 1 / 32)
    assert np.all(np.isfinite(eff.value))
    assert eff.min_rayleigh() >= 1.0
    assert np.all(corr.mean_residual <= 1e-8)


def test_bad_spacing():
    with pytest.raises(InvalidInput):
        solve_cell_2d(laminate, 0.3)


# ------------------------------------------------------------ reiterated


def test_slow_lattice_shape():
    assert slow_lattice(2, 4).shape == (16, 2)
    assert slow_lattice(0, 4).shape == (1, 0)


def test_fast_independent_kernel_is_exact():
    c = MultiscaleCoefficient.from_expr("2 + sin(2*pi*y1)", [0.1, 0.01])
    z = np.linspace(0, 1, 7, endpoint=False)
    table = reiterated_effective(c, z, 1 / 64, keep_correctors=True)
    np.testing.assert_array_equal(table.matrices[:, 0, 0], 2 + np.sin(2 * np.pi * z))
    assert all(np.all(cf.values == 0) for cf in table.correctors)


def test_separable_kernel():
    c = MultiscaleCoefficient.from_expr("(2+sin(2*pi*y1))*(2+sin(2*pi*y2))", [0.1, 0.01])
    z = np.linspace(0, 1, 9, endpoint=False)
    table = reiterated_effective(c, z, 1 / 1024)
    np.testing.assert_allclose(table.matrices[:, 0, 0], (2 + np.sin(2 * np.pi * z)) * math.sqrt(3), rtol=1e-8)


def test_reiterated_periodic_in_slow_point():
    c = MultiscaleCoefficient.from_expr("(2+sin(2*pi*y1))*(2+cos(2*pi*(y1+y2)))", [0.1, 0.01])
    z = np.array([0.13, 0.47])
    a = reiterated_effective(c, z, 1 / 256).matrices
    b = reiterated_effective(c, z + 3, 1 / 256).matrices
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_lattice_interpolation_2d():
    c = MultiscaleCoefficient.from_expr(
        "[[(2+sin(2*pi*y1[1]))*(2+cos(2*pi*y2[1])), 0], [0, 2+sin(2*pi*y1[2])]]", [0.1, 0.01])
    table = reiterated_on_lattice(c, 6, 1 / 16, threads=2)
    assert table.matrices.shape == (36, 2, 2)
    z = np.array([[0.2, 0.7]])
    direct = reiterated_effective(c, z.reshape(1, 1, 2), 1 / 16).matrices[0]
    np.testing.assert_allclose(table(z)[0], direct, rtol=2e-2, atol=1e-12)
