import math

import numpy as np
import pytest
from scipy.integrate import cumulative_simpson

from multihomog.coefficients import MultiscaleCoefficient
from multihomog.elliptic import (GridField, default_h, face_gradient, gradient, refine_study,
                                 solve_dirichlet)
from multihomog.errors import InvalidInput, UnresolvedScale
from multihomog.operators import lp_norm


def one(p):
    return np.ones((len(p), 1, 1))


def eye2(p):
    return np.broadcast_to(np.eye(2), (len(p), 2, 2)).copy()


def two_point_oracle(a, x):
    """u for -(a u')' = 1, u(0) = u(1) = 0, by fine Simpson quadrature."""
    t = np.linspace(0.0, 1.0, 2**20 + 1)
    inv = 1.0 / a(t)
    I0 = cumulative_simpson(inv, x=t, initial=0.0)
    I1 = cumulative_simpson(t * inv, x=t, initial=0.0)
    C = I1[-1] / I0[-1]
    u = C * I0 - I1
    return np.interp(x, t, u)


def test_constant_coefficient_quadratic():
    u = solve_dirichlet(one, F=1, h=1 / 64, dim=1)
    x = u.points()[:, 0]
    np.testing.assert_allclose(u.values, x * (1 - x) / 2, atol=1e-12)
    assert u.values[0] == 0 and u.values[-1] == 0


def test_oscillating_coefficient_against_quadrature():
    eps = 1 / 32
    c = MultiscaleCoefficient.from_expr("2 + sin(2*pi*y1)", [eps])
    u = solve_dirichlet(c, F=1, h=eps / 64)
    x = u.points()[:, 0]
    exact = two_point_oracle(lambda t: 2 + np.sin(2 * np.pi * t / eps), x)
    assert np.max(np.abs(u.values - exact)) <= 1e-6


def test_manufactured_2d_second_order():
    errs = []
    for h in (1 / 16, 1 / 32):
        u = solve_dirichlet(eye2, F="2*pi^2*sin(pi*x[1])*sin(pi*x[2])", h=h, dim=2)
        p = u.points()
        exact = (np.sin(np.pi * p[:, 0]) * np.sin(np.pi * p[:, 1])).reshape(u.values.shape)
        errs.append(lp_norm(GridField(u.grid, u.values - exact), 2))
    assert math.log2(errs[0] / errs[1]) == pytest.approx(2.0, abs=0.15)


def test_divergence_forcing_1d():
    # div f = 1 for f = x
    u = solve_dirichlet(one, f="x", h=1 / 64, dim=1)
    x = u.points()[:, 0]
    np.testing.assert_allclose(u.values, x * (1 - x) / 2, atol=1e-12)


def test_boundary_data_exact():
    u = solve_dirichlet(eye2, h=1 / 16, dim=2, boundary=lambda p: p[:, 0] + 2 * p[:, 1])
    p = u.points()
    np.testing.assert_allclose(u.values.ravel(), p[:, 0] + 2 * p[:, 1], atol=1e-9)


def test_gradient_exact_for_linear():
    u = solve_dirichlet(eye2, h=1 / 16, dim=2, boundary=lambda p: p[:, 0])
    g = gradient(u)
    np.testing.assert_allclose(g.values[0], 1.0, atol=1e-8)
    np.testing.assert_allclose(g.values[1], 0.0, atol=1e-8)


def test_gradient_second_order():
    errs = []
    for cells in (32, 64):
        x = np.linspace(0, 1, cells + 1)
        u = solve_dirichlet(one, h=1 / cells, dim=1, boundary=np.sin(np.pi * x))
        g = gradient(GridField(u.grid, np.sin(np.pi * x)))
        errs.append(np.max(np.abs(g.values[0, 1:-1] - np.pi * np.cos(np.pi * x[1:-1]))))
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.1)


def test_face_gradient_of_quadratic():
    u = solve_dirichlet(one, F=1, h=1 / 64, dim=1)
    g = face_gradient(u)
    xc = g.points()[:, 0]
    np.testing.assert_allclose(g.values[0], (1 - 2 * xc) / 2, atol=1e-12)


def test_maximum_principle_and_linearity():
    c = MultiscaleCoefficient.from_expr("(2+sin(2*pi*y1))*(2+cos(2*pi*y2))", [1 / 8, 1 / 8 * 0.4])
    u1 = solve_dirichlet(c, F="1 + x^2", h=1 / 512)
    assert np.all(u1.values >= -1e-14)
    u2 = solve_dirichlet(c, f="cos(3*x)", h=1 / 512)
    u12 = solve_dirichlet(c, F="1 + x^2", f="cos(3*x)", h=1 / 512)
    np.testing.assert_allclose(u12.values, u1.values + u2.values, atol=1e-10)


def test_energy_estimate():
    c = MultiscaleCoefficient.from_expr("(2+sin(2*pi*y1[1]))*(2+cos(2*pi*y1[2]))", [1 / 4], dim=2,
                                        ellipticity=1 / 9)
    u = solve_dirichlet(c, f=["cos(2*pi*x[1])", "x[2]"], F=1, h=1 / 64)
    grad = lp_norm(face_gradient(u), 2)
    f_norm = math.sqrt(0.5 + 1 / 3)
    poincare = 1 / (math.pi * math.sqrt(2))
    assert grad <= 9 * (f_norm + poincare * 1.0)


def test_resolution_guard():
    c = MultiscaleCoefficient.from_expr("2 + sin(2*pi*y1)", [0.1])
    with pytest.raises(UnresolvedScale):
        solve_dirichlet(c, F=1, h=1 / 16)
    solve_dirichlet(c, F=1, h=1 / 16, override=True)
    assert default_h(c) == 1 / 256
    with pytest.raises(InvalidInput):
        solve_dirichlet(c, F=1, h=0.3, override=True)


def test_refine_constant_coefficient_order_two():
    t = refine_study(lambda h: solve_dirichlet(eye2, F="2*pi^2*sin(pi*x[1])*sin(pi*x[2])", h=h, dim=2),
                     [1 / 8, 1 / 16, 1 / 32, 1 / 64])
    assert not t.flagged and t.order == pytest.approx(2.0, abs=0.1)


def test_refine_multiscale_order_at_least_one():
    c = MultiscaleCoefficient.from_expr("(2+sin(2*pi*y1))*(2+cos(2*pi*y2))", [1 / 8, 1 / 8 * (1 / 3 + 0.05)])
    t = refine_study(lambda h: solve_dirichlet(c, F=1, h=h), [1 / 256, 1 / 512, 1 / 1024, 1 / 2048])
    assert not t.flagged and t.order >= 1


def test_refine_singular_forcing_flagged():
    t = refine_study(lambda h: solve_dirichlet(one, F="abs(x-0.3)^(-0.9)", h=h, dim=1),
                     [1 / 16, 1 / 32, 1 / 64, 1 / 128, 1 / 256])
    assert t.flagged and t.order is None
    with pytest.raises(InvalidInput):
        refine_study(lambda h: solve_dirichlet(one, F=1, h=h, dim=1), [1 / 8, 1 / 16])
