from __future__ import annotations

import mpmath as mp
import numpy as np
import pytest

from ymlab.constants import make_dimension_params
from ymlab.errors import DomainError
from ymlab.ground_state import check_trapping_region, solve_ground_state, taylor_coefficients_at_origin


def _direct_xi_oracle(d: int, xs: list[float]) -> list[float]:
    """Taylor-series integration of the radial ODE in ``xi`` at 20 digits."""
    mp.mp.dps = 20
    a1 = mp.mpf(3 * (d - 2)) / (2 * (d + 2))
    a2 = (3 * (d - 2) * (-2 * a1) - (d - 2)) / (4 * (d + 4))
    x0 = mp.mpf("0.01")
    y0 = [-1 + a1 * x0**2 + a2 * x0**4, 2 * a1 * x0 + 4 * a2 * x0**3]
    sol = mp.odefun(lambda x, y: [y[1], -(d + 1) / x * y[1] + 3 * (d - 2) * y[0] ** 2 + (d - 2) * x**2 * y[0] ** 3], x0, y0)
    return [float(sol(x)[0]) for x in xs]


def test_d10_closed_form(gs10):
    xi = np.linspace(0.0, 50.0, 2001)
    assert np.max(np.abs(gs10.Q(xi) + 1.0 / (xi**2 + 1.0))) < 1e-8
    assert gs10.q0 == pytest.approx(1.0, abs=1e-3)
    assert gs10.a0 == pytest.approx(-2.0, abs=1e-3)


@pytest.mark.parametrize("d", [10, 11])
def test_origin_values(d, gs10, gs11):
    gs = gs10 if d == 10 else gs11
    assert gs.Q(np.array([0.0]))[0] == pytest.approx(-1.0, abs=1e-12)
    assert gs.LambdaQ(np.array([0.0]))[0] == pytest.approx(-2.0, abs=1e-12)


def test_origin_curvature_d11(gs11):
    assert gs11.profile.origin_d2 == pytest.approx(2 * 27 / 26, rel=1e-14)


def test_taylor_examples(p10):
    a = taylor_coefficients_at_origin(p10, 4)
    # -1/(1+x) = -1 + x - x^2 + ...
    assert a == pytest.approx([-1.0, 1.0, -1.0, 1.0, -1.0], abs=1e-14)
    for d in range(10, 20):
        p = make_dimension_params(d)
        b = taylor_coefficients_at_origin(p, 1)
        assert b[0] == -1.0
        assert b[1] == pytest.approx(3 * (d - 2) / (2 * (d + 2)), rel=1e-15)


def test_taylor_order_limit(p11):
    with pytest.raises(DomainError):
        taylor_coefficients_at_origin(p11, 7)


def test_trapping_region_examples(p10):
    rep = check_trapping_region(p10, samples=1)
    assert rep["eps"][0] == pytest.approx(-0.5)
    assert rep["lower_flux"][0] == pytest.approx(27 / 32, rel=1e-14)
    assert rep["upper_flux"][0] == pytest.approx(9 / 8, rel=1e-14)
    edge = check_trapping_region(p10, samples=10_000)
    # fluxes vanish at most linearly at the corners
    for key in ("lower_flux", "upper_flux"):
        assert 0.0 < edge[key][0] < 1e-2 and 0.0 < edge[key][-1] < 1e-2
    assert edge["inward"]


def test_matches_direct_xi_integration(gs11):
    xs = [0.1, 0.3, 1.0, 3.0, 10.0, 30.0, 100.0]
    ref = np.array(_direct_xi_oracle(11, xs))
    got = gs11.Q(np.array(xs))
    assert np.max(np.abs(got / ref - 1.0)) < 1e-7


@pytest.mark.parametrize("d", range(10, 17))
def test_profile_invariants(d):
    gs = solve_ground_state(make_dimension_params(d))
    xi = np.geomspace(1e-3, 1e3, 600)
    Q = gs.Q(xi)
    assert np.all(Q >= -1.0) and np.all(Q < 0.0)
    assert np.all(gs.LambdaQ(xi) < 0.0)
    assert np.all(xi**2 * Q > -1.0)
    v = -(xi**2) * Q
    assert np.all(np.diff(v) > 0.0)
    assert gs.q0 > 0.0 and gs.a0 < 0.0
    assert gs.diagnostics["residual_scaled_max"] < 1e-8


def test_far_field_remainder(gs11, p11):
    xi = np.geomspace(1e2, 1e3, 50)
    rem = np.abs(gs11.Q(xi) + xi**-2.0 - gs11.q0 * xi**-p11.gamma)
    assert np.max(rem * xi ** (p11.gamma + 2.0)) < 1e-2


def test_profile_grid_regularity(gs11):
    prof = gs11.profile
    assert np.all(np.diff(prof.grid) > 0.0)
    assert np.all(np.isfinite(prof.values)) and np.all(np.isfinite(prof.d1))
    # even profile: Q'(xi_1) ~ 2 a1 xi_1
    assert prof.d1[0] == pytest.approx(prof.origin_d2 * prof.grid[0], rel=1e-3)


def test_rejects_bad_arguments(p11):
    with pytest.raises(DomainError):
        solve_ground_state(p11, xi_max=10.0)
    with pytest.raises(DomainError):
        solve_ground_state(p11, tol=1e-3)
