from __future__ import annotations

import mpmath as mp
import numpy as np
import pytest

from ymlab.errors import DomainError
from ymlab.kernel import (
    apply_H_fd,
    apply_H_inverse,
    barrier_far_field,
    barrier_profiles,
    build_kernel_family,
    kernel_grid,
    scaled_ground_state_residual,
)


@pytest.fixture(scope="module")
def kf10(gs10):
    return build_kernel_family(gs10, 4)


@pytest.fixture(scope="module")
def kf11_full(gs11):
    return build_kernel_family(gs11, 4)


def _t1_d10_oracle(xs: list[float]) -> list[float]:
    """Nested quadrature of the reduction-of-order formula with ``LambdaQ = -2/(1+x^2)^2``."""
    mp.mp.dps = 20
    lq = lambda t: -2 / (1 + t**2) ** 2
    t0 = lambda t: 1 / (1 + t**2) ** 2

    def inner(s):
        return mp.quad(lambda t: t0(t) * lq(t) * t**11, [0, s])

    out = []
    for x in xs:
        outer = mp.quad(lambda s: inner(s) / (s**11 * lq(s) ** 2), [0, min(x, 1), x] if x > 1 else [0, x])
        out.append(float(lq(x) * outer))
    return out


def test_t0_normalization(gs10, gs11, kf10, kf11_full):
    assert kf10.profiles[0].origin_value == pytest.approx(1.0, abs=1e-3)
    for gs, kf in ((gs10, kf10), (gs11, kf11_full)):
        xi = kf.profiles[0].grid
        assert kf.T(0, xi) == pytest.approx(gs.LambdaQ(xi) / gs.a0, rel=1e-12)
        assert kf.profiles[0].origin_value == pytest.approx(-2.0 / gs.a0, rel=1e-12)


def test_t1_against_quadrature_oracle(kf10):
    xs = [0.5, 2.0, 10.0]
    ref = np.array(_t1_d10_oracle(xs))
    got = kf10.T(1, np.array(xs))
    # spline of the exact d=10 profile only agrees with a0 to fit accuracy
    assert np.max(np.abs(got / ref - 1.0)) < 1e-5


@pytest.mark.parametrize("which", ["d10", "d11"])
def test_roundtrip_and_constants(which, kf10, kf11_full):
    kf = kf10 if which == "d10" else kf11_full
    p = kf.gs.p
    assert np.all(kf.roundtrip < 1e-4)
    assert np.all(np.abs(kf.C_hat / kf.C_exact - 1.0) < 0.01)
    expected = 2 * np.arange(kf.j_max + 1) - p.gamma
    assert np.all(np.abs(kf.fit_exponents - expected) < 0.02 * np.maximum(1.0, np.abs(expected)))
    m = p.d / 2 - p.gamma
    for j in range(kf.j_max):
        ratio = kf.C_hat[j + 1] / kf.C_hat[j]
        assert ratio == pytest.approx(1.0 / (4 * (j + 1) * (m + j + 1)), rel=0.02)


def test_d10_far_field_exponent(kf10):
    assert kf10.fit_exponents[1] == pytest.approx(-2.0, rel=0.02)


def test_near_origin_orders(kf11_full):
    kf = kf11_full
    xi = kf.profiles[0].grid
    small = xi < 1e-2
    T0 = kf.profiles[0].origin_value
    p = kf.gs.p
    assert kf.T(1, xi[:3]) / xi[:3] ** 2 == pytest.approx(T0 / (2 * (p.d + 2)), rel=1e-3)
    for j in range(1, kf.j_max + 1):
        slope = np.polyfit(np.log(xi[small]), np.log(np.abs(kf.T(j, xi[small]))), 1)[0]
        assert slope == pytest.approx(2 * j, abs=0.01)


def test_theta_decay(kf11_full):
    xi = kf11_full.profiles[0].grid
    far = xi > 1e2
    r = np.abs(kf11_full.theta[0] / kf11_full.T(0, xi))[far] * xi[far] ** 2 / np.log(xi[far])
    assert np.max(r) < 1.0


def test_apply_H_inverse_zero_and_roundtrip(gs11):
    xi = kernel_grid()
    g = apply_H_inverse(gs11, lambda x: np.zeros_like(x), xi)
    assert np.all(g.values == 0.0)
    f = lambda x: np.exp(-0.5 * x**2) * (1.0 - x**2)
    g = apply_H_inverse(gs11, f, xi)
    x, Hg = apply_H_fd(gs11, xi, g.values)
    core = (x > 1e-2) & (x < 30.0)
    assert np.max(np.abs(Hg - f(x))[core]) < 1e-4 * np.max(np.abs(f(x)))


@pytest.mark.parametrize("sigma", [0.25, 0.5, 1.0])
@pytest.mark.parametrize("which", ["d10", "d11"])
def test_barrier_profiles(which, sigma, gs10, gs11):
    gs = gs10 if which == "d10" else gs11
    p = gs.p
    H0, H1 = barrier_profiles(gs, sigma)
    xi = H0.grid
    assert np.all(H0.values < 0.0)
    assert H0.origin_value == pytest.approx(-2.0 / sigma, rel=1e-14)
    assert H0.values[0] == pytest.approx(-2.0 / sigma, rel=1e-5)
    assert np.all(H1.values > 0.0)
    assert H1.origin_value == 0.0
    assert H1.values[:3] / xi[:3] ** 2 == pytest.approx(1.0 / (p.d + 2), rel=1e-4)
    tail = H1.values[-20:] * xi[-20:] ** (p.gamma - 2.0)
    assert tail == pytest.approx(barrier_far_field(gs), rel=1e-4)


def test_barrier_d10_closed_form(gs10):
    H0, _ = barrier_profiles(gs10, 1.0)
    xi = H0.grid
    assert np.max(np.abs(H0.values + 2.0 / (1.0 + xi**2) ** 2)) < 1e-8


@pytest.mark.parametrize("sigma", [0.25, 0.5])
def test_scaled_ground_state_residual(gs11, sigma):
    assert scaled_ground_state_residual(gs11, sigma) < 1e-6


def test_argument_checks(gs11):
    with pytest.raises(DomainError):
        build_kernel_family(gs11, 5)
    with pytest.raises(DomainError):
        barrier_profiles(gs11, 0.0)
    with pytest.raises(DomainError):
        barrier_profiles(gs11, 1.5)
