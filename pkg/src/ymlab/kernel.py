"""Kernel generators ``H T_{j+1} = T_j`` and the barrier profiles ``H_0, H_1``."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .constants import make_coeff_table
from .errors import DomainError, SingularDivision
from .ground_state import GroundState
from .profiles import RadialProfile, geometric_grid

XI_LO = 1e-3
XI_HI = 1e4
PER_DECADE = 160
J_MAX_LIMIT = 4


def kernel_grid(lo: float = XI_LO, hi: float = XI_HI, per_decade: int = PER_DECADE) -> np.ndarray:
    return geometric_grid(lo, hi, per_decade)


def _slopes(f: np.ndarray, x: np.ndarray) -> np.ndarray:
    """4th-order centred derivative on a uniform grid, 2nd order at the two edge points."""
    df = np.gradient(f, x, edge_order=2)
    h = x[1] - x[0]
    df[2:-2] = (-f[4:] + 8.0 * f[3:-1] - 8.0 * f[1:-3] + f[:-4]) / (12.0 * h)
    return df


def cumulative_integral(xi: np.ndarray, F: np.ndarray) -> np.ndarray:
    """``int_0^{xi_k} F`` on a geometric grid.

    In ``x = ln xi`` the integrand is ``G = F xi``. Where ``G`` keeps its sign,
    ``ln|G|`` is interpolated by cubic Hermite pieces (slopes from 4th-order
    differences) and ``exp`` of it is integrated by 4-point Gauss-Legendre;
    elsewhere ``G`` itself is Hermite-interpolated with the same slopes
    (endpoint-corrected trapezoid). The first panel ``[0, xi_0]`` uses the
    power law fitted to the first two samples.
    """
    out = np.empty_like(F)
    if F[0] == 0.0:
        first = 0.0
    else:
        s = np.log(F[1] / F[0]) / np.log(xi[1] / xi[0]) if F[1] * F[0] > 0 else 0.0
        if s <= -1.0:
            raise SingularDivision("integrand not integrable at the origin")
        first = F[0] * xi[0] / (s + 1.0)
    G = F * xi
    x = np.log(xi)
    dx = np.diff(x)
    panel = 0.5 * (G[:-1] + G[1:]) * dx
    sign = np.sign(G)
    if G.size >= 5:
        dG = _slopes(G, x)
        panel = panel + dx * dx * (dG[:-1] - dG[1:]) / 12.0
    if G.size >= 5 and np.all(sign == sign[0]) and sign[0] != 0.0:
        L = np.log(np.abs(G))
        dL = _slopes(L, x)
        t, wt = np.polynomial.legendre.leggauss(4)
        t = 0.5 * (t + 1.0)
        h00 = 2 * t**3 - 3 * t**2 + 1
        h10 = t**3 - 2 * t**2 + t
        h01 = -2 * t**3 + 3 * t**2
        h11 = t**3 - t**2
        Lq = (
            L[:-1, None] * h00
            + (dx * dL[:-1])[:, None] * h10
            + L[1:, None] * h01
            + (dx * dL[1:])[:, None] * h11
        )
        panel = sign[0] * np.exp(Lq) @ (0.5 * wt) * dx
    out[0] = first
    out[1:] = first + np.cumsum(panel)
    return out


def log_fd(xi: np.ndarray, f: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Fourth-order centred ``f'`` and ``f''`` on the interior of a geometric grid."""
    h = np.log(xi[1] / xi[0])
    fx = (-f[4:] + 8.0 * f[3:-1] - 8.0 * f[1:-3] + f[:-4]) / (12.0 * h)
    fxx = (-f[4:] + 16.0 * f[3:-1] - 30.0 * f[2:-2] + 16.0 * f[1:-3] - f[:-4]) / (12.0 * h * h)
    x = xi[2:-2]
    return fx / x, (fxx - fx) / (x * x)


def apply_H_fd(gs: GroundState, xi: np.ndarray, g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``H g`` on the interior of a geometric grid; returns ``(xi_interior, Hg)``."""
    d = gs.p.d
    d1, d2 = log_fd(xi, g)
    x = xi[2:-2]
    return x, d2 + (d + 1) / x * d1 - 3.0 * (d - 2) * gs.potential(x) * g[2:-2]


def _reduction_of_order(
    xi: np.ndarray, f: np.ndarray, K: np.ndarray, dK: np.ndarray, pot: np.ndarray, d: int
) -> RadialProfile:
    """Solve ``g'' + (d+1)/xi g' - 3(d-2) pot g = f`` regular at 0, given a kernel element ``K``."""
    if np.any(K == 0.0) or not np.all(np.isfinite(K)):
        raise SingularDivision("kernel element vanishes on the grid")
    inner = cumulative_integral(xi, f * K * xi ** (d + 1))
    du = inner / (xi ** (d + 1) * K * K)
    u = cumulative_integral(xi, du)
    g = K * u
    dg = dK * u + K * du
    d2g = f - (d + 1) / xi * dg + 3.0 * (d - 2) * pot * g
    return RadialProfile(xi, g, dg, d2g, origin_value=0.0, origin_d2=float(d2g[0]), origin_exponent=0.0)


def apply_H_inverse(gs: GroundState, f: Callable, xi: np.ndarray | None = None) -> RadialProfile:
    """``g = LambdaQ int_0^xi (1/(s^{d+1} LambdaQ^2)) int_0^s f LambdaQ t^{d+1}``, so that ``H g = f``."""
    if xi is None:
        xi = kernel_grid()
    Q, dQ, LQ, pot, dLQ = gs.evaluate_all(xi)
    fv = np.asarray(f(xi), dtype=float)
    return _reduction_of_order(xi, fv, LQ, dLQ, pot, gs.p.d)


@dataclass
class KernelFamily:
    """``T_0 = LambdaQ/a_0`` and ``T_{j+1} = H^{-1} T_j``."""

    gs: GroundState
    profiles: list
    C_hat: np.ndarray
    C_exact: np.ndarray
    fit_exponents: np.ndarray
    theta: list
    roundtrip: np.ndarray

    @property
    def j_max(self) -> int:
        return len(self.profiles) - 1

    def T(self, j: int, xi) -> np.ndarray:
        return self.profiles[j](xi)


def _fit_far_field(xi: np.ndarray, f: np.ndarray, exponent: float) -> tuple[float, float]:
    """Free log-log slope and fixed-exponent coefficient on the last decade."""
    win = xi >= xi[-1] / 10.0
    lx, lf = np.log(xi[win]), np.log(np.abs(f[win]))
    slope = np.polyfit(lx, lf, 1)[0]
    coef = float(np.sign(f[-1]) * np.exp(np.mean(lf - exponent * lx)))
    return float(slope), coef


def _weighted_roundtrip(gs: GroundState, xi: np.ndarray, g: np.ndarray, f: np.ndarray, j: int) -> float:
    x, Hg = apply_H_fd(gs, xi, g)
    w = x**gs.p.gamma / (1.0 + x ** (2 * j))
    fi = f[2:-2]
    return float(np.max(np.abs(Hg - fi) * w) / np.max(np.abs(fi) * w))


def build_kernel_family(gs: GroundState, j_max: int = 3, xi: np.ndarray | None = None) -> KernelFamily:
    if not (0 <= j_max <= J_MAX_LIMIT):
        raise DomainError(f"j_max must lie in 0..{J_MAX_LIMIT}")
    p = gs.p
    if xi is None:
        xi = kernel_grid()
    Q, dQ, LQ, pot, dLQ = gs.evaluate_all(xi)
    a0 = gs.a0
    d2LQ = 3.0 * (p.d - 2) * pot * LQ - (p.d + 1) / xi * dLQ
    T0 = RadialProfile(xi, LQ / a0, dLQ / a0, d2LQ / a0, origin_value=-2.0 / a0, origin_d2=float(d2LQ[0] / a0))
    profiles = [T0]
    roundtrip = []
    for j in range(j_max):
        prev = profiles[-1]
        nxt = _reduction_of_order(xi, prev.values, LQ, dLQ, pot, p.d)
        roundtrip.append(_weighted_roundtrip(gs, xi, nxt.values, prev.values, j))
        profiles.append(nxt)
    C_exact = make_coeff_table(p, max(j_max, 1)).C[: j_max + 1]
    C_hat = np.empty(j_max + 1)
    slopes = np.empty(j_max + 1)
    theta = []
    for j, prof in enumerate(profiles):
        slopes[j], C_hat[j] = _fit_far_field(xi, prof.values, 2 * j - p.gamma)
        lam_t = 2.0 * prof.values + xi * prof.d1
        theta.append(lam_t - (2 * j - p.alpha) * prof.values)
    return KernelFamily(gs, profiles, C_hat, np.asarray(C_exact), slopes, theta, np.asarray(roundtrip))


def scaled_ground_state(gs: GroundState, sigma: float) -> Callable:
    """``Q_sigma(xi) = Q(xi/sqrt(sigma))/sigma``."""
    s = np.sqrt(sigma)
    return lambda xi: gs.Q(np.asarray(xi, dtype=float) / s) / sigma


def scaled_ground_state_residual(gs: GroundState, sigma: float, lo: float = 0.1, hi: float = 100.0) -> float:
    """FD residual of the ground-state equation for ``Q_sigma``, relative to the largest term."""
    d = gs.p.d
    xi = geometric_grid(lo, hi, 160)
    q = scaled_ground_state(gs, sigma)(xi)
    d1, d2 = log_fd(xi, q)
    x, qi = xi[2:-2], q[2:-2]
    terms = (d2, (d + 1) / x * d1, -3.0 * (d - 2) * qi**2, -(d - 2) * x**2 * qi**3)
    return float(np.max(np.abs(sum(terms)) / sum(np.abs(t) for t in terms)))


def barrier_profiles(gs_sigma: GroundState, sigma: float, xi: np.ndarray | None = None) -> tuple[RadialProfile, RadialProfile]:
    """``H_0 = Lambda Q_sigma`` and ``H_1 = H_0 int_0^xi L(T)/H_0`` with ``T = -Lambda Q``.

    ``H_1`` solves ``H_sigma H_1 = T`` with ``H_sigma`` the operator linearized at ``Q_sigma``.
    """
    if not (0.0 < sigma < 1.0) and sigma != 1.0:
        raise DomainError("sigma must lie in (0, 1]")
    gs = gs_sigma
    d = gs.p.d
    if xi is None:
        xi = kernel_grid()
    s = np.sqrt(sigma)
    z = xi / s
    _, _, LQz, potz, dLQz = gs.evaluate_all(z)
    H0 = LQz / sigma
    dH0 = dLQz / (sigma * s)
    pot_sigma = potz / sigma
    d2H0 = 3.0 * (d - 2) * pot_sigma * H0 - (d + 1) / xi * dH0
    H0p = RadialProfile(xi, H0, dH0, d2H0, origin_value=-2.0 / sigma, origin_d2=float(d2H0[0]))
    T = -gs.LambdaQ(xi)
    H1p = _reduction_of_order(xi, T, H0, dH0, pot_sigma, d)
    return H0p, H1p


def barrier_far_field(gs: GroundState) -> float:
    """Leading coefficient of ``H_1 ~ c xi^{2-gamma}``: ``-a_0 / (2 (d + 2 - 2 gamma))``."""
    p = gs.p
    return -gs.a0 / (2.0 * (p.d + 2 - 2.0 * p.gamma))
