"""Eigenpairs of the time-frozen linearized operator ``L_b``.

Two independent routes: interior/exterior shooting with matching at ``y0``,
and shift-invert iteration on the weighted finite-volume matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from .discrete import (
    RadialGrid,
    WeightedGrid,
    discrete_Lb,
    make_radial_grid,
    refine,
    sturm_count,
    weighted_grid,
)
from .errors import BranchContamination, DomainError, NoRootInBracket, SeriesSeedFailure
from .ground_state import GroundState
from .kernel import KernelFamily
from .profiles import RadialProfile, geometric_grid
from .spectrum import SpectralBasis
from .weighted import WeightContext, fine_rule

RTOL = 1e-12
XI_SEED = 1e-3
Y0_DEFAULT = 0.1
YMAX_DEFAULT = 14.0
# log-derivative drift allowed when Ymax grows by BRANCH_PROBE
BRANCH_TOL = 1e-8
BRANCH_PROBE = 4.0


@dataclass
class EigenResult:
    i: int
    b: float
    beta: float
    lam: float
    lambda_tilde: float
    profile: RadialProfile | None
    match_residual: float
    method: str
    diagnostics: dict = field(default_factory=dict)


class FastPotential:
    """Scalar ``2Q + xi^2 Q^2`` from a cubic Hermite table in ``x = ln xi``.

    Built once from the vectorized ground-state evaluator; used inside ODE
    right-hand sides where per-call overhead dominates.
    """

    X_LO = -10.0
    X_HI = 19.0
    # knot spacing keeps C1 kinks below the inward-integration noise floor
    H = 0.0005

    def __init__(self, gs: GroundState) -> None:
        import math

        self._log = math.log
        self.gs = gs
        x = np.arange(self.X_LO, self.X_HI + self.H, self.H)
        xi = np.exp(x)
        Q, dQ, _, pot, _ = gs.evaluate_all(xi)
        dpot_dx = xi * (2.0 * dQ + 2.0 * xi * Q * Q + 2.0 * xi * xi * Q * dQ)
        self.f = pot.tolist()
        self.df = (dpot_dx * self.H).tolist()
        self.n = x.size

    def __call__(self, xi: float) -> float:
        x = self._log(xi)
        t = (x - self.X_LO) / self.H
        k = int(t)
        if k < 0 or k >= self.n - 1:
            return float(self.gs.potential(np.array([xi]))[0])
        t -= k
        t2 = t * t
        t3 = t2 * t
        return (
            (2 * t3 - 3 * t2 + 1) * self.f[k]
            + (t3 - 2 * t2 + t) * self.df[k]
            + (-2 * t3 + 3 * t2) * self.f[k + 1]
            + (t3 - t2) * self.df[k + 1]
        )


_FAST_CACHE: dict = {}


def fast_potential(gs: GroundState) -> FastPotential:
    key = id(gs)
    hit = _FAST_CACHE.get(key)
    if hit is None or hit.gs is not gs:
        hit = FastPotential(gs)
        _FAST_CACHE.clear()
        _FAST_CACHE[key] = hit
    return hit


def limit_eigenvalue(p, beta: float, i: int) -> float:
    return 2.0 * beta * (0.5 * p.alpha - i)


def _interior_rhs(gs: GroundState, b: float, beta: float, lam: float):
    d = gs.p.d
    potential = fast_potential(gs)

    def f(xi, s):
        pot = potential(xi)
        phi, dphi = s
        dd = -(d + 1) / xi * dphi + 3.0 * (d - 2) * pot * phi + b * beta * (2.0 * phi + xi * dphi) + b * lam * phi
        return [dphi, dd]

    return f


def interior_seed_coefficient(gs: GroundState, b: float, beta: float, lam: float) -> float:
    """``p_1`` in ``phi = phi(0) (1 + p_1 xi^2 + ...)``."""
    d = gs.p.d
    return -(6.0 * (d - 2) - 2.0 * b * beta - b * lam) / (2.0 * (d + 2))


def solve_interior(
    kf: KernelFamily, i: int, b: float, beta: float, lambda_guess: float, xi0: float, n_out: int = 200
) -> RadialProfile:
    """Regular solution on ``[0, xi0]`` in the bubble variable, sampled in ``y = sqrt(b) xi``.

    Scaled so that ``phi(0) = c_{i,0} b^{-gamma/2} T_0(0)``.
    """
    gs = kf.gs
    p = gs.p
    if xi0 <= XI_SEED:
        raise DomainError("xi0 must exceed the series seed point")
    p1 = interior_seed_coefficient(gs, b, beta, lambda_guess)
    if abs(p1) * XI_SEED**2 > 1e-4:
        raise SeriesSeedFailure("series seed step too large for the regular branch")
    from .constants import make_coeff_table

    c_i0 = make_coeff_table(p, max(i, 1)).c[i, 0]
    phi0 = c_i0 * b ** (-0.5 * p.gamma) * kf.profiles[0].origin_value
    s0 = [phi0 * (1.0 + p1 * XI_SEED**2), phi0 * 2.0 * p1 * XI_SEED]
    xs = geometric_grid(XI_SEED, xi0, max(20, int(n_out / max(1.0, np.log10(xi0 / XI_SEED)))))
    sol = solve_ivp(
        _interior_rhs(gs, b, beta, lambda_guess), (XI_SEED, xi0), s0, method="DOP853",
        rtol=RTOL, atol=1e-300, t_eval=xs,
    )
    if sol.status != 0:
        raise SeriesSeedFailure(f"interior integration failed: {sol.message}")
    phi, dphi = sol.y
    pot = gs.potential(xs)
    d = p.d
    d2 = -(d + 1) / xs * dphi + 3.0 * (d - 2) * pot * phi + b * beta * (2.0 * phi + xs * dphi) + b * lambda_guess * phi
    sb = np.sqrt(b)
    return RadialProfile(
        xs * sb, phi, dphi / sb, d2 / b, origin_value=phi0, origin_d2=2.0 * p1 * phi0 / b, origin_exponent=0.0
    )


def _exterior_rhs(gs: GroundState, b: float, beta: float, lam: float):
    d = gs.p.d
    sb = float(np.sqrt(b))
    if b == 0.0:
        # 2 Q_b + y^2 Q_b^2 -> -1/y^2 as b -> 0
        potential = lambda y: -1.0 / (y * y)
        sb = b = 1.0
    else:
        potential = fast_potential(gs)

    def f(y, s):
        pot = potential(y / sb) / b
        phi, dphi = s
        dd = -(d + 1) / y * dphi + 3.0 * (d - 2) * pot * phi + beta * (2.0 * phi + y * dphi) + lam * phi
        return [dphi, dd]

    return f


def _exterior_seed(p, beta: float, lam: float, i: int, y: float, two_beta_i: float) -> list[float]:
    e = -2.0 - lam / beta
    c = -(e * e + p.d * e + 3.0 * (p.d - 2)) / (2.0 * beta)
    f = two_beta_i * y**e * (1.0 + c / y**2)
    df = two_beta_i * (e * y ** (e - 1.0) + c * (e - 2.0) * y ** (e - 3.0))
    return [f, df]


def _integrate_exterior(gs, beta, lam, i, b, y0, y_max, ys=None):
    seed = _exterior_seed(gs.p, beta, lam, i, y_max, (2.0 * beta) ** i)
    return solve_ivp(
        _exterior_rhs(gs, b, beta, lam), (y_max, y0), seed, method="DOP853",
        rtol=RTOL, atol=1e-300, t_eval=ys,
    )


def solve_exterior(
    gs: GroundState, basis: SpectralBasis, i: int, b: float, beta: float, lambda_guess: float,
    y0: float = Y0_DEFAULT, Ymax: float = YMAX_DEFAULT, n_out: int = 400, check_branch: bool = True,
) -> RadialProfile:
    """Polynomially behaved solution on ``[y0, Ymax]``, integrated inward from ``Ymax``; ``b = 0`` is the limit operator."""
    if not (0.0 < y0 < Ymax):
        raise DomainError("need 0 < y0 < Ymax")
    if b < 0.0:
        raise DomainError("b must be non-negative")
    ys = np.concatenate([geometric_grid(y0, 1.0, n_out // 2), np.linspace(1.0, Ymax, n_out // 2)[1:]])[::-1]
    sol = _integrate_exterior(gs, beta, lambda_guess, i, b, y0, Ymax, ys)
    if sol.status != 0:
        raise BranchContamination(f"exterior integration failed: {sol.message}")
    y = sol.t[::-1]
    phi, dphi = sol.y[0][::-1], sol.y[1][::-1]
    if check_branch:
        alt = _integrate_exterior(gs, beta, lambda_guess, i, b, y0, Ymax + BRANCH_PROBE)
        ld_a = y0 * dphi[0] / phi[0]
        ld_b = y0 * alt.y[1][-1] / alt.y[0][-1]
        if abs(ld_a - ld_b) > BRANCH_TOL * max(1.0, abs(ld_a)):
            raise BranchContamination(f"log-derivative drifts by {abs(ld_a - ld_b):.2e} with Ymax")
    d = gs.p.d
    pot = -1.0 / y**2 if b == 0.0 else gs.potential(y / np.sqrt(b)) / b
    d2 = -(d + 1) / y * dphi + 3.0 * (d - 2) * pot * phi + beta * (2.0 * phi + y * dphi) + lambda_guess * phi
    return RadialProfile(y, phi, dphi, d2, origin_exponent=2 * i - gs.p.gamma)


def _endpoint_interior(gs, b, beta, lam, xi0):
    p1 = interior_seed_coefficient(gs, b, beta, lam)
    s0 = [1.0 + p1 * XI_SEED**2, 2.0 * p1 * XI_SEED]
    sol = solve_ivp(_interior_rhs(gs, b, beta, lam), (XI_SEED, xi0), s0, method="DOP853", rtol=RTOL, atol=1e-300)
    return sol.y[0][-1], sol.y[1][-1] / np.sqrt(b)


def _endpoint_exterior(gs, b, beta, lam, i, y0, y_max):
    sol = _integrate_exterior(gs, beta, lam, i, b, y0, y_max)
    return sol.y[0][-1], sol.y[1][-1]


def matching_function(gs: GroundState, i: int, b: float, beta: float, lam: float, y0: float, Ymax: float) -> tuple[float, float]:
    """``(sin(theta_int - theta_ext), log-derivative difference)`` at ``y0``.

    ``theta = atan2(y0 phi', phi)``; the sine is a normalized Wronskian and has
    no poles, so it is the bracketed root function.
    """
    fi, dfi = _endpoint_interior(gs, b, beta, lam, y0 / np.sqrt(b))
    fe, dfe = _endpoint_exterior(gs, b, beta, lam, i, y0, Ymax)
    ui = np.array([fi, y0 * dfi])
    ue = np.array([fe, y0 * dfe])
    s = (ui[0] * ue[1] - ui[1] * ue[0]) / (np.linalg.norm(ui) * np.linalg.norm(ue))
    logdiff = y0 * (dfi / fi - dfe / fe)
    return float(s), float(logdiff)


def match_eigenvalue(
    kf: KernelFamily, basis: SpectralBasis, i: int, b: float, beta: float | None = None,
    y0: float = Y0_DEFAULT, Ymax: float = YMAX_DEFAULT, xtol: float = 1e-16, with_profile: bool = True,
) -> EigenResult:
    """Root of the matching function in ``lambda_tilde`` with ``|lambda_tilde| <= beta``."""
    gs = kf.gs
    beta = basis.beta if beta is None else beta
    if b <= 0.0:
        raise DomainError("b must be positive")
    lam_inf = limit_eigenvalue(gs.p, beta, i)

    def F(lt: float) -> float:
        return matching_function(gs, i, b, beta, lam_inf + lt, y0, Ymax)[0]

    half = 0.5 * 2.0 * beta
    lo, hi = -half, half
    f_lo, f_hi = F(lo), F(hi)
    if f_lo * f_hi > 0.0:
        raise NoRootInBracket(f"matching function keeps its sign on [{lo:.3f}, {hi:.3f}]")
    lt = brentq(F, lo, hi, xtol=xtol, rtol=4 * np.finfo(float).eps, maxiter=200)
    lam = lam_inf + lt
    sres, logdiff = matching_function(gs, i, b, beta, lam, y0, Ymax)
    profile = None
    if with_profile:
        profile = eigen_profile(kf, basis, i, b, beta, lam, y0, Ymax)
    return EigenResult(
        i, b, beta, lam, lt, profile, abs(logdiff), "shooting",
        {"y0": y0, "Ymax": Ymax, "sine_residual": abs(sres)},
    )


def eigen_profile(kf: KernelFamily, basis: SpectralBasis, i: int, b: float, beta: float, lam: float,
                  y0: float, Ymax: float) -> RadialProfile:
    """Interior piece on ``(0, y0]`` joined to the rescaled exterior piece on ``[y0, Ymax]``."""
    inner = solve_interior(kf, i, b, beta, lam, y0 / np.sqrt(b))
    outer = solve_exterior(kf.gs, basis, i, b, beta, lam, y0, Ymax, check_branch=False)
    k = inner.values[-1] / outer.values[0]
    grid = np.concatenate([inner.grid, outer.grid[1:]])
    vals = np.concatenate([inner.values, k * outer.values[1:]])
    d1 = np.concatenate([inner.d1, k * outer.d1[1:]])
    d2 = np.concatenate([inner.d2, k * outer.d2[1:]])
    return RadialProfile(grid, vals, d1, d2, inner.origin_value, inner.origin_d2, 0.0)


# ---------------------------------------------------------------------------
# matrix route


@dataclass
class DiscreteModes:
    """Discrete eigenpairs of ``L_b``; vectors normalized by ``<phi_b, phi_inf> = ||phi_inf||^2``."""

    lam: np.ndarray
    vectors: np.ndarray
    wg: WeightedGrid
    b: float


def _inverse_iteration(Lb, shift: float, v0: np.ndarray, iters: int = 60, tol: float = 1e-14) -> tuple[float, np.ndarray]:
    v = v0 / np.sqrt(Lb.wg.norm_sq(v0))
    lam = Lb.rayleigh(v)
    for _ in range(iters):
        w = Lb.solve_shifted(shift, v)
        w /= np.sqrt(Lb.wg.norm_sq(w))
        if Lb.wg.dot(w, v) < 0:
            w = -w
        lam_new = Lb.rayleigh(w)
        diff = np.sqrt(Lb.wg.norm_sq(w - v))
        v, lam_old, lam = w, lam, lam_new
        if diff < tol or abs(lam - lam_old) < tol * max(1.0, abs(lam)):
            break
    return lam, v


def discrete_modes(gs: GroundState, wg: WeightedGrid, b: float, n_modes: int, basis_funcs=None) -> DiscreteModes:
    """Modes ``0..n_modes-1`` by shift-invert iteration at the limit eigenvalues."""
    p, beta = gs.p, wg.beta
    Lb = discrete_Lb(gs, wg, b)
    y = wg.grid.y
    lams = np.empty(n_modes)
    vecs = np.empty((n_modes, y.size))
    for j in range(n_modes):
        if basis_funcs is not None:
            ref = basis_funcs[j](y)
        else:
            from .constants import make_coeff_table

            a = make_coeff_table(p, max(j, 1)).a
            ref = sum(a[j, k] * (2 * beta) ** k * y ** (2 * k - p.gamma) for k in range(j + 1))
        # regularize the singular reference inside the bubble for the start vector
        start = np.where(y > 4.0 * np.sqrt(b), ref, ref[np.searchsorted(y, 4.0 * np.sqrt(b))])
        shift = limit_eigenvalue(p, beta, j)
        lam, v = _inverse_iteration(Lb, shift, start)
        v = v * wg.dot(ref, ref) / wg.dot(v, ref)
        lams[j], vecs[j] = lam, v
    return DiscreteModes(lams, vecs, wg, b)


def sign_changes(v: np.ndarray) -> int:
    s = v[v != 0.0]
    return int(np.sum(s[1:] * s[:-1] < 0))


def matrix_eigensolve(
    gs: GroundState, ctx: WeightContext, b: float, n_modes: int, grid: RadialGrid | None = None,
) -> list[EigenResult]:
    """Top ``n_modes`` eigenvalues of the discretized ``L_b``, descending, with a grid-doubling error estimate."""
    if grid is None:
        grid = make_radial_grid(1e-4 * min(1.0, np.sqrt(b) / 1e-2), YMAX_DEFAULT, 1200)
    if grid.n < 2000:
        raise DomainError("matrix oracle needs at least 2000 grid points")
    p, beta = gs.p, ctx.beta
    coarse = discrete_modes(gs, weighted_grid(grid, p, beta), b, n_modes)
    fine_g = refine(grid)
    fine = discrete_modes(gs, weighted_grid(fine_g, p, beta), b, n_modes)
    Lb = discrete_Lb(gs, weighted_grid(fine_g, p, beta), b)
    diag, off = Lb.symmetric_bands()
    out = []
    for j in range(n_modes):
        lam_inf = limit_eigenvalue(p, beta, j)
        err = abs(coarse.lam[j] - fine.lam[j]) / 3.0
        lam = fine.lam[j] + (fine.lam[j] - coarse.lam[j]) / 3.0
        above = fine_g.n - sturm_count(diag, off, fine.lam[j] - 0.5 * beta)
        out.append(
            EigenResult(
                j, b, beta, lam, lam - lam_inf, None, err, "matrix",
                {
                    "lam_grid": float(coarse.lam[j]),
                    "lam_refined": float(fine.lam[j]),
                    "error_estimate": float(err),
                    "sign_changes": sign_changes(fine.vectors[j]),
                    "count_above": int(above),
                    "n_points": int(fine_g.n),
                },
            )
        )
    return out


# ---------------------------------------------------------------------------
# m0


def compute_m0(kf: KernelFamily, basis: SpectralBasis, b: float, beta: float | None = None,
               y0: float = Y0_DEFAULT) -> dict:
    """``m0(b) = <(1/(2b)) LambdaQ(y/sqrt b), phi_{0,b}> / (b^{alpha/2} ||phi_{0,b}||^2)``."""
    gs = kf.gs
    p = gs.p
    beta = basis.beta if beta is None else beta
    res = match_eigenvalue(kf, basis, 0, b, beta, y0)
    phi = res.profile
    rule = fine_rule(p, beta)
    y = rule.nodes
    f = gs.LambdaQ(y / np.sqrt(b)) / (2.0 * b)
    ph = phi(y)
    num = rule.integrate(f * ph)
    den = rule.integrate(ph * ph)
    return {"b": b, "m0": num / (b ** (0.5 * p.alpha) * den), "lambda_tilde": res.lambda_tilde}
