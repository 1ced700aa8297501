"""Ground state of the stationary radial equation.

Q solves ``Q'' + (d+1)/xi Q' - 3(d-2) Q**2 - (d-2) xi**2 Q**3 = 0`` with
``Q(0) = -1``, ``Q'(0) = 0``. With ``v = -xi**2 Q`` and ``x = ln xi`` this
becomes the autonomous equation ``v'' + (d-4) v' - (d-2) v (v-1) (v-2) = 0``,
whose heteroclinic orbit runs from ``v = 0`` to ``v = 1``. The orbit is
integrated in ``v`` while ``v`` is small and in ``eps = v - 1`` afterwards, so
that the relative error control of the integrator acts on the small quantity
in each phase.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import BPoly

from .constants import DimensionParams
from .errors import DomainError, NumericalFailure, TrappingViolation
from .profiles import RadialProfile, geometric_grid

V_SEED = 1e-8
V_SWITCH = 0.5
XI_GRID_MIN = 1e-3
XI_EVAL_MAX = 1e6
POINTS_PER_DECADE = 40
DENSE_PER_DECADE = 400
# caps the dense-output interpolation error of the integrator
MAX_STEP = 0.05


def taylor_coefficients_at_origin(p: DimensionParams, order: int = 6) -> np.ndarray:
    """Coefficients ``a_k`` of ``Q = sum_k a_k xi**(2k)``, ``k = 0..order``."""
    if order < 0 or order > 6:
        raise DomainError("order must lie in [0, 6]")
    d = p.d
    a = np.zeros(order + 1)
    a[0] = -1.0
    for k in range(1, order + 1):
        q2 = sum(a[i] * a[k - 1 - i] for i in range(k))
        q3 = 0.0
        if k >= 2:
            for i in range(k - 1):
                for j in range(k - 1 - i):
                    q3 += a[i] * a[j] * a[k - 2 - i - j]
        a[k] = (3.0 * (d - 2) * q2 + (d - 2) * q3) / (2.0 * k * (2.0 * k + d))
    return a


def check_trapping_region(p: DimensionParams, samples: int = 200) -> dict:
    """Inward flux of the phase-plane field on both boundary curves.

    The lower curve is ``eps' = eps**3 - eps`` and the upper curve is
    ``eps' = 2 (eps**3 - eps)`` for ``eps`` in (-1, 0).
    """
    eps = np.linspace(-1.0, 0.0, samples + 2)[1:-1]
    cub = eps**3 - eps
    lower = cub * 3.0 * (1.0 - eps**2)
    upper = cub * (12.0 * eps**2 + p.d - 10)
    return {
        "eps": eps,
        "lower_flux": lower,
        "upper_flux": upper,
        "min_lower": float(lower.min()),
        "min_upper": float(upper.min()),
        "inward": bool(lower.min() > 0.0 and upper.min() > 0.0),
    }


def _series_state(p: DimensionParams, xi: float) -> tuple[float, float]:
    """``(v, dv/dx)`` from the origin series at ``xi``."""
    a = taylor_coefficients_at_origin(p, 6)
    k = np.arange(a.size)
    terms = -a * xi ** (2 * k + 2)
    return float(terms.sum()), float(((2 * k + 2) * terms).sum())


def _cubic(u: np.ndarray, shift: float) -> np.ndarray:
    """``v (v-1) (v-2)`` for ``v = u + shift``, written without cancellation in ``u``."""
    if shift == 0.0:
        return u * (u - 1.0) * (u - 2.0)
    return u * u * u - u


def _rhs(d: int, shift: float):
    # state (u, u') with v = u + shift, shift in {0, 1}
    def f(_x, s):
        return [s[1], -(d - 4) * s[1] + (d - 2) * _cubic(s[0], shift)]

    return f


@dataclass
class GroundState:
    """Ground state samples, far-field constants and a fast evaluator."""

    p: DimensionParams
    profile: RadialProfile
    lambda_profile: RadialProfile
    q0: float
    a0: float
    h_plus: float
    diagnostics: dict = field(default_factory=dict)
    _eval: "_Evaluator | None" = field(default=None, repr=False)

    def Q(self, xi) -> np.ndarray:
        return self._eval.values(np.asarray(xi, dtype=float))[0]

    def dQ(self, xi) -> np.ndarray:
        return self._eval.values(np.asarray(xi, dtype=float))[1]

    def LambdaQ(self, xi) -> np.ndarray:
        return self._eval.values(np.asarray(xi, dtype=float))[2]

    def potential(self, xi) -> np.ndarray:
        """``2 Q + xi**2 Q**2``."""
        return self._eval.values(np.asarray(xi, dtype=float))[3]

    def evaluate_all(self, xi) -> tuple[np.ndarray, ...]:
        """``(Q, Q', Lambda Q, 2Q + xi^2 Q^2, (Lambda Q)')`` at ``xi``."""
        return self._eval.values(np.asarray(xi, dtype=float))

    @property
    def xi_seed(self) -> float:
        return self._eval.xi_seed


class _Evaluator:
    """Piecewise quintic Hermite interpolation of the orbit in ``x = ln xi``.

    Phase one interpolates ``v``, phase two ``eps = v - 1``, each from value,
    first and second derivative so that second differences stay accurate.
    """

    def __init__(self, p, xs1, u1, du1, ddu1, xs2, u2, du2, ddu2, taylor):
        self.p = p
        self.x_switch = xs2[0]
        self.xi_seed = float(np.exp(xs1[0]))
        self.x_lo = xs1[0]
        self.x_hi = xs2[-1]
        self.s1 = BPoly.from_derivatives(xs1, np.column_stack([u1, du1, ddu1]))
        self.ds1 = self.s1.derivative()
        self.s2 = BPoly.from_derivatives(xs2, np.column_stack([u2, du2, ddu2]))
        self.ds2 = self.s2.derivative()
        self.taylor = taylor
        self.eps_end = u2[-1]
        self.deps_end = du2[-1]

    def orbit(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(v, eps, v')`` at log-radius ``x``; the smaller of v, |eps| is accurate."""
        v = np.empty_like(x)
        eps = np.empty_like(x)
        dv = np.empty_like(x)
        m1 = x < self.x_switch
        m3 = x > self.x_hi
        m2 = ~m1 & ~m3
        if np.any(m1):
            v[m1] = self.s1(x[m1])
            dv[m1] = self.ds1(x[m1])
            eps[m1] = v[m1] - 1.0
        if np.any(m2):
            eps[m2] = self.s2(x[m2])
            dv[m2] = self.ds2(x[m2])
            v[m2] = 1.0 + eps[m2]
        if np.any(m3):
            lam = self.p.lambda1
            eps[m3] = self.eps_end * np.exp(lam * (x[m3] - self.x_hi))
            dv[m3] = lam * eps[m3]
            v[m3] = 1.0 + eps[m3]
        return v, eps, dv

    def values(self, xi: np.ndarray):
        xi = np.atleast_1d(xi).astype(float)
        shape = xi.shape
        xi = xi.ravel()
        Q = np.empty_like(xi)
        dQ = np.empty_like(xi)
        LQ = np.empty_like(xi)
        pot = np.empty_like(xi)
        dLQ = np.empty_like(xi)
        small = xi < self.xi_seed
        if np.any(small):
            a = self.taylor
            z = xi[small]
            z2 = z * z
            k = np.arange(a.size)
            pw = z2[:, None] ** k[None, :]
            Q[small] = pw @ a
            dQ[small] = (pw * (2 * k)[None, :]) @ a / np.where(z > 0, z, 1.0)
            dQ[small] = np.where(z > 0, dQ[small], 0.0)
            lam_coef = a * (2.0 + 2.0 * k)
            LQ[small] = pw @ lam_coef
            dLQ[small] = np.where(z > 0, (pw * (2 * k)[None, :]) @ lam_coef / np.where(z > 0, z, 1.0), 0.0)
            pot[small] = 2.0 * Q[small] + z2 * Q[small] ** 2
        big = ~small
        if np.any(big):
            z = xi[big]
            x = np.log(z)
            v, eps, dv = self.orbit(x)
            d = self.p.d
            ddv = -(d - 4) * dv + (d - 2) * v * eps * (eps - 1.0)
            e2 = 1.0 / (z * z)
            Q[big] = -v * e2
            dQ[big] = -(dv - 2.0 * v) * e2 / z
            LQ[big] = -dv * e2
            dLQ[big] = -(ddv - 2.0 * dv) * e2 / z
            # 2Q + xi^2 Q^2 = Q (2 - v)
            pot[big] = Q[big] * (1.0 - eps)
        return tuple(arr.reshape(shape) for arr in (Q, dQ, LQ, pot, dLQ))


def _check_trap(eps: np.ndarray, deps: np.ndarray, slack: float) -> None:
    inside = (eps > -1.0) & (eps < 0.0)
    cub = eps[inside] ** 3 - eps[inside]
    de = deps[inside]
    tol = slack * np.abs(cub) + 1e-300
    bad_lo = de < cub - tol
    bad_hi = de > 2.0 * cub + tol
    if np.any(bad_lo) or np.any(bad_hi):
        k = int(np.flatnonzero(bad_lo | bad_hi)[0])
        raise TrappingViolation(
            f"orbit left trapping set at eps={eps[inside][k]:.6g}, eps'={de[k]:.6g}"
        )
    if np.any(eps >= 0.0) or np.any(eps <= -1.0):
        raise TrappingViolation("orbit left the strip -1 < eps < 0")


def _fit_power(xi: np.ndarray, f: np.ndarray, exponent: float, gap: float) -> dict:
    """Fit ``f ~ C xi**(-s)`` on positive samples.

    ``coef_fixed`` is ``C`` from ``f = C xi**-exponent + D xi**-(exponent+gap)``.
    """
    lx = np.log(xi)
    lf = np.log(f)
    A = np.vstack([np.ones_like(lx), -lx]).T
    coef, *_ = np.linalg.lstsq(A, lf, rcond=None)
    pred = A @ coef
    ss_res = float(np.sum((lf - pred) ** 2))
    ss_tot = float(np.sum((lf - lf.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    B = np.vstack([xi ** (-exponent), xi ** (-(exponent + gap))]).T
    scale = xi ** exponent
    two, *_ = np.linalg.lstsq(B * scale[:, None], f * scale, rcond=None)
    fixed = float(two[0])
    return {"coef_free": float(np.exp(coef[0])), "exponent": float(coef[1]), "r2": r2, "coef_fixed": fixed}


def solve_ground_state(p: DimensionParams, xi_max: float = 1e3, tol: float = 1e-8) -> GroundState:
    if xi_max < 1e2:
        raise DomainError("xi_max must be at least 1e2")
    if not (1e-12 < tol < 1e-4):
        raise DomainError("tol must lie in (1e-12, 1e-4)")
    d = p.d
    rtol = min(1e-10, tol)
    atol = 1e-300
    taylor = taylor_coefficients_at_origin(p, 6)

    # seed where the series gives v ~ V_SEED
    xi_s = float(np.sqrt(V_SEED))
    v_s, dv_s = _series_state(p, xi_s)
    x_s = float(np.log(xi_s))
    x_end = float(np.log(max(xi_max, XI_EVAL_MAX)))

    def hit_switch(_x, s):
        return s[0] - V_SWITCH

    hit_switch.terminal = True
    hit_switch.direction = 1
    sol1 = solve_ivp(
        _rhs(d, 0.0), (x_s, x_end), [v_s, dv_s], method="DOP853",
        rtol=rtol, atol=atol, dense_output=True, max_step=MAX_STEP, events=hit_switch,
    )
    if sol1.status != 1 or sol1.t_events[0].size == 0:
        raise NumericalFailure("orbit did not reach v = 1/2")
    x_sw = float(sol1.t_events[0][0])
    y_sw = sol1.y_events[0][0]
    sol2 = solve_ivp(
        _rhs(d, 1.0), (x_sw, x_end), [y_sw[0] - 1.0, y_sw[1]], method="DOP853",
        rtol=rtol, atol=atol, dense_output=True, max_step=MAX_STEP,
    )
    if sol2.status != 0:
        raise NumericalFailure(f"orbit integration failed: {sol2.message}")

    # d = 10 is asymptotically tangent to the upper curve; slack covers accumulated rtol
    slack = max(1e4 * rtol, 1e-9)
    _check_trap(sol1.y[0] - 1.0, sol1.y[1], slack)
    _check_trap(sol2.y[0], sol2.y[1], slack)

    def dense(sol, shift, lo, hi):
        n = max(int(np.ceil(DENSE_PER_DECADE * (hi - lo) / np.log(10.0))), 8)
        xs = np.linspace(lo, hi, n + 1)
        u, du = sol.sol(xs)
        ddu = -(d - 4) * du + (d - 2) * _cubic(u, shift)
        return xs, u, du, ddu

    ev = _Evaluator(p, *dense(sol1, 0.0, x_s, x_sw), *dense(sol2, 1.0, x_sw, x_end), taylor)

    grid = geometric_grid(XI_GRID_MIN, xi_max, POINTS_PER_DECADE)
    x = np.log(grid)
    v, eps, dv = ev.orbit(x)
    ddv = -(d - 4) * dv + (d - 2) * v * eps * (eps - 1.0)
    dddv = -(d - 4) * ddv + (d - 2) * (3.0 * v * v - 6.0 * v + 2.0) * dv
    e2 = grid**-2.0
    Q = -v * e2
    dQ = -(dv - 2.0 * v) * e2 / grid
    d2Q = -(ddv - 5.0 * dv + 6.0 * v) * e2 * e2
    LQ = -dv * e2
    dLQ = -(ddv - 2.0 * dv) * e2 / grid
    d2LQ = -(dddv - 5.0 * ddv + 6.0 * dv) * e2 * e2

    residual = d2Q + (d + 1) / grid * dQ - 3.0 * (d - 2) * Q**2 - (d - 2) * grid**2 * Q**3
    res_scaled = float(np.max(np.abs(residual) * (1.0 + grid**2)))
    if res_scaled > tol:
        raise NumericalFailure(f"ground-state residual {res_scaled:.3e} exceeds tol {tol:.1e}")

    a1 = taylor[1]
    profile = RadialProfile(grid, Q, dQ, d2Q, origin_value=-1.0, origin_d2=2.0 * a1)
    lambda_profile = RadialProfile(grid, LQ, dLQ, d2LQ, origin_value=-2.0, origin_d2=8.0 * a1)

    win = grid >= xi_max / 10.0
    fit_q = _fit_power(grid[win], -eps[win], p.alpha, p.omega)
    fit_a = _fit_power(grid[win], -LQ[win], p.gamma, p.omega)
    q0 = fit_q["coef_fixed"]
    a0 = -fit_a["coef_fixed"]
    gamma_from_q = fit_q["exponent"] + 2.0
    gamma_from_a = fit_a["exponent"]
    for name, g_fit in (("Q", gamma_from_q), ("LambdaQ", gamma_from_a)):
        if abs(g_fit - p.gamma) > 0.02 * p.gamma:
            raise NumericalFailure(f"{name} far-field exponent {g_fit:.5f} not within 2% of gamma")
    diagnostics = {
        "fit_window": [float(xi_max / 10.0), float(xi_max)],
        "q0_fit_exponent": gamma_from_q,
        "q0_free_coef": fit_q["coef_free"],
        "q0_r2": fit_q["r2"],
        "a0_fit_exponent": gamma_from_a,
        "a0_free_coef": -fit_a["coef_free"],
        "a0_r2": fit_a["r2"],
        "residual_scaled_max": res_scaled,
        "x_switch": x_sw,
        "xi_seed": xi_s,
        "rtol": rtol,
    }
    return GroundState(
        p=p,
        profile=profile,
        lambda_profile=lambda_profile,
        q0=q0,
        a0=a0,
        h_plus=a0 / p.alpha,
        diagnostics=diagnostics,
        _eval=ev,
    )
