"""Modulated similarity-variable flow for ``w = Q_b + eps``.

``w`` solves ``w_tau = w'' + (d+1)/y w' - beta (2 w + y w') + N(w)`` with
``N(w) = -3(d-2) w^2 - (d-2) y^2 w^3`` on the weighted finite-volume grid of
``discrete``. After every accepted step the parameters are re-projected:

* ``ell = 1``: ``(b, beta)`` solve ``c_{1,0} P_1 + P_0 = 0`` and
  ``c_{1,0} P_1 + (2/alpha) m0 b^{alpha/2} = 0``;
* ``ell >= 2``: ``beta = 1/2`` and ``b`` solves ``c_{ell,0} P_ell + P_0 = 0``;

where ``P_j = <eps, phi_j>/||phi_j||^2`` uses the discrete eigenvectors
``phi_{j,b,beta}`` of the same discrete ``L_b``, normalized so that
``<phi_j, phi_j^inf> = ||phi_j^inf||^2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.linalg import solve_banded

from .constants import DimensionParams, make_coeff_table
from .discrete import DiscreteLb, RadialGrid, WeightedGrid, make_radial_grid, weighted_grid
from .errors import (
    BlowupEscape,
    ConstraintInsoluble,
    DomainError,
    InsufficientDecay,
    JacobianSingular,
    NumericalFailure,
)
from .ground_state import GroundState

NEWTON_TOL = 1e-10
NEWTON_MAX_ITER = 12
CHORD_CONTRACTION = 0.1
FD_REL = 1e-6
STEP_TOL = 1e-7
DTAU_MIN = 1e-10
DTAU_MAX = 0.05
# roundoff floor of the normalized shift-invert iterate is about 5e-14
MODE_TOL = 1e-12
BETA_LO, BETA_HI = 0.25, 0.75
ESCAPE_FACTOR = 10.0

TRAPPED = "TRAPPED"
ESCAPED = "ESCAPED"
NUMERICAL_FAILURE = "NUMERICAL_FAILURE"


class ProjectionFailure(JacobianSingular):
    """Modulation Newton did not reach its tolerance."""


@dataclass(frozen=True)
class ShrinkParams:
    A: float = 30.0
    eta: float = 0.05
    eta_tilde: float = 0.005
    delta: float = 0.2

    def __post_init__(self) -> None:
        if min(self.A, self.eta, self.eta_tilde, self.delta) <= 0.0:
            raise DomainError("shrink parameters must be positive")
        if not (self.eta_tilde < self.eta < 1.0 and self.delta <= 1.0):
            raise DomainError("need eta_tilde < eta < 1 and delta <= 1")


def chi0(x) -> np.ndarray:
    """Smooth cutoff: 1 on ``[0, 1]``, 0 on ``[2, inf)``."""
    x = np.asarray(x, dtype=float)

    def f(t):
        out = np.zeros_like(t)
        m = t > 0.0
        out[m] = np.exp(-1.0 / t[m])
        return out

    a, c = f(2.0 - x), f(x - 1.0)
    return a / (a + c)


@dataclass(frozen=True)
class SimSetup:
    """Static data of a run: dimension, mode index, grid, constants."""

    gs: GroundState
    ell: int
    grid: RadialGrid
    m0: float
    shrink: ShrinkParams
    step_tol: float = STEP_TOL
    newton_tol: float = NEWTON_TOL
    a: np.ndarray = field(default=None, repr=False)
    c_l0: float = 0.0
    _ypow: np.ndarray = field(default=None, repr=False)

    @property
    def p(self) -> DimensionParams:
        return self.gs.p

    @property
    def n_modes(self) -> int:
        return self.ell + 1

    @property
    def beta_free(self) -> bool:
        return self.ell == 1

    def b_rate(self, beta: float = 0.5) -> float:
        """Leading ``b'/b``: ``2 beta (1 - 2/alpha)`` for ``ell = 1``, ``1 - 2 ell/alpha`` otherwise."""
        if self.ell == 1:
            return 2.0 * beta * (1.0 - 2.0 / self.p.alpha)
        return 1.0 - 2.0 * self.ell / self.p.alpha

    def I(self, tau: float) -> float:
        return math.exp(self.b_rate() * tau)

    def reference(self, j: int, beta: float) -> np.ndarray:
        """Limit eigenfunction ``phi_j`` at ``beta`` on the grid."""
        k = self.a[j, : j + 1] * (2.0 * beta) ** np.arange(j + 1)
        return k @ self._ypow[: j + 1]


def make_setup(
    gs: GroundState,
    ell: int = 1,
    grid: RadialGrid | None = None,
    m0: float | None = None,
    shrink: ShrinkParams | None = None,
    step_tol: float = STEP_TOL,
    newton_tol: float = NEWTON_TOL,
) -> SimSetup:
    if ell < 1:
        raise DomainError("ell must be at least 1")
    if grid is None:
        grid = make_radial_grid()
    if m0 is None:
        m0 = default_m0(gs)
    if m0 == 0.0:
        raise DomainError("m0 must be nonzero")
    table = make_coeff_table(gs.p, max(ell, 1))
    y = grid.y
    ypow = np.array([y ** (2 * k - gs.p.gamma) for k in range(ell + 1)])
    return SimSetup(
        gs, ell, grid, float(m0), shrink or ShrinkParams(), step_tol, newton_tol,
        table.a, float(table.c[ell, 0]), ypow,
    )


def default_m0(gs: GroundState, b: float = 1e-4) -> float:
    """``m0`` from the matched ``phi_{0,b}`` at small ``b``."""
    from .eigen import compute_m0
    from .kernel import build_kernel_family
    from .spectrum import build_basis
    from .weighted import make_weight_context

    kf = build_kernel_family(gs, 1)
    basis = build_basis(make_weight_context(gs.p, 0.5), 2)
    return float(compute_m0(kf, basis, b)["m0"])


@dataclass
class Projection:
    """Constraint evaluation at fixed ``(w, b, beta)``."""

    b: float
    beta: float
    wg: WeightedGrid
    Qb: np.ndarray
    modes: np.ndarray
    lams: np.ndarray
    P: np.ndarray
    eps: np.ndarray
    F: np.ndarray


@dataclass
class SimState:
    """Everything needed to continue a run bit-exactly."""

    tau: float
    t: float
    mu: float
    b: float
    beta: float
    w: np.ndarray
    dtau: float
    modes: np.ndarray
    lams: np.ndarray
    jac: np.ndarray
    int_2beta: float
    tau0: float
    steps: int = 0
    b_rate_est: float = float("nan")
    eps: np.ndarray | None = None
    eps_modes: np.ndarray | None = None
    eps_minus_norm: float = 0.0
    eps_minus_wsup: float = 0.0
    eps_exterior_sup: float = 0.0
    residual: np.ndarray | None = None

    @property
    def lam(self) -> float:
        """``lambda = mu b``."""
        return self.mu * self.b


# --- constraint evaluation -------------------------------------------------


def _ground_on_grid(setup: SimSetup, b: float) -> tuple[np.ndarray, np.ndarray]:
    """``Q_b`` and the ``L_b`` potential."""
    Q, _, _, pot, _ = setup.gs.evaluate_all(setup.grid.y / math.sqrt(b))
    return Q / b, -3.0 * (setup.p.d - 2) * pot / b


def _modes(setup: SimSetup, Lb: DiscreteLb, beta: float, guess: np.ndarray, lam_guess: np.ndarray):
    """Shift-invert refinement of the discrete modes from a nearby guess."""
    wg = Lb.wg
    n = setup.n_modes
    vecs = np.empty((n, wg.grid.n))
    lams = np.empty(n)
    for j in range(n):
        ref = setup.reference(j, beta)
        v = guess[j] / math.sqrt(wg.norm_sq(guess[j]))
        # offset keeps the shifted matrix invertible when the guess is exact
        shift = lam_guess[j] + 1e-9 * max(1.0, abs(lam_guess[j]))
        for _ in range(30):
            u = Lb.solve_shifted(shift, v)
            u /= math.sqrt(wg.norm_sq(u))
            if wg.dot(u, v) < 0.0:
                u = -u
            diff = math.sqrt(wg.norm_sq(u - v))
            v = u
            if diff < MODE_TOL:
                break
        else:
            raise NumericalFailure(f"mode {j} refinement did not converge")
        v = v * wg.dot(ref, ref) / wg.dot(v, ref)
        vecs[j] = v
        lams[j] = Lb.rayleigh(v)
    return vecs, lams


def _initial_mode_guess(setup: SimSetup, b: float, beta: float) -> tuple[np.ndarray, np.ndarray]:
    from .eigen import limit_eigenvalue

    y = setup.grid.y
    cut = 4.0 * math.sqrt(b)
    k = np.searchsorted(y, cut)
    guess = np.array([np.where(y > cut, r, r[k]) for r in (setup.reference(j, beta) for j in range(setup.n_modes))])
    lams = np.array([limit_eigenvalue(setup.p, beta, j) for j in range(setup.n_modes)])
    return guess, lams


def _constraint_values(setup: SimSetup, P: np.ndarray, b: float) -> np.ndarray:
    ell = setup.ell
    orth = setup.c_l0 * P[ell] + P[0]
    if setup.beta_free:
        compat = setup.c_l0 * P[1] + (2.0 / setup.p.alpha) * setup.m0 * b ** (0.5 * setup.p.alpha)
        return np.array([orth, compat])
    return np.array([orth])


def evaluate_constraints(setup: SimSetup, w: np.ndarray, b: float, beta: float, guess, lam_guess) -> Projection:
    if not (b > 0.0):
        raise BlowupEscape("b left (0, inf)")
    if not (BETA_LO < beta < BETA_HI):
        raise BlowupEscape("beta left (1/4, 3/4)")
    wg = weighted_grid(setup.grid, setup.p, beta)
    Qb, potb = _ground_on_grid(setup, b)
    sub, diag, sup = wg.diffusion_bands()
    Lb = DiscreteLb(wg, b, sub, diag + potb, sup)
    modes, lams = _modes(setup, Lb, beta, guess, lam_guess)
    eps = w - Qb
    P = np.array([wg.dot(eps, v) / wg.norm_sq(v) for v in modes])
    return Projection(b, beta, wg, Qb, modes, lams, P, eps, _constraint_values(setup, P, b))


def _unknowns(setup: SimSetup, b: float, beta: float) -> np.ndarray:
    return np.array([b, beta]) if setup.beta_free else np.array([b])


def _split(setup: SimSetup, x: np.ndarray) -> tuple[float, float]:
    return (float(x[0]), float(x[1])) if setup.beta_free else (float(x[0]), 0.5)


def _tolerance(setup: SimSetup, b: float) -> float:
    return setup.newton_tol * min(1.0, b ** (0.5 * setup.p.alpha))


def modulation_jacobian(setup: SimSetup, w: np.ndarray, proj: Projection) -> np.ndarray:
    """Forward differences in ``(b, beta)`` with relative increment ``FD_REL``."""
    x = _unknowns(setup, proj.b, proj.beta)
    J = np.empty((x.size, x.size))
    for k in range(x.size):
        xk = x.copy()
        h = FD_REL * abs(xk[k])
        xk[k] += h
        b, beta = _split(setup, xk)
        pk = evaluate_constraints(setup, w, b, beta, proj.modes, proj.lams)
        J[:, k] = (pk.F - proj.F) / h
    return J


def _check_jacobian(J: np.ndarray) -> float:
    det = float(np.linalg.det(J))
    scale = float(np.prod(np.linalg.norm(J, axis=0)))
    if not np.isfinite(det) or scale == 0.0 or abs(det) < 1e-12 * scale:
        raise JacobianSingular(f"modulation Jacobian is singular (det={det:.3e})")
    return det / scale


def project_parameters(
    setup: SimSetup, w: np.ndarray, b: float, beta: float, guess, lam_guess, jac: np.ndarray | None
) -> tuple[Projection, np.ndarray, int]:
    """Newton in ``(b, beta)`` until the constraints vanish; returns the Jacobian used."""
    proj = evaluate_constraints(setup, w, b, beta, guess, lam_guess)
    fresh = jac is None
    if fresh:
        jac = modulation_jacobian(setup, w, proj)
    _check_jacobian(jac)
    prev = np.inf
    for it in range(NEWTON_MAX_ITER):
        res = float(np.max(np.abs(proj.F)))
        if res < _tolerance(setup, proj.b):
            return proj, jac, it
        if res > CHORD_CONTRACTION * prev and not fresh:
            # chord iteration contracts too slowly: refresh the Jacobian once
            jac = modulation_jacobian(setup, w, proj)
            _check_jacobian(jac)
            fresh = True
        prev = res
        dx = np.linalg.solve(jac, -proj.F)
        x = _unknowns(setup, proj.b, proj.beta) + dx
        nb, nbeta = _split(setup, x)
        proj = evaluate_constraints(setup, w, nb, nbeta, proj.modes, proj.lams)
    if float(np.max(np.abs(proj.F))) < _tolerance(setup, proj.b):
        return proj, jac, NEWTON_MAX_ITER
    raise ProjectionFailure("modulation Newton did not converge")


# --- diagnostics -------------------------------------------------------------


def _diagnostics(setup: SimSetup, proj: Projection) -> dict:
    """Mode amplitudes, ``||eps_-||``, the weighted sup of ``eps_-`` and ``sup |y eps_e|``."""
    ell = setup.ell
    P = proj.P
    amps = P.copy()
    amps[ell] = setup.c_l0 * P[ell]
    eps_minus = proj.eps - P @ proj.modes
    wg = proj.wg
    y = setup.grid.y
    et = setup.shrink.eta_tilde
    bt = proj.b**et
    inner = y <= 1.0 / bt
    jpow = 2 * ell + 2
    wsup = float(np.max(y[inner] ** setup.p.gamma * np.abs(eps_minus[inner]) / (1.0 + y[inner] ** 2) ** (0.5 * jpow)))
    ext = (1.0 - chi0(2.0 * y * bt)) * proj.eps
    return {
        "eps_modes": amps,
        "eps_minus_norm": math.sqrt(max(wg.norm_sq(eps_minus), 0.0)),
        "eps_minus_wsup": wsup,
        "eps_exterior_sup": float(np.max(np.abs(y * ext))),
    }


def _apply_projection(setup: SimSetup, state: SimState, proj: Projection, jac: np.ndarray) -> SimState:
    diag = _diagnostics(setup, proj)
    return replace(
        state,
        b=proj.b,
        beta=proj.beta,
        modes=proj.modes,
        lams=proj.lams,
        jac=jac,
        eps=proj.eps,
        residual=proj.F,
        **diag,
    )


# --- initial data -----------------------------------------------------------


def build_initial_data(
    setup: SimSetup, tau0: float, dvec: np.ndarray | None = None
) -> tuple[SimState, dict]:
    """Cut-off modal data at ``b0 = I(tau0)``, ``beta0 = 1/2``.

    The coefficients in front of ``cut * phi_k`` are solved so that the
    projections take the prescribed values exactly. For ``ell = 1`` these are
    ``(1 + psi_hat) K / c_{1,0}`` and ``-(1 + psi_tilde) K`` with
    ``K = -(2/alpha) m0 b0^{alpha/2}``. Returns the state and a report with
    the correction scalars.
    """
    p, ell, sh = setup.p, setup.ell, setup.shrink
    dvec = np.zeros(ell) if dvec is None else np.asarray(dvec, dtype=float)
    if dvec.shape != (ell,):
        raise DomainError(f"dvec must have length {ell}")
    if ell == 1 and np.any(dvec != 0.0):
        raise DomainError("dvec applies to ell >= 2 only")
    beta0 = 0.5
    b0 = setup.I(tau0)
    if not (0.0 < b0 <= 1e-2 * (1.0 + 1e-12)):
        raise DomainError(f"tau0 too small: b0 = {b0:.3e} exceeds 1e-2")
    y = setup.grid.y
    hb = b0**sh.delta if ell == 1 else b0 ** (0.5 * sh.delta)
    cut = chi0(y * hb) * (1.0 - chi0(y / hb))
    guess, lam_guess = _initial_mode_guess(setup, b0, beta0)
    Qb, _ = _ground_on_grid(setup, b0)
    proj = evaluate_constraints(setup, Qb, b0, beta0, guess, lam_guess)
    modes, wg = proj.modes, proj.wg
    K = -(2.0 / p.alpha) * setup.m0 * b0 ** (0.5 * p.alpha)
    small = sh.A * b0 ** (0.5 * p.alpha + sh.eta)
    # targets for P_0..P_ell; nominal coefficients of the uncut formula
    E = K * (1.0 + (dvec[-1] * small if ell >= 2 else 0.0))
    target = np.zeros(ell + 1)
    target[0] = -E
    target[ell] = E / setup.c_l0
    for j in range(1, ell):
        target[j] = dvec[j - 1] * small
    nominal = target.copy()
    M = np.array([[wg.dot(cut * modes[k], modes[j]) / wg.norm_sq(modes[j]) for k in range(ell + 1)] for j in range(ell + 1)])
    if not np.all(np.isfinite(M)) or np.linalg.cond(M) > 1e12:
        raise ConstraintInsoluble("cutoff mode matrix is singular; increase tau0 or reduce delta")
    x = nominal.copy()
    floor = 1e3 * np.finfo(float).eps * np.max(np.abs(target))
    for _ in range(4):
        r = M @ x - target
        if np.max(np.abs(r)) <= floor:
            break
        x = x - np.linalg.solve(M, r)
    else:
        raise ConstraintInsoluble("correction scalars did not converge")
    psi = cut * (x @ modes)
    w = Qb + psi
    report = {"b0": b0, "beta0": beta0, "coefficients": x.tolist()}
    if ell == 1:
        report["psi_hat"] = float(x[1] / nominal[1] - 1.0)
        report["psi_tilde"] = float(x[0] / nominal[0] - 1.0)
    else:
        with np.errstate(divide="ignore", invalid="ignore"):
            report["corrections"] = [float(x[k] / nominal[k] - 1.0) if nominal[k] != 0 else float("nan") for k in range(ell + 1)]
    proj = evaluate_constraints(setup, w, b0, beta0, modes, proj.lams)
    tol = _tolerance(setup, b0)
    if np.max(np.abs(proj.F)) > tol:
        raise ConstraintInsoluble(f"constraints not met at tau0: {proj.F}")
    jac = modulation_jacobian(setup, w, proj)
    report["jacobian_det_normalized"] = _check_jacobian(jac)
    state = SimState(
        tau=float(tau0), t=0.0, mu=math.exp(-tau0), b=b0, beta=beta0, w=w, dtau=1e-4,
        modes=proj.modes, lams=proj.lams, jac=jac, int_2beta=0.0, tau0=float(tau0),
    )
    return _apply_projection(setup, state, proj, jac), report


# --- time stepping ------------------------------------------------------------


def nonlinearity(p: DimensionParams, y: np.ndarray, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``N(w)`` and ``N'(w)``."""
    k = p.d - 2
    y2w = y * y * w
    return -k * w * w * (3.0 + y2w), -3.0 * k * w * (2.0 + y2w)


@dataclass(frozen=True)
class BubbleForcing:
    """``Q_b``, ``N(Q_b)`` and the exact drift ``beta Lambda Q_b`` on the grid."""

    Qb: np.ndarray
    NQb: np.ndarray
    drift: np.ndarray


def bubble_forcing(setup: SimSetup, b: float, beta: float) -> BubbleForcing:
    Q, _, LQ, _, _ = setup.gs.evaluate_all(setup.grid.y / math.sqrt(b))
    Qb = Q / b
    NQb, _ = nonlinearity(setup.p, setup.grid.y, Qb)
    return BubbleForcing(Qb, NQb, beta * LQ / b)


def euler_increment(setup: SimSetup, wg: WeightedGrid, w: np.ndarray, dtau: float, bubble: BubbleForcing) -> np.ndarray:
    """Linearly implicit Euler: ``(I - dtau J) delta = dtau F(w)``.

    ``F(w) = L_h (w - Q_b) + N(w) - N(Q_b) - beta Lambda Q_b`` with ``L_h`` the
    diffusion-drift matrix and ``J = L_h + N'(w)``. ``Q_b`` is a discrete
    steady state up to the exact drift, so truncation error of the singular
    tail ``-1/y^2`` does not force the modes; ``w - Q_b`` has zero outer flux.
    """
    y = setup.grid.y
    sub, diag, sup = wg.diffusion_bands()
    N, dN = nonlinearity(setup.p, y, w)
    rhs = wg.apply_diffusion(w - bubble.Qb) + (N - bubble.NQb) - bubble.drift
    ab = np.empty((3, y.size))
    ab[0, 0] = 0.0
    ab[0, 1:] = -dtau * sup
    ab[1] = 1.0 - dtau * (diag + dN)
    ab[2, :-1] = -dtau * sub
    ab[2, -1] = 0.0
    return solve_banded((1, 1), ab, dtau * rhs, check_finite=False)


def _error_norm(setup: SimSetup, wg: WeightedGrid, diff: np.ndarray, b: float) -> float:
    """``max(||diff||_rho, b ||diff||_inf)``: outer field and bubble core."""
    return max(math.sqrt(wg.norm_sq(diff)), b * float(np.max(np.abs(diff))))


def _finish_step(setup: SimSetup, state: SimState, w_new: np.ndarray, dtau: float) -> SimState:
    if not np.all(np.isfinite(w_new)):
        raise NumericalFailure("non-finite profile")
    if float(np.max(np.abs(w_new))) > ESCAPE_FACTOR / state.b:
        raise BlowupEscape("sup |w| exceeded 10/b")
    rate = state.b_rate_est if math.isfinite(state.b_rate_est) else setup.b_rate(state.beta)
    b_pred = state.b * math.exp(rate * dtau)
    proj, jac, _ = project_parameters(setup, w_new, b_pred, state.beta, state.modes, state.lams, state.jac)
    two_beta = 2.0 * state.beta
    decay = math.exp(-two_beta * dtau)
    new = replace(
        state,
        tau=state.tau + dtau,
        t=state.t + state.mu * (1.0 - decay) / two_beta,
        mu=state.mu * decay,
        w=w_new,
        int_2beta=state.int_2beta + two_beta * dtau,
        steps=state.steps + 1,
        b_rate_est=math.log(proj.b / state.b) / dtau,
    )
    return _apply_projection(setup, new, proj, jac)


def step(setup: SimSetup, state: SimState, dtau: float) -> SimState:
    """One linearly implicit Euler step followed by the modulation projection."""
    if not (dtau > 0.0):
        raise DomainError("dtau must be positive")
    wg = weighted_grid(setup.grid, setup.p, state.beta)
    bubble = bubble_forcing(setup, state.b, state.beta)
    w_new = state.w + euler_increment(setup, wg, state.w, dtau, bubble)
    return _finish_step(setup, state, w_new, dtau)


def adaptive_step(setup: SimSetup, state: SimState) -> SimState:
    """Step doubling on ``w``; on rejection or a singular projection ``dtau`` is halved."""
    dtau = min(state.dtau, DTAU_MAX)
    wg = weighted_grid(setup.grid, setup.p, state.beta)
    bubble = bubble_forcing(setup, state.b, state.beta)
    while True:
        if dtau < DTAU_MIN:
            raise NumericalFailure("time step underflow")
        w = state.w
        full = w + euler_increment(setup, wg, w, dtau, bubble)
        half = w + euler_increment(setup, wg, w, 0.5 * dtau, bubble)
        two = half + euler_increment(setup, wg, half, 0.5 * dtau, bubble)
        err = _error_norm(setup, wg, two - full, state.b)
        if not np.isfinite(err) or err > setup.step_tol:
            factor = 0.5 if not np.isfinite(err) else max(0.2, 0.9 * math.sqrt(setup.step_tol / err))
            dtau *= factor
            continue
        try:
            new = _finish_step(setup, state, two, dtau)
        except JacobianSingular:
            dtau *= 0.5
            continue
        grow = 2.0 if err == 0.0 else min(2.0, 0.9 * math.sqrt(setup.step_tol / err))
        new.dtau = min(DTAU_MAX, dtau * max(grow, 0.2))
        return new


# --- shrinking set ------------------------------------------------------------


@dataclass(frozen=True)
class ShrinkMonitor:
    """Bounds of the shrinking set ``V_ell`` evaluated on a state."""

    setup: SimSetup

    def flags(self, state: SimState) -> dict:
        s = self.setup
        p, sh = s.p, s.shrink
        A, eta, et = sh.A, sh.eta, sh.eta_tilde
        ah = 0.5 * p.alpha
        b = state.b
        out = {}
        if s.ell == 1:
            ratio = b * math.exp((2.0 / p.alpha - 1.0) * (state.int_2beta + state.tau0))
            out["beta_bound"] = abs(state.beta - 0.5) <= A * s.I(state.tau0) ** eta
            ext_pow = p.gamma - 4.0
        else:
            ratio = b / s.I(state.tau)
            amps = state.eps_modes
            out["mode_ell_bound"] = abs(amps[s.ell] + (2.0 / p.alpha) * s.m0 * b**ah) <= A * b ** (ah + eta)
            out["unstable_modes_bound"] = bool(np.all(np.abs(amps[1 : s.ell]) <= A * b ** (ah + eta)))
            ext_pow = p.gamma - (2 * s.ell + 2)
        out["b_bracket"] = 0.5 <= ratio <= 2.0
        out["eps_minus_l2"] = state.eps_minus_norm <= A**2 * b ** (ah + eta)
        out["eps_minus_wsup"] = state.eps_minus_wsup <= A**3 * b ** (ah + et)
        out["exterior"] = state.eps_exterior_sup <= A**4 * b ** (ah + ext_pow * et)
        return out

    def envelope(self, state: SimState) -> bool:
        """``I^{1 + eta_tilde/10} <= b <= I^{1 - eta_tilde/10}``."""
        I = self.setup.I(state.tau)
        e = self.setup.shrink.eta_tilde / 10.0
        return I ** (1.0 + e) <= state.b <= I ** (1.0 - e)


# --- runs ----------------------------------------------------------------------


TRACE_FIELDS = ("tau", "t", "b", "beta", "mu", "lambda")


@dataclass
class ModulationTrace:
    ell: int
    rows: list = field(default_factory=list)
    status: str = TRAPPED
    tau_escape: float | None = None
    reason: str = ""

    def columns(self) -> list[str]:
        modes = [f"eps{j}" for j in range(self.ell + 1)]
        flags = [r for r in (self.rows[0]["flags"] if self.rows else {})]
        return list(TRACE_FIELDS) + modes + ["eps_minus_norm", "eps_minus_wsup", "eps_exterior_sup", "w0", "residual"] + flags

    def array(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows], dtype=float)

    def append(self, state: SimState, flags: dict) -> None:
        row = {
            "tau": state.tau,
            "t": state.t,
            "b": state.b,
            "beta": state.beta,
            "mu": state.mu,
            "lambda": state.lam,
            "eps_minus_norm": state.eps_minus_norm,
            "eps_minus_wsup": state.eps_minus_wsup,
            "eps_exterior_sup": state.eps_exterior_sup,
            "w0": float(state.w[0]),
            "residual": float(np.max(np.abs(state.residual))),
            "flags": dict(flags),
        }
        for j, v in enumerate(state.eps_modes):
            row[f"eps{j}"] = float(v)
        self.rows.append(row)

    def table(self) -> tuple[list[str], list[list]]:
        cols = self.columns()
        out = []
        for r in self.rows:
            out.append([r[c] if c in r else int(r["flags"][c]) for c in cols])
        return cols, out


def run(
    setup: SimSetup,
    state0: SimState,
    tau_end: float,
    monitor: ShrinkMonitor | None = None,
    trace: ModulationTrace | None = None,
    checkpoint_every: int = 0,
    on_checkpoint: Callable[[SimState], None] | None = None,
    stop_on_escape: bool = True,
    max_steps: int = 10_000_000,
) -> tuple[ModulationTrace, SimState]:
    """Advance to ``tau_end``; the trace is labeled TRAPPED, ESCAPED or NUMERICAL_FAILURE."""
    monitor = monitor or ShrinkMonitor(setup)
    if trace is None:
        trace = ModulationTrace(setup.ell)
        trace.append(state0, monitor.flags(state0))
    state = state0
    n = 0
    while state.tau < tau_end and n < max_steps:
        if state.tau + state.dtau > tau_end:
            state = replace(state, dtau=tau_end - state.tau)
        try:
            state = adaptive_step(setup, state)
        except BlowupEscape as exc:
            trace.status, trace.tau_escape, trace.reason = ESCAPED, state.tau, str(exc)
            return trace, state
        except NumericalFailure as exc:
            trace.status, trace.reason = NUMERICAL_FAILURE, str(exc)
            return trace, state
        n += 1
        flags = monitor.flags(state)
        trace.append(state, flags)
        if checkpoint_every and on_checkpoint is not None and state.steps % checkpoint_every == 0:
            on_checkpoint(state)
        if not all(flags.values()):
            failed = sorted(k for k, v in flags.items() if not v)
            if trace.status == TRAPPED:
                trace.tau_escape = state.tau
                trace.reason = "left shrinking set: " + ",".join(failed)
            trace.status = ESCAPED
            if stop_on_escape:
                return trace, state
    return trace, state


def b_from_origin(w: np.ndarray) -> float:
    """Fallback estimate ``-1/w(0)`` from the innermost node."""
    return -1.0 / float(w[0])


# --- rate fit --------------------------------------------------------------------


@dataclass(frozen=True)
class RateFit:
    T_est: float
    exponent: float
    C_est: float
    r2: float
    n_points: int

    def to_dict(self) -> dict:
        return {"T_est": self.T_est, "exponent": self.exponent, "C_est": self.C_est, "r2": self.r2, "n_points": self.n_points}


def fit_blowup_rate(
    tau: np.ndarray,
    t: np.ndarray,
    mu: np.ndarray,
    lam: np.ndarray,
    beta: np.ndarray,
    skip_decades: float = 1.0,
    min_decades: float = 4.0,
) -> RateFit:
    """Fit ``ln lambda = ln C + p ln(T - t)`` with ``T = t_end + mu_end/(2 beta_end)``.

    Rows before ``mu`` has decayed by ``skip_decades`` are dropped as transient.
    """
    tau, t, mu, lam, beta = (np.asarray(v, dtype=float) for v in (tau, t, mu, lam, beta))
    if mu.size < 3:
        raise InsufficientDecay("trace has fewer than 3 rows")
    decades = math.log10(mu[0] / mu[-1])
    if decades < min_decades:
        raise InsufficientDecay(f"mu decayed by {decades:.2f} decades, need {min_decades}")
    T = t[-1] + mu[-1] / (2.0 * beta[-1])
    keep = mu <= mu[0] * 10.0 ** (-skip_decades)
    x = np.log(T - t[keep])
    z = np.log(lam[keep])
    if x.size < 3:
        raise InsufficientDecay("too few rows after the transient")
    slope, icpt = np.polyfit(x, z, 1)
    fit = slope * x + icpt
    ss_res = float(np.sum((z - fit) ** 2))
    ss_tot = float(np.sum((z - z.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return RateFit(float(T), float(slope), float(math.exp(icpt)), r2, int(x.size))


def fit_trace(trace: ModulationTrace, **kw) -> RateFit:
    return fit_blowup_rate(
        trace.array("tau"), trace.array("t"), trace.array("mu"), trace.array("lambda"), trace.array("beta"), **kw
    )


def modulation_residual(trace: ModulationTrace, p: DimensionParams, tail_from: float) -> float:
    """Time average of ``|b'/b - 2 beta (1 - 2/alpha)|`` over ``tau >= tail_from``."""
    tau = trace.array("tau")
    lb = np.log(trace.array("b"))
    beta = trace.array("beta")
    rate = np.diff(lb) / np.diff(tau)
    mid_beta = 0.5 * (beta[1:] + beta[:-1])
    dev = np.abs(rate - 2.0 * mid_beta * (1.0 - 2.0 / p.alpha))
    keep = tau[1:] >= tail_from
    dt = np.diff(tau)[keep]
    if dt.sum() <= 0.0:
        raise InsufficientDecay("empty tail")
    return float(np.sum(dev[keep] * dt) / dt.sum())


def compatibility_residuals(trace: ModulationTrace, setup: SimSetup) -> np.ndarray:
    """``|eps_1 + (2/alpha) m0 b^{alpha/2}| / b^{alpha/2}`` per row."""
    b = trace.array("b")
    bh = b ** (0.5 * setup.p.alpha)
    return np.abs(trace.array("eps1") + (2.0 / setup.p.alpha) * setup.m0 * bh) / bh


def tau0_for_b0(setup: SimSetup, b0: float = 1e-2) -> float:
    """``tau0`` with ``I(tau0) = b0``."""
    return math.log(b0) / setup.b_rate()
