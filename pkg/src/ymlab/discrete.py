"""Graded radial grid and the weighted finite-volume form of ``L_b``.

Nodes are log-uniform on ``[y_min, 1]`` and uniform on ``[1, y_max]`` with the
spacing matched at ``y = 1``. Cell ``k`` spans the face midpoints around node
``k``; the first cell starts at 0 and the last ends at ``y_max`` (zero flux at
both ends). With ``rho = Z y^{d+1} exp(-beta y^2/2)`` and exact cell masses
``V_k = int_cell rho``, the diffusion-drift part

    (rho^{-1}(rho w')')_k = (F_{k+1/2} - F_{k-1/2}) / V_k,
    F_{k+1/2} = rho(face) (w_{k+1} - w_k)/(y_{k+1} - y_k)

is symmetric in ``sum_k V_k f_k g_k``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded
from scipy.special import gammainc, gammaincc, gammaln

from .constants import DimensionParams
from .errors import DomainError
from .ground_state import GroundState
from .weighted import normalization


@dataclass(frozen=True)
class RadialGrid:
    y: np.ndarray
    faces: np.ndarray
    y_min: float
    y_max: float

    @property
    def n(self) -> int:
        return self.y.size


def make_radial_grid(y_min: float = 1e-4, y_max: float = 12.0, n_log: int = 1200) -> RadialGrid:
    if not (0.0 < y_min < 1.0 < y_max):
        raise DomainError("need 0 < y_min < 1 < y_max")
    if n_log < 10:
        raise DomainError("n_log must be at least 10")
    h = np.log(1.0 / y_min) / n_log
    y_log = np.exp(np.linspace(np.log(y_min), 0.0, n_log + 1))
    n_uni = int(np.ceil((y_max - 1.0) / h))
    y_uni = np.linspace(1.0, y_max, n_uni + 1)[1:]
    y = np.concatenate([y_log, y_uni])
    faces = np.concatenate([[0.0], 0.5 * (y[1:] + y[:-1]), [y_max]])
    return RadialGrid(y, faces, y_min, y_max)


def refine(grid: RadialGrid) -> RadialGrid:
    """Same extent with twice the resolution."""
    n_log = int(round(np.log(1.0 / grid.y_min) / np.log(grid.y[1] / grid.y[0])))
    return make_radial_grid(grid.y_min, grid.y_max, 2 * n_log)


def _lower_mass(p: DimensionParams, beta: float, f: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``(P, Q)`` regularized incomplete gammas for ``int_0^f y^{d+1} e^{-beta y^2/2}``."""
    a = 0.5 * (p.d + 2)
    x = 0.5 * beta * f * f
    return gammainc(a, x), gammaincc(a, x)


@dataclass(frozen=True)
class WeightedGrid:
    """Cell masses and face conductances of ``rho_beta`` on a grid."""

    grid: RadialGrid
    p: DimensionParams
    beta: float
    V: np.ndarray
    cond: np.ndarray

    def dot(self, f: np.ndarray, g: np.ndarray) -> float:
        return float(np.dot(self.V * f, g))

    def norm_sq(self, f: np.ndarray) -> float:
        return self.dot(f, f)

    def diffusion_bands(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(sub, diag, super)`` of ``rho^{-1}(rho w')' - 2 beta w``."""
        c = self.cond
        V = self.V
        diag = -(np.concatenate([[0.0], c]) + np.concatenate([c, [0.0]])) / V - 2.0 * self.beta
        sub = c / V[1:]
        sup = c / V[:-1]
        return sub, diag, sup

    def apply_diffusion(self, w: np.ndarray) -> np.ndarray:
        flux = self.cond * np.diff(w)
        out = np.empty_like(w)
        out[0] = flux[0]
        out[1:-1] = flux[1:] - flux[:-1]
        out[-1] = -flux[-1]
        return out / self.V - 2.0 * self.beta * w

    def dirichlet_form(self, f: np.ndarray, g: np.ndarray) -> float:
        """``sum_faces cond (df)(dg)``; equals ``-<(rho^{-1}(rho f')'), g>``."""
        return float(np.sum(self.cond * np.diff(f) * np.diff(g)))


def weighted_grid(grid: RadialGrid, p: DimensionParams, beta: float) -> WeightedGrid:
    Z = normalization(p, beta)
    a = 0.5 * (p.d + 2)
    scale = Z * 0.5 * np.exp(gammaln(a) + a * np.log(2.0 / beta))
    P, Qc = _lower_mass(p, beta, grid.faces)
    # difference whichever of P, Q is smaller to keep relative accuracy
    use_p = P[1:] < 0.5
    V = np.where(use_p, P[1:] - P[:-1], Qc[:-1] - Qc[1:]) * scale
    yf = grid.faces[1:-1]
    rho_f = Z * yf ** (p.d + 1) * np.exp(-0.5 * beta * yf * yf)
    cond = rho_f / np.diff(grid.y)
    return WeightedGrid(grid, p, float(beta), V, cond)


def potential_term(gs: GroundState, y: np.ndarray, b: float) -> np.ndarray:
    """``-3(d-2)(2 Q_b + y^2 Q_b^2)`` with ``Q_b(y) = Q(y/sqrt(b))/b``."""
    return -3.0 * (gs.p.d - 2) * gs.potential(y / np.sqrt(b)) / b


@dataclass(frozen=True)
class DiscreteLb:
    """Tridiagonal ``L_b`` on a weighted grid."""

    wg: WeightedGrid
    b: float
    sub: np.ndarray
    diag: np.ndarray
    sup: np.ndarray

    def apply(self, w: np.ndarray) -> np.ndarray:
        out = self.diag * w
        out[1:] += self.sub * w[:-1]
        out[:-1] += self.sup * w[1:]
        return out

    def banded(self, shift: float = 0.0) -> np.ndarray:
        ab = np.zeros((3, self.diag.size))
        ab[0, 1:] = self.sup
        ab[1] = self.diag - shift
        ab[2, :-1] = self.sub
        return ab

    def solve_shifted(self, shift: float, rhs: np.ndarray) -> np.ndarray:
        return solve_banded((1, 1), self.banded(shift), rhs, check_finite=False)

    def symmetric_bands(self) -> tuple[np.ndarray, np.ndarray]:
        """``V^{1/2} L V^{-1/2}``: diagonal and off-diagonal."""
        off = self.wg.cond / np.sqrt(self.wg.V[:-1] * self.wg.V[1:])
        return self.diag.copy(), off

    def quadratic_form(self, w: np.ndarray) -> float:
        """``<L w, w>`` computed from fluxes, without the ``1/V`` division."""
        wg = self.wg
        pot = self.diag + (np.concatenate([[0.0], wg.cond]) + np.concatenate([wg.cond, [0.0]])) / wg.V
        return -wg.dirichlet_form(w, w) + float(np.dot(wg.V * pot * w, w))

    def rayleigh(self, w: np.ndarray) -> float:
        return self.quadratic_form(w) / self.wg.norm_sq(w)


def discrete_Lb(gs: GroundState, wg: WeightedGrid, b: float) -> DiscreteLb:
    sub, diag, sup = wg.diffusion_bands()
    diag = diag + potential_term(gs, wg.grid.y, b)
    return DiscreteLb(wg, float(b), sub, diag, sup)


def sturm_count(diag: np.ndarray, off: np.ndarray, x: float) -> int:
    """Number of eigenvalues of the symmetric tridiagonal matrix below ``x``."""
    count = 0
    q = diag[0] - x
    if q < 0:
        count += 1
    tiny = np.finfo(float).tiny
    for k in range(1, diag.size):
        if q == 0.0:
            q = tiny
        q = diag[k] - x - off[k - 1] ** 2 / q
        if q < 0:
            count += 1
    return count
