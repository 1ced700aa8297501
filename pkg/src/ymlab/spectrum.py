"""Eigenbasis of the limiting linearized operator in the weighted space."""

from __future__ import annotations

from dataclasses import dataclass, field
from math import factorial
from typing import Callable

import numpy as np
from scipy.special import eval_genlaguerre

from .constants import CoeffTable, DimensionParams, make_coeff_table
from .errors import DomainError
from .weighted import QuadratureRule, WeightContext, fine_rule, inner_product


@dataclass(frozen=True)
class PowerSum:
    """``sum_j k_j y^{2j - gamma}``, evaluated as ``y^{-gamma} P(y^2)``."""

    coeffs: np.ndarray
    gamma: float

    @property
    def origin_exponent(self) -> float:
        return -self.gamma

    @property
    def exponents(self) -> np.ndarray:
        return 2.0 * np.arange(self.coeffs.size) - self.gamma

    @staticmethod
    def _horner(c: np.ndarray, s: np.ndarray) -> np.ndarray:
        out = np.full_like(s, c[-1])
        for ck in c[-2::-1]:
            out = out * s + ck
        return out

    def __call__(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        return y ** (-self.gamma) * self._horner(self.coeffs, y * y)

    def derivative(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        c = self.coeffs * self.exponents
        return y ** (-self.gamma - 1.0) * self._horner(c, y * y)

    def second_derivative(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        e = self.exponents
        return y ** (-self.gamma - 2.0) * self._horner(self.coeffs * e * (e - 1.0), y * y)


def apply_limit_operator(p: DimensionParams, beta: float, f, df, d2f, y: np.ndarray) -> np.ndarray:
    """``f'' + (d+1)/y f' + 3(d-2)/y^2 f - beta (2 f + y f')`` from samples."""
    return d2f + (p.d + 1) / y * df + 3.0 * (p.d - 2) / y**2 * f - beta * (2.0 * f + y * df)


@dataclass
class SpectralBasis:
    """``phi_i = sum_{j<=i} a_{i,j} (2 beta)^j y^{2j-gamma}`` with ``a_{i,i} = 1``."""

    ctx: WeightContext
    i_max: int
    coeffs: CoeffTable
    norms: np.ndarray
    eigenvalues: np.ndarray
    _functions: list = field(default_factory=list, repr=False)

    @property
    def p(self) -> DimensionParams:
        return self.ctx.p

    @property
    def beta(self) -> float:
        return self.ctx.beta

    def function(self, i: int) -> PowerSum:
        if i < 0 or i > self.i_max:
            raise DomainError(f"mode index {i} outside 0..{self.i_max}")
        return self._functions[i]

    def phi(self, i: int, y) -> np.ndarray:
        return self.function(i)(y)

    def laguerre_form(self, i: int, y) -> np.ndarray:
        """``(-4)^i i! y^{-gamma} L_i^{(m)}(beta y^2/2)`` via scipy's Laguerre evaluation."""
        y = np.asarray(y, dtype=float)
        return (-4.0) ** i * factorial(i) * y ** (-self.p.gamma) * eval_genlaguerre(
            i, self.p.m, 0.5 * self.beta * y * y
        )

    def positive_roots(self, i: int) -> np.ndarray:
        """Zeros of ``phi_i`` on ``y > 0`` from the polynomial in ``y^2``."""
        c = self.function(i).coeffs
        s = np.roots(c[::-1])
        s = np.real(s[np.abs(np.imag(s)) < 1e-12 * np.maximum(1.0, np.abs(s))])
        return np.sort(np.sqrt(s[s > 0]))

    def gram(self) -> np.ndarray:
        n = self.i_max + 1
        G = np.empty((n, n))
        for i in range(n):
            for j in range(i, n):
                G[i, j] = G[j, i] = inner_product(self.ctx, self._functions[i], self._functions[j])
        return G


def build_basis(ctx: WeightContext, i_max: int) -> SpectralBasis:
    table = make_coeff_table(ctx.p, max(i_max, 0))
    if i_max < 0 or i_max > table.i_max:
        raise DomainError("i_max outside the coefficient table")
    two_beta = 2.0 * ctx.beta
    funcs = []
    for i in range(i_max + 1):
        k = np.array([table.a[i, j] * two_beta**j for j in range(i + 1)])
        funcs.append(PowerSum(k, ctx.p.gamma))
    norms = np.array([inner_product(ctx, f, f) for f in funcs])
    eig = np.array([two_beta * (0.5 * ctx.p.alpha - i) for i in range(i_max + 1)])
    return SpectralBasis(ctx, i_max, table, norms, eig, funcs)


def eigen_residual(basis: SpectralBasis, i: int, y: np.ndarray | None = None) -> float:
    """Weighted sup of ``L phi_i - lambda_i phi_i`` with term-wise exact derivatives."""
    if y is None:
        y = np.geomspace(0.1, 10.0, 801)
    p, beta = basis.p, basis.beta
    f = basis.function(i)
    k, e = f.coeffs, f.exponents
    lam = basis.eigenvalues[i]
    # collect the coefficient of each power y^{2j - gamma - 2}, j = 0..i+1
    r = np.zeros(k.size + 1)
    # e(e-1) + (d+1)e + 3(d-2) in factored form (e+gamma)(e+gamma_tilde), no cancellation
    r[:-1] += k * (e + p.gamma) * (e + p.gamma_tilde)
    r[1:] -= k * (beta * (2.0 + e) + lam)
    total = y ** (-p.gamma - 2.0) * PowerSum._horner(r, y * y)
    return float(np.max(np.abs(total) * y**p.gamma / (1.0 + y ** (2 * i))))


def fd_second_order_operator(y: np.ndarray, f: np.ndarray, h: float) -> tuple[np.ndarray, np.ndarray]:
    """Fourth-order centred first and second derivatives on a uniform grid interior."""
    d1 = (-f[4:] + 8.0 * f[3:-1] - 8.0 * f[1:-3] + f[:-4]) / (12.0 * h)
    d2 = (-f[4:] + 16.0 * f[3:-1] - 30.0 * f[2:-2] + 16.0 * f[1:-3] - f[:-4]) / (12.0 * h * h)
    return d1, d2


def eigen_residual_fd(basis: SpectralBasis, i: int, h: float = 1e-3, lo: float = 0.25, hi: float = 8.0) -> float:
    """Same weighted residual, with derivatives from a 4th-order stencil of spacing ``h``."""
    y = np.arange(lo - 2 * h, hi + 2.5 * h, h)
    f = basis.phi(i, y)
    d1, d2 = fd_second_order_operator(y, f, h)
    yi, fi = y[2:-2], f[2:-2]
    res = apply_limit_operator(basis.p, basis.beta, fi, d1, d2, yi) - basis.eigenvalues[i] * fi
    return float(np.max(np.abs(res) * yi**basis.p.gamma / (1.0 + yi ** (2 * i))))


@dataclass(frozen=True)
class ProjectedFunction:
    """``u - sum_j c_j phi_j`` with its derivative."""

    u: Callable
    du: Callable
    parts: tuple

    origin_exponent: float = 0.0

    def __call__(self, y) -> np.ndarray:
        out = np.asarray(self.u(y), dtype=float).copy()
        for c, f in self.parts:
            out -= c * f(y)
        return out

    def derivative(self, y) -> np.ndarray:
        out = np.asarray(self.du(y), dtype=float).copy()
        for c, f in self.parts:
            out -= c * f.derivative(y)
        return out


def project_out(basis: SpectralBasis, u, ell: int, rule: QuadratureRule | None = None) -> ProjectedFunction:
    """Remove the components along ``phi_0..phi_ell`` (Gram solve, not sequential)."""
    rule = rule or basis.ctx.singular
    funcs = [basis.function(j) for j in range(ell + 1)]
    vals = [f(rule.nodes) for f in funcs]
    G = np.array([[rule.integrate(a * b) for b in vals] for a in vals])
    uv = u(rule.nodes)
    c = np.linalg.solve(G, np.array([rule.integrate(uv * v) for v in vals]))
    return ProjectedFunction(u, u.derivative, tuple(zip(c, funcs)), -basis.p.gamma)


def rayleigh_quotient(basis: SpectralBasis, u, rule: QuadratureRule | None = None) -> float:
    """``<L u, u> / ||u||^2`` via the form ``-||u'||^2 + <(3(d-2)/y^2 - 2 beta) u, u>``."""
    p = basis.p
    rule = rule or basis.ctx.singular
    y = rule.nodes
    v = u(y)
    dv = u.derivative(y)
    num = rule.integrate(-dv * dv + (3.0 * (p.d - 2) / y**2 - 2.0 * basis.beta) * v * v)
    return num / rule.integrate(v * v)


def spectral_gap_probe(basis: SpectralBasis, u, ell: int) -> float:
    """Rayleigh quotient of ``u`` after projecting out ``phi_0..phi_ell``."""
    if ell + 1 > basis.i_max:
        raise DomainError("basis must contain phi_{ell+1}")
    rule = fine_rule(basis.p, basis.beta)
    return rayleigh_quotient(basis, project_out(basis, u, ell, rule), rule)


def three_term_coefficients(basis: SpectralBasis, i: int) -> np.ndarray:
    """Projections of ``(y^2/2) phi_i`` onto ``phi_0..phi_{i+1}``."""
    if i + 1 > basis.i_max:
        raise DomainError("basis must contain phi_{i+1}")
    f = basis.function(i)
    g = PowerSum(np.concatenate([[0.0], 0.5 * f.coeffs]), f.gamma)
    return np.array([inner_product(basis.ctx, g, basis.function(j)) / basis.norms[j] for j in range(i + 2)])


def smooth_bump(center: float, width: float, amplitude: float = 1.0):
    """Compactly supported ``C^infinity`` bump with analytic derivative."""

    class _Bump:
        origin_exponent = 0.0

        def __call__(self, y):
            y = np.asarray(y, dtype=float)
            z = (y - center) / width
            out = np.zeros_like(y)
            m = np.abs(z) < 1.0
            out[m] = amplitude * np.exp(-1.0 / (1.0 - z[m] ** 2))
            return out

        def derivative(self, y):
            y = np.asarray(y, dtype=float)
            z = (y - center) / width
            out = np.zeros_like(y)
            m = np.abs(z) < 1.0
            zm = z[m]
            out[m] = amplitude * np.exp(-1.0 / (1.0 - zm**2)) * (-2.0 * zm / (1.0 - zm**2) ** 2) / width
            return out

    return _Bump()


class BumpSum:
    """Sum of smooth bumps; ``origin_exponent`` 0."""

    origin_exponent = 0.0

    def __init__(self, bumps) -> None:
        self.bumps = list(bumps)

    def __call__(self, y):
        return sum(b(y) for b in self.bumps)

    def derivative(self, y):
        return sum(b.derivative(y) for b in self.bumps)


def random_bump_sum(rng: np.random.Generator, n: int = 3, y_lo: float = 0.05, y_hi: float = 8.0) -> BumpSum:
    bumps = []
    for _ in range(n):
        c = rng.uniform(y_lo, y_hi)
        w = rng.uniform(0.2, 1.5)
        w = min(w, c - 0.5 * y_lo)
        bumps.append(smooth_bump(c, w, rng.normal()))
    return BumpSum(bumps)
