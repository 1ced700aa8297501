"""Gaussian-weighted radial measure, quadrature and projections."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import gammaln, roots_genlaguerre, roots_laguerre, roots_legendre

from .constants import DimensionParams
from .errors import DivergentIntegrand, DomainError

LAGUERRE_ORDER = 160
PANEL_NODES = 20
PANEL_RATIO = 0.5
PANEL_FLOOR = 1e-14
Y_CUT = 1.0
# weighted integrand at the outermost nodes, relative to its peak
TAIL_REL_LIMIT = 1e-6


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes and weights with the full weight ``rho_beta`` folded in."""

    nodes: np.ndarray
    weights: np.ndarray
    name: str

    def integrate(self, values: np.ndarray) -> float:
        return float(np.dot(self.weights, values))


def normalization(p: DimensionParams, beta: float) -> float:
    """``(2 beta)^{(d+2)/2} / (4 pi)^{(d+2)/2}``."""
    k = 0.5 * (p.d + 2)
    return float(np.exp(k * np.log(2.0 * beta) - k * np.log(4.0 * np.pi)))


def total_mass(p: DimensionParams) -> float:
    """Closed form of ``int rho_beta dy``, independent of ``beta``."""
    k = 0.5 * (p.d + 2)
    return float(np.exp(gammaln(k) - k * np.log(np.pi)) / 2.0)


def _laguerre_rule(p: DimensionParams, beta: float, order: int) -> QuadratureRule:
    # t = beta y^2 / 2:  y^{d+1} e^{-beta y^2/2} dy = 2^{d/2} beta^{-(d+2)/2} t^{d/2} e^{-t} dt
    a = 0.5 * p.d
    t, w = roots_genlaguerre(order, a)
    y = np.sqrt(2.0 * t / beta)
    pref = np.exp(a * np.log(2.0) - 0.5 * (p.d + 2) * np.log(beta))
    return QuadratureRule(y, w * pref * normalization(p, beta), "laguerre")


def _panel_rule(p: DimensionParams, beta: float, order: int, y_cut: float) -> QuadratureRule:
    x, wx = roots_legendre(PANEL_NODES)
    edges = [y_cut]
    while edges[-1] > PANEL_FLOOR * y_cut:
        edges.append(edges[-1] * PANEL_RATIO)
    edges = np.array(edges[::-1])
    lo, hi = edges[:-1], edges[1:]
    half = 0.5 * (hi - lo)
    y_in = (0.5 * (hi + lo))[:, None] + half[:, None] * x[None, :]
    w_in = half[:, None] * wx[None, :]
    y_in, w_in = y_in.ravel(), w_in.ravel()
    w_in = w_in * y_in ** (p.d + 1) * np.exp(-0.5 * beta * y_in**2)
    # tail: t = beta (y^2 - y_cut^2)/2,  y^{d+1} e^{-beta y^2/2} dy = y^d e^{-beta y_cut^2/2} e^{-t} dt / beta
    t, wt = roots_laguerre(order)
    y_out = np.sqrt(y_cut**2 + 2.0 * t / beta)
    w_out = wt * y_out**p.d * np.exp(-0.5 * beta * y_cut**2) / beta
    nodes = np.concatenate([y_in, y_out])
    weights = np.concatenate([w_in, w_out]) * normalization(p, beta)
    return QuadratureRule(nodes, weights, "graded")


def fine_rule(p: DimensionParams, beta: float, y_max: float = 16.0, panel: float = 0.05) -> QuadratureRule:
    """Graded panels on ``[0, 1]`` plus uniform panels up to ``y_max``; for rough integrands."""
    x, wx = roots_legendre(PANEL_NODES)
    edges = [1.0]
    while edges[-1] > PANEL_FLOOR:
        edges.append(edges[-1] * PANEL_RATIO)
    n = int(np.ceil((y_max - 1.0) / panel))
    edges = np.concatenate([np.array(edges[::-1])[:-1], np.linspace(1.0, y_max, n + 1)])
    lo, hi = edges[:-1], edges[1:]
    half = 0.5 * (hi - lo)
    y = ((0.5 * (hi + lo))[:, None] + half[:, None] * x[None, :]).ravel()
    w = (half[:, None] * wx[None, :]).ravel()
    w = w * y ** (p.d + 1) * np.exp(-0.5 * beta * y**2) * normalization(p, beta)
    return QuadratureRule(y, w, "fine")


@dataclass(frozen=True)
class WeightContext:
    """``L^2`` space with weight ``rho_beta = Z y^{d+1} exp(-beta y^2/2)``."""

    p: DimensionParams
    beta: float
    regular: QuadratureRule = field(repr=False)
    singular: QuadratureRule = field(repr=False)

    @property
    def norm_const(self) -> float:
        return normalization(self.p, self.beta)

    def rho(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        return self.norm_const * y ** (self.p.d + 1) * np.exp(-0.5 * self.beta * y**2)

    def rule_for(self, *fs) -> QuadratureRule:
        """Graded-panel rule as soon as one factor is flagged singular at the origin."""
        for f in fs:
            if _origin_exponent(f) != 0.0:
                return self.singular
        return self.regular


def make_weight_context(
    p: DimensionParams, beta: float, order: int = LAGUERRE_ORDER, y_cut: float = Y_CUT
) -> WeightContext:
    if not (0.25 < beta < 0.75):
        raise DomainError("beta must lie in (1/4, 3/4)")
    if order < 128:
        raise DomainError("quadrature order must be at least 128")
    return WeightContext(p, float(beta), _laguerre_rule(p, beta, order), _panel_rule(p, beta, order, y_cut))


def _origin_exponent(f) -> float:
    if np.isscalar(f):
        return 0.0
    return float(getattr(f, "origin_exponent", 0.0))


def _sample(f, y: np.ndarray) -> np.ndarray:
    if np.isscalar(f):
        return np.full_like(y, float(f))
    return np.asarray(f(y), dtype=float)


def integrate(ctx: WeightContext, f: Callable | float) -> float:
    """``int f rho_beta dy`` with tail-growth check."""
    rule = ctx.rule_for(f)
    vals = _sample(f, rule.nodes)
    return _checked_sum(rule, vals)


def _checked_sum(rule: QuadratureRule, vals: np.ndarray) -> float:
    if not np.all(np.isfinite(vals)):
        raise DivergentIntegrand("integrand is not finite at a quadrature node")
    terms = rule.weights * vals
    peak = np.max(np.abs(terms))
    if peak == 0.0:
        return 0.0
    tail = np.max(np.abs(terms[-4:]))
    if tail > TAIL_REL_LIMIT * peak:
        raise DivergentIntegrand("integrand does not decay against the weight")
    return float(np.sum(terms))


def inner_product(ctx: WeightContext, f: Callable | float, g: Callable | float) -> float:
    """``<f, g>`` in ``L^2(rho_beta)``."""
    rule = ctx.rule_for(f, g)
    vals = _sample(f, rule.nodes) * _sample(g, rule.nodes)
    return _checked_sum(rule, vals)


def norm_sq(ctx: WeightContext, f: Callable | float) -> float:
    return inner_product(ctx, f, f)


def project(ctx: WeightContext, eps: Callable, basis, j: int) -> float:
    """``<eps, phi_j> / ||phi_j||^2`` for the ``j``-th basis function."""
    if j < 0 or j > basis.i_max:
        raise DomainError(f"mode index {j} outside 0..{basis.i_max}")
    return inner_product(ctx, eps, basis.function(j)) / basis.norms[j]


def gamma_moment(p: DimensionParams, beta: float, k: int) -> float:
    """``int y^{2k} rho_beta dy`` in closed form."""
    s = 0.5 * (p.d + 2) + k
    log_raw = gammaln(s) + s * np.log(2.0 / beta) - np.log(2.0)
    return float(np.exp(log_raw) * normalization(p, beta))


def quadrature_selftest(p: DimensionParams, beta: float, k_max: int = 20) -> list[dict]:
    """Gamma-moment oracle against both quadrature rules."""
    ctx = make_weight_context(p, beta)
    rows = []
    for k in range(k_max + 1):
        exact = gamma_moment(p, beta, k)
        row = {"k": k, "exact": exact}
        for rule in (ctx.regular, ctx.singular):
            approx = rule.integrate(rule.nodes ** (2 * k))
            row[rule.name] = approx
            row[f"{rule.name}_rel_err"] = abs(approx - exact) / exact
        rows.append(row)
    return rows
