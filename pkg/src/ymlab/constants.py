"""Dimension-derived constants and eigenfunction coefficient tables."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError


@dataclass(frozen=True)
class DimensionParams:
    """Constants attached to the dimension ``d``.

    ``gamma`` and ``gamma_tilde`` are the two roots of
    ``x**2 - d*x + 3*(d-2) = 0``; the remaining fields are derived from them.
    """

    d: int
    omega: float
    gamma: float
    gamma_tilde: float
    alpha: float
    g: float
    lambda1: float
    lambda2: float

    @property
    def m(self) -> float:
        """Laguerre parameter ``d/2 - gamma``."""
        return 0.5 * self.d - self.gamma

    def quadratic_residuals(self) -> tuple[float, float]:
        d = self.d
        r1 = self.gamma**2 - d * self.gamma + 3.0 * (d - 2)
        r2 = self.gamma_tilde**2 - d * self.gamma_tilde + 3.0 * (d - 2)
        return r1, r2

    def to_dict(self) -> dict:
        return {
            "d": self.d,
            "omega": self.omega,
            "gamma": self.gamma,
            "gamma_tilde": self.gamma_tilde,
            "alpha": self.alpha,
            "g": self.g,
            "lambda1": self.lambda1,
            "lambda2": self.lambda2,
        }


def make_dimension_params(d: int) -> DimensionParams:
    if isinstance(d, bool) or int(d) != d:
        raise DomainError(f"dimension must be an integer, got {d!r}")
    d = int(d)
    if d < 10:
        raise DomainError(f"dimension d={d} outside supported range d >= 10")
    disc = d * d - 12 * d + 24
    omega = math.sqrt(disc)
    gamma_tilde = 0.5 * (d + omega)
    # smaller root via the product gamma*gamma_tilde = 3(d-2), avoids cancellation
    gamma = 3.0 * (d - 2) / gamma_tilde
    alpha = gamma - 2.0
    return DimensionParams(
        d=d,
        omega=gamma_tilde - gamma,
        gamma=gamma,
        gamma_tilde=gamma_tilde,
        alpha=alpha,
        g=2.0 * alpha,
        lambda1=2.0 - gamma,
        lambda2=2.0 - gamma_tilde,
    )


@dataclass(frozen=True)
class CoeffTable:
    """Power-sum coefficients of the limit eigenfunctions.

    ``a[i, j]`` multiplies ``(2 beta)**j * y**(2j - gamma)`` in the i-th
    eigenfunction (``a[i, i] = 1``). ``c[i, j] = a[i, j] / C[j]``.
    Entries with ``j > i`` are zero.
    """

    i_max: int
    a: np.ndarray
    c: np.ndarray
    C: np.ndarray
    A: np.ndarray = field(repr=False)


def make_coeff_table(p: DimensionParams, i_max: int = 8) -> CoeffTable:
    if i_max < 0:
        raise DomainError("i_max must be non-negative")
    n = i_max + 1
    m = p.m
    # A[k] = 4k(m + k); A[0] unused
    A = np.array([4.0 * k * (m + k) for k in range(n)])
    a = np.zeros((n, n))
    for i in range(n):
        a[i, i] = 1.0
        # a_{i,j+1} A_{j+1} = (j - i) a_{i,j}, run downward from j = i
        for j in range(i - 1, -1, -1):
            a[i, j] = a[i, j + 1] * A[j + 1] / (j - i)
    C = np.empty(n)
    C[0] = 1.0
    for j in range(1, n):
        C[j] = C[j - 1] / A[j]
    c = np.zeros_like(a)
    for i in range(n):
        c[i, : i + 1] = a[i, : i + 1] / C[: i + 1]
    return CoeffTable(i_max=i_max, a=a, c=c, C=C, A=A)
