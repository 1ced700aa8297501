"""Sampled radial functions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicHermiteSpline


@dataclass
class RadialProfile:
    """A radial function on a strictly increasing grid with two derivatives.

    ``origin_value`` and ``origin_d2`` describe the even extension at 0 and are
    only meaningful when ``origin_exponent == 0``. ``origin_exponent`` is the
    leading power at the origin (``f ~ r**origin_exponent``); a negative or
    odd value routes integrals to the singular-origin quadrature rule.
    """

    grid: np.ndarray
    values: np.ndarray
    d1: np.ndarray
    d2: np.ndarray
    origin_value: float = float("nan")
    origin_d2: float = float("nan")
    origin_exponent: float = 0.0

    def __post_init__(self) -> None:
        self.grid = np.asarray(self.grid, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        self.d1 = np.asarray(self.d1, dtype=float)
        self.d2 = np.asarray(self.d2, dtype=float)
        n = self.grid.size
        if n < 2:
            raise ValueError("profile needs at least two samples")
        for name in ("values", "d1", "d2"):
            if getattr(self, name).shape != (n,):
                raise ValueError(f"{name} must match grid length {n}")
        if np.any(np.diff(self.grid) <= 0):
            raise ValueError("grid must be strictly increasing")
        if not (np.all(np.isfinite(self.values)) and np.all(np.isfinite(self.d1))):
            raise ValueError("profile samples must be finite")
        self._spline = None

    def _hermite(self) -> CubicHermiteSpline:
        if self._spline is None:
            self._spline = CubicHermiteSpline(self.grid, self.values, self.d1)
        return self._spline

    def __call__(self, r) -> np.ndarray:
        return self.evaluate(r)

    def evaluate(self, r) -> np.ndarray:
        """Hermite interpolation inside the grid, analytic continuation outside.

        Below the grid: even Taylor extension if origin data is present, else
        the local power law. Above the grid: local power law.
        """
        r = np.asarray(r, dtype=float)
        out = np.empty_like(r)
        lo, hi = self.grid[0], self.grid[-1]
        inside = (r >= lo) & (r <= hi)
        out[inside] = self._hermite()(r[inside])
        below = r < lo
        if np.any(below):
            if np.isfinite(self.origin_value) and np.isfinite(self.origin_d2):
                out[below] = self.origin_value + 0.5 * self.origin_d2 * r[below] ** 2
            else:
                out[below] = self._power_tail(0, r[below])
        above = r > hi
        if np.any(above):
            out[above] = self._power_tail(-1, r[above])
        return out

    def _power_tail(self, k: int, r: np.ndarray) -> np.ndarray:
        f, df, x = self.values[k], self.d1[k], self.grid[k]
        if f == 0.0:
            return np.zeros_like(r)
        s = x * df / f
        return f * (r / x) ** s

    def derivative(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        lo, hi = self.grid[0], self.grid[-1]
        rc = np.clip(r, lo, hi)
        return self._hermite()(rc, 1)

    def scaled(self, factor: float) -> "RadialProfile":
        return RadialProfile(
            self.grid.copy(),
            factor * self.values,
            factor * self.d1,
            factor * self.d2,
            factor * self.origin_value,
            factor * self.origin_d2,
            self.origin_exponent,
        )


def geometric_grid(lo: float, hi: float, per_decade: int) -> np.ndarray:
    """Geometric grid containing both endpoints."""
    n = int(np.ceil(per_decade * np.log10(hi / lo))) + 1
    return np.geomspace(lo, hi, n)
