"""Uniform B-spline grids and Cox-de Boor basis evaluation.

Every edge of a KAN layer is a spline ``s(x) = sum_i c_i B_i(x)`` over a
shared uniform grid. The grid covers ``[range_min, range_max]`` with
``intervals`` equal spans and is extended by ``degree`` extra knots on each
side so that all ``intervals + degree`` basis functions are complete inside
the range. Inputs outside the range are clamped to the nearest boundary.

The scalar functions (``basis_eval`` and friends) follow the textbook
interface; ``basis_values`` is the vectorised workhorse used by the model.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from kandos.errors import ConfigError, ShapeError


@dataclass(frozen=True, eq=False)
class SplineGrid:
    range_min: float
    range_max: float
    intervals: int
    degree: int
    knots: np.ndarray

    @property
    def n_basis(self) -> int:
        return self.intervals + self.degree

    @property
    def step(self) -> float:
        return (self.range_max - self.range_min) / self.intervals

    def greville(self) -> np.ndarray:
        """Knot averages; used as coefficients they reproduce ``s(x) = x``."""
        k = self.degree
        if k == 0:
            return 0.5 * (self.knots[:-1] + self.knots[1:])
        windows = np.lib.stride_tricks.sliding_window_view(self.knots[1:-1], k)
        return windows.mean(axis=1)

    def describe(self) -> dict:
        return {
            "range_min": float(self.range_min),
            "range_max": float(self.range_max),
            "intervals": int(self.intervals),
            "degree": int(self.degree),
        }

    def __eq__(self, other):
        if not isinstance(other, SplineGrid):
            return NotImplemented
        return self.describe() == other.describe()

    def __hash__(self):
        return hash(tuple(self.describe().values()))


def make_grid(range_min: float, range_max: float, intervals: int, degree: int) -> SplineGrid:
    if not np.isfinite(range_min) or not np.isfinite(range_max) or range_min >= range_max:
        raise ConfigError(f"invalid grid range [{range_min}, {range_max}]: need range_min < range_max")
    if int(intervals) != intervals or intervals < 1:
        raise ConfigError(f"invalid grid intervals {intervals}: need a positive integer")
    if int(degree) != degree or degree < 0:
        raise ConfigError(f"invalid spline degree {degree}: need a non-negative integer")
    intervals, degree = int(intervals), int(degree)
    h = (range_max - range_min) / intervals
    # index-based construction keeps interior knots on the exact uniform lattice
    idx = np.arange(-degree, intervals + degree + 1, dtype=np.float64)
    knots = range_min + idx * h
    knots[degree] = range_min
    knots[degree + intervals] = range_max
    knots.setflags(write=False)
    return SplineGrid(float(range_min), float(range_max), intervals, degree, knots)


def _lower_bases(grid: SplineGrid, x: np.ndarray, upto: int) -> np.ndarray:
    """Run the Cox-de Boor recursion up to degree ``upto`` on clamped ``x``.

    Returns an array of shape ``x.shape + (len(knots) - 1 - upto,)``.
    """
    t = grid.knots
    k, G = grid.degree, grid.intervals
    # span index, restricted to the interior so x == range_max uses the last span
    span = np.searchsorted(t, x, side="right") - 1
    span = np.clip(span, k, k + G - 1)
    B = np.zeros(x.shape + (len(t) - 1,), dtype=np.float64)
    np.put_along_axis(B, span[..., None], 1.0, axis=-1)
    xe = x[..., None]
    for d in range(1, upto + 1):
        left_den = t[d:-1] - t[: -(d + 1)]
        right_den = t[d + 1 :] - t[1:-d]
        left = (xe - t[: -(d + 1)]) / left_den
        right = (t[d + 1 :] - xe) / right_den
        B = left * B[..., :-1] + right * B[..., 1:]
    return B


def _clamp(grid: SplineGrid, x) -> np.ndarray:
    return np.clip(np.asarray(x, dtype=np.float64), grid.range_min, grid.range_max)


def basis_values(grid: SplineGrid, x) -> np.ndarray:
    """All basis values at every point of ``x``; shape ``x.shape + (n_basis,)``."""
    return _lower_bases(grid, _clamp(grid, x), grid.degree)


def basis_values_and_derivs(grid: SplineGrid, x) -> tuple[np.ndarray, np.ndarray]:
    """Basis values and their x-derivatives; derivatives vanish outside the range."""
    raw = np.asarray(x, dtype=np.float64)
    xc = _clamp(grid, raw)
    k = grid.degree
    if k == 0:
        B = _lower_bases(grid, xc, 0)
        return B, np.zeros_like(B)
    lower = _lower_bases(grid, xc, k - 1)
    t = grid.knots
    xe = xc[..., None]
    left_den = t[k:-1] - t[: -(k + 1)]
    right_den = t[k + 1 :] - t[1:-k]
    B = (xe - t[: -(k + 1)]) / left_den * lower[..., :-1] + (t[k + 1 :] - xe) / right_den * lower[..., 1:]
    dB = k * (lower[..., :-1] / left_den - lower[..., 1:] / right_den)
    outside = (raw < grid.range_min) | (raw > grid.range_max)
    if np.any(outside):
        dB[outside] = 0.0
    return B, dB


def basis_eval(grid: SplineGrid, x: float) -> np.ndarray:
    return basis_values(grid, float(x))


def basis_eval_deriv(grid: SplineGrid, x: float) -> np.ndarray:
    return basis_values_and_derivs(grid, float(x))[1]


def spline_eval(grid: SplineGrid, coeffs, x):
    """Evaluate ``sum_i coeffs[i] * B_i(x)``; scalar in, scalar out."""
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if coeffs.shape != (grid.n_basis,):
        raise ShapeError(f"expected {grid.n_basis} spline coefficients, got shape {coeffs.shape}")
    out = basis_values(grid, x) @ coeffs
    return float(out) if np.ndim(out) == 0 else out
