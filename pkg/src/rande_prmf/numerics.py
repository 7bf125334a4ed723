"""Grids, finite-difference operators and an adaptive Dormand-Prince integrator.

All state arrays are plain numpy arrays. The integrator accepts states of any
shape, which lets many independent or coupled 1-D fields be advanced together.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    pass


class DomainError(ValueError):
    pass


class IntegrationError(RuntimeError):
    """Raised when the adaptive integrator cannot make progress.

    ``t_last`` holds the last time that was reached with an accepted step.
    """

    def __init__(self, message: str, t_last: float):
        super().__init__(f"{message} (last good t={t_last:.6g})")
        self.t_last = t_last


@dataclass(frozen=True)
class SpatialGrid:
    x_min: float
    x_max: float
    n_points: int

    def __post_init__(self):
        if self.n_points < 3:
            raise DomainError("spatial grid needs at least 3 points")
        if not self.x_max > self.x_min:
            raise DomainError("x_max must exceed x_min")

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / (self.n_points - 1)

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.n_points)

    def trapezoid_weights(self) -> np.ndarray:
        w = np.full(self.n_points, self.dx)
        w[0] = w[-1] = 0.5 * self.dx
        return w


@dataclass(frozen=True)
class TimeGrid:
    t_min: float
    t_max: float
    n_points: int

    def __post_init__(self):
        if self.n_points < 1:
            raise DomainError("time grid needs at least one point")
        if self.n_points > 1 and not self.t_max > self.t_min:
            raise DomainError("time grid must be strictly increasing")
        if self.n_points == 1 and self.t_max != self.t_min:
            raise DomainError("single-point time grid needs t_min == t_max")

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(self.t_min, self.t_max, self.n_points)

    @property
    def dt(self) -> float:
        if self.n_points == 1:
            return 0.0
        return (self.t_max - self.t_min) / (self.n_points - 1)

    def subgrid(self, start: int, stop: int) -> "TimeGrid":
        """Grid over node indices ``start <= j < stop``."""
        t = self.nodes
        if not 0 <= start < stop <= self.n_points:
            raise DomainError(f"invalid index range [{start}, {stop})")
        return TimeGrid(float(t[start]), float(t[stop - 1]), stop - start)


@dataclass
class SpaceTimeField:
    """Density values on an ``(N_t, N_x)`` grid."""

    values: np.ndarray
    time_grid: TimeGrid
    spatial_grid: SpatialGrid

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        expected = (self.time_grid.n_points, self.spatial_grid.n_points)
        if self.values.shape != expected:
            raise ShapeError(f"field shape {self.values.shape} does not match grids {expected}")
        if not np.all(np.isfinite(self.values)):
            raise DomainError("field contains non-finite values")

    @property
    def times(self) -> np.ndarray:
        return self.time_grid.nodes

    @property
    def x(self) -> np.ndarray:
        return self.spatial_grid.nodes

    def rows(self, start: int, stop: int) -> "SpaceTimeField":
        return SpaceTimeField(self.values[start:stop].copy(),
                              self.time_grid.subgrid(start, stop), self.spatial_grid)


def laplacian_neumann(field: np.ndarray, grid: SpatialGrid) -> np.ndarray:
    """Second-order central Laplacian with zero-flux (mirror ghost) ends.

    Works along the last axis, so a stack of fields ``(..., N_x)`` is handled
    in one call.
    """
    v = np.asarray(field, dtype=float)
    if v.shape[-1] != grid.n_points:
        raise ShapeError(f"field length {v.shape[-1]} != grid n_points {grid.n_points}")
    out = np.empty_like(v)
    _laplacian_into(v, 1.0 / grid.dx**2, out)
    return out


def _laplacian_into(v: np.ndarray, inv_dx2: float, out: np.ndarray) -> None:
    out[..., 1:-1] = v[..., :-2] - 2.0 * v[..., 1:-1] + v[..., 2:]
    out[..., 0] = 2.0 * (v[..., 1] - v[..., 0])
    out[..., -1] = 2.0 * (v[..., -2] - v[..., -1])
    out *= inv_dx2


def interp_time(field: SpaceTimeField, t: float) -> np.ndarray:
    """Row of ``field`` at time ``t``, linear between stored times."""
    times = field.times
    if t < times[0] or t > times[-1]:
        raise DomainError(f"t={t} outside [{times[0]}, {times[-1]}]")
    return TimeInterpolator(times, field.values)(t)


class TimeInterpolator:
    """Piecewise-linear interpolation of stored rows, reused inside RHS calls."""

    def __init__(self, times: np.ndarray, values: np.ndarray):
        self.times = np.asarray(times, dtype=float)
        self.values = np.asarray(values, dtype=float)
        self._slopes = np.zeros_like(self.values)
        if len(self.times) > 1:
            self._slopes[:-1] = np.diff(self.values, axis=0) / np.diff(self.times)[:, None]

    def __call__(self, t: float) -> np.ndarray:
        j = int(np.searchsorted(self.times, t, side="right")) - 1
        j = min(max(j, 0), len(self.times) - 1)
        if t == self.times[j]:
            return self.values[j].copy()
        return self.values[j] + (t - self.times[j]) * self._slopes[j]


# Dormand-Prince 5(4) tableau with Shampine's 4th order continuous extension.
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84])
# 5th minus 4th order weights, last entry multiplies the FSAL stage
_E = np.array([-71 / 57600, 0.0, 71 / 16695, -71 / 1920, 17253 / 339200, -22 / 525, 1 / 40])
_P = np.array([
    [1.0, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0.0, 0.0, 0.0, 0.0],
    [0.0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0.0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0.0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0.0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0.0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])

_SAFETY = 0.9
_FAC_MIN = 0.2
_FAC_MAX = 10.0
# PI controller exponents for a 5th order pair
_BETA = 0.04
_ALPHA = 0.2 - 0.75 * _BETA


def _stages(rhs, t, y, f0, h, K):
    K[0] = f0
    for s in range(1, 6):
        dy = _A[s][0] * K[0]
        for j in range(1, s):
            dy = dy + _A[s][j] * K[j]
        K[s] = rhs(t + _C[s] * h, y + h * dy)
    y_new = y + h * np.tensordot(_B, K[:6], axes=1)
    K[6] = rhs(t + h, y_new)
    return y_new


def _as_times(times) -> np.ndarray:
    if isinstance(times, TimeGrid):
        return times.nodes
    t = np.asarray(times, dtype=float)
    if t.ndim != 1 or len(t) == 0:
        raise DomainError("output times must be a non-empty 1-D sequence")
    if len(t) > 1 and np.any(np.diff(t) <= 0):
        raise DomainError("output times must be strictly increasing")
    return t


def _initial_step(rhs, t0, y0, f0, span, rtol, atol):
    scale = atol + rtol * np.abs(y0)
    d0 = np.max(np.abs(y0) / scale)
    d1 = np.max(np.abs(f0) / scale)
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h0 = min(h0, span)
    f1 = rhs(t0 + h0, y0 + h0 * f0)
    d2 = np.max(np.abs(f1 - f0) / scale) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1 / 5)
    return min(100 * h0, h1, span)


def integrate_adaptive(
    rhs: Callable[[float, np.ndarray], np.ndarray],
    y0: np.ndarray,
    times: TimeGrid | Sequence[float],
    rel_tol: float = 1e-6,
    abs_tol: float = 1e-9,
    max_steps: int = 1_000_000,
) -> np.ndarray:
    """Integrate ``y' = rhs(t, y)`` and sample the solution at ``times``.

    The first output time is the initial time. The local error estimate of the
    embedded 4(5) pair is measured in the max norm, scaled by
    ``abs_tol + rel_tol * |y|``, and steps are chosen by a PI controller.
    Output times falling inside a step are filled from the continuous
    extension, so every sample is tolerance controlled.

    Returns an array of shape ``(len(times),) + y0.shape``.
    """
    if rel_tol <= 0 or abs_tol <= 0:
        raise DomainError("tolerances must be positive")
    t_out = _as_times(times)
    y = np.array(y0, dtype=float)
    out = np.empty((len(t_out),) + y.shape)
    out[0] = y
    if len(t_out) == 1:
        return out

    t = float(t_out[0])
    t_end = float(t_out[-1])
    span = t_end - t
    f = np.asarray(rhs(t, y), dtype=float)
    if not np.all(np.isfinite(f)):
        raise IntegrationError("rhs is not finite at the initial state", t)

    h = _initial_step(rhs, t, y, f, span, rel_tol, abs_tol)
    h_min = 1e-12 * span
    K = np.empty((7,) + y.shape)
    err_old = 1e-4
    rejected = False
    nxt = 1
    for _ in range(max_steps):
        h = min(h, t_end - t)
        if h < h_min:
            raise IntegrationError("step size underflow", t)
        y_new = _stages(rhs, t, y, f, h, K)
        scale = abs_tol + rel_tol * np.maximum(np.abs(y), np.abs(y_new))
        err_vec = h * np.tensordot(_E, K, axes=1) / scale
        err = float(np.max(np.abs(err_vec)))
        if not np.isfinite(err):
            h *= _FAC_MIN
            rejected = True
            continue
        if err <= 1.0:
            t_new = t + h
            if t_end - t_new < 1e-13 * span:
                t_new = t_end
            while nxt < len(t_out) and t_out[nxt] <= t_new:
                if t_out[nxt] == t_new:
                    out[nxt] = y_new
                else:
                    theta = (t_out[nxt] - t) / h
                    powers = np.cumprod(np.full(4, theta))
                    out[nxt] = y + h * np.tensordot(_P @ powers, K, axes=1)
                nxt += 1
            t, y, f = t_new, y_new, K[6].copy()
            if t >= t_end:
                return out
            fac = max(err, 1e-10) ** _ALPHA / err_old ** _BETA
            fac = min(1 / _FAC_MIN, max(1 / _FAC_MAX, fac / _SAFETY))
            if rejected:
                fac = max(fac, 1.0)
            h = h / fac
            err_old = max(err, 1e-4)
            rejected = False
        else:
            h = h / min(1 / _FAC_MIN, _SAFETY ** -1 * err ** _ALPHA)
            rejected = True
    raise IntegrationError("maximum number of steps exceeded", t)


def integrate_fixed(
    rhs: Callable[[float, np.ndarray], np.ndarray],
    y0: np.ndarray,
    times: TimeGrid | Sequence[float],
    step: float,
) -> np.ndarray:
    """Fixed-step fallback with the 5th order Dormand-Prince propagator.

    The step is shortened where needed to land on each output time.
    """
    t_out = _as_times(times)
    y = np.array(y0, dtype=float)
    out = np.empty((len(t_out),) + y.shape)
    out[0] = y
    K = np.empty((7,) + y.shape)
    t = float(t_out[0])
    for j in range(1, len(t_out)):
        target = float(t_out[j])
        n = max(1, int(np.ceil((target - t) / step - 1e-9)))
        h = (target - t) / n
        for _ in range(n):
            y = _stages(rhs, t, y, rhs(t, y), h, K)
            t += h
        t = target
        out[j] = y
    return out
