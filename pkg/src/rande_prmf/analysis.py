"""Error metrics, traveling-wave speeds and clustering of sampled phenotypes."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .distributions import SampleSet
from .numerics import DomainError, ShapeError, SpaceTimeField, SpatialGrid

DEFAULT_LEVELS = tuple(np.round(np.arange(0.25, 0.65 + 1e-9, 0.05), 2))


def sse(a: SpaceTimeField | np.ndarray, b: SpaceTimeField | np.ndarray, mask=None) -> float:
    """Sum of squared differences over masked cells.

    ``mask`` is either one flag per time row or a full-shape boolean array.
    """
    av = a.values if isinstance(a, SpaceTimeField) else np.asarray(a, dtype=float)
    bv = b.values if isinstance(b, SpaceTimeField) else np.asarray(b, dtype=float)
    if av.shape != bv.shape:
        raise ShapeError(f"shape mismatch {av.shape} vs {bv.shape}")
    if mask is None:
        mask = np.ones(av.shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim == 1 and av.ndim == 2:
        if len(mask) != av.shape[0]:
            raise ShapeError("row mask length does not match the time axis")
        mask = np.repeat(mask[:, None], av.shape[1], axis=1)
    if mask.shape != av.shape:
        raise ShapeError("mask shape does not match the fields")
    if not mask.any():
        raise DomainError("empty mask")
    d = av[mask] - bv[mask]
    return float(d @ d)


def front_position(u_row: np.ndarray, grid: SpatialGrid, u_star: float) -> float | None:
    """Rightmost ``x`` where the profile crosses ``u_star`` (linear between nodes)."""
    if not 0 < u_star < 1:
        raise DomainError("u_star must lie in (0, 1)")
    u = np.asarray(u_row, dtype=float)
    if len(u) != grid.n_points:
        raise ShapeError("profile length does not match grid")
    x = grid.nodes
    s = u - u_star
    for k in range(len(u) - 2, -1, -1):
        if s[k] * s[k + 1] <= 0 and u[k] != u[k + 1]:
            return float(x[k] + (u_star - u[k]) / (u[k + 1] - u[k]) * (x[k + 1] - x[k]))
    return None


@dataclass
class WaveSpeedProfile:
    levels: np.ndarray
    speeds: np.ndarray
    n_crossings: np.ndarray
    window: tuple[float, float]

    @property
    def missing(self) -> np.ndarray:
        return ~np.isfinite(self.speeds)

    def rows(self) -> list[tuple[float, float]]:
        return [(float(l), float(s)) for l, s in zip(self.levels, self.speeds)]


def wave_speed_profile(field: SpaceTimeField, u_stars=DEFAULT_LEVELS,
                       window: tuple[float, float] = (0.6, 1.0)) -> WaveSpeedProfile:
    """Least-squares slope of front position against time for each level.

    Levels with fewer than 3 crossings inside the window get a NaN speed.
    """
    t = field.times
    lo, hi = window
    if lo < t[0] - 1e-12 or hi > t[-1] + 1e-12 or hi <= lo:
        raise DomainError(f"window {window} not inside [{t[0]}, {t[-1]}]")
    rows = np.nonzero((t >= lo - 1e-12) & (t <= hi + 1e-12))[0]
    levels = np.asarray(u_stars, dtype=float)
    speeds = np.full(len(levels), np.nan)
    counts = np.zeros(len(levels), dtype=int)
    for i, us in enumerate(levels):
        pts = [(t[j], front_position(field.values[j], field.spatial_grid, us)) for j in rows]
        pts = [(tj, xj) for tj, xj in pts if xj is not None]
        counts[i] = len(pts)
        if len(pts) >= 3:
            tt, xx = np.array(pts).T
            speeds[i] = np.polyfit(tt, xx, 1)[0]
    return WaveSpeedProfile(levels, speeds, counts, (float(lo), float(hi)))


def normalize_samples(samples: SampleSet | np.ndarray, D_range, rho_range) -> np.ndarray:
    """Affine map of each axis from its parameter range onto [-1, 1]."""
    pts = samples.points if isinstance(samples, SampleSet) else np.asarray(samples, dtype=float)
    if len(pts) == 0:
        raise DomainError("no samples")
    lo = np.array([D_range[0], rho_range[0]], dtype=float)
    hi = np.array([D_range[1], rho_range[1]], dtype=float)
    return 2.0 * (pts - lo) / (hi - lo) - 1.0


def denormalize_centers(centers: np.ndarray, D_range, rho_range) -> np.ndarray:
    lo = np.array([D_range[0], rho_range[0]], dtype=float)
    hi = np.array([D_range[1], rho_range[1]], dtype=float)
    return lo + (np.asarray(centers, dtype=float) + 1.0) * 0.5 * (hi - lo)


@dataclass
class ClusterResult:
    k: int
    centers: np.ndarray
    labels: np.ndarray
    inertia: float
    n_iter: int = 0


def _sq_dists(X, C):
    return ((X[:, None, :] - C[None, :, :]) ** 2).sum(-1)


def _kmeanspp(X, k, rng):
    n = len(X)
    centers = [X[rng.integers(n)]]
    d2 = ((X - centers[0]) ** 2).sum(1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            i = rng.integers(n)
        else:
            i = rng.choice(n, p=d2 / total)
        centers.append(X[i])
        d2 = np.minimum(d2, ((X - X[i]) ** 2).sum(1))
    return np.array(centers)


def lloyd(X: np.ndarray, centers: np.ndarray, max_iter: int = 300) -> ClusterResult:
    """Lloyd iterations until the assignment stops changing."""
    C = np.array(centers, dtype=float)
    k = len(C)
    labels = None
    for it in range(1, max_iter + 1):
        d = _sq_dists(X, C)
        new = np.argmin(d, axis=1)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for j in range(k):
            members = labels == j
            if members.any():
                C[j] = X[members].mean(0)
            else:
                # refill an empty cluster with the worst-served point
                far = int(np.argmax(d[np.arange(len(X)), labels]))
                C[j] = X[far]
                labels[far] = j
    d = _sq_dists(X, C)
    labels = np.argmin(d, axis=1)
    for j in range(k):
        if np.any(labels == j):
            C[j] = X[labels == j].mean(0)
    inertia = float(((X - C[labels]) ** 2).sum())
    return ClusterResult(k, C, labels, inertia, it)


_SEED_BUDGET = 2000


def kmeans(samples: np.ndarray, k: int, restarts: int = 10, seed=0) -> ClusterResult:
    """Best of ``restarts`` Lloyd runs from k-means++ seeds.

    For small inputs, where every ``k``-subset of points fits in a fixed
    budget, Lloyd is additionally started from each subset.
    """
    X = np.asarray(samples, dtype=float)
    if k < 1 or k > len(X):
        raise DomainError(f"k={k} must be in [1, {len(X)}]")
    if k > len(np.unique(X, axis=0)):
        raise DomainError(f"k={k} exceeds the number of distinct points")
    if k == 1:
        c = X.mean(0, keepdims=True)
        return ClusterResult(1, c, np.zeros(len(X), dtype=int), float(((X - c) ** 2).sum()))
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(restarts):
        res = lloyd(X, _kmeanspp(X, k, rng))
        if best is None or res.inertia < best.inertia - 1e-12 * max(res.inertia, 1.0):
            best = res
    if math.comb(len(X), k) <= _SEED_BUDGET:
        for subset in itertools.combinations(range(len(X)), k):
            if len(np.unique(X[list(subset)], axis=0)) < k:
                continue
            res = lloyd(X, X[list(subset)])
            if res.inertia < best.inertia - 1e-12 * max(res.inertia, 1.0):
                best = res
    return best


@dataclass
class ClusterSweep:
    ks: list[int]
    inertias: list[float]
    results: dict = field(default_factory=dict)


def cluster_sweep(samples: np.ndarray, ks=range(1, 11), restarts: int = 10, seed=0) -> ClusterSweep:
    """k-means for every ``k``; inertia is 0 once ``k`` reaches the distinct-point count."""
    X = np.asarray(samples, dtype=float)
    ks = list(ks)
    n_distinct = len(np.unique(X, axis=0))
    ss = np.random.SeedSequence(seed)
    results = {}
    inertias = []
    for k, child in zip(ks, ss.spawn(len(ks))):
        if k >= n_distinct:
            inertias.append(0.0)
            continue
        results[k] = kmeans(X, k, restarts, child)
        inertias.append(results[k].inertia)
    # best-of-restarts can leave a larger k marginally worse; keep the curve monotone
    inertias = list(np.minimum.accumulate(inertias))
    return ClusterSweep(ks, inertias, results)


def elbow_select(inertias, ks=None, sensitivity: float = 1.0) -> tuple[int, bool]:
    """Kneedle knee of a decreasing convex curve.

    Returns ``(k, found)``; when no knee qualifies the first k is returned with
    ``found=False``.
    """
    y = np.asarray(inertias, dtype=float)
    x = np.arange(1, len(y) + 1, dtype=float) if ks is None else np.asarray(ks, dtype=float)
    if len(y) < 3:
        raise DomainError("elbow detection needs at least 3 values of k")
    if np.any(np.diff(y) > 1e-9 * max(abs(y[0]), 1.0)):
        raise DomainError("inertias must be nonincreasing")
    if y[0] == y[-1]:
        return int(x[0]), False
    xn = (x - x[0]) / (x[-1] - x[0])
    yn = (y - y.min()) / (y.max() - y.min())
    diff = (1.0 - xn) - yn
    threshold_gap = sensitivity * np.mean(np.diff(xn))
    n = len(diff)
    for i in range(1, n - 1):
        if not (diff[i] >= diff[i - 1] and diff[i] > diff[i + 1]) or diff[i] <= 0:
            continue
        thr = diff[i] - threshold_gap
        for j in range(i + 1, n):
            if j < n - 1 and diff[j] >= diff[j - 1] and diff[j] > diff[j + 1]:
                break
            if diff[j] < thr:
                return int(x[i]), True
    return int(x[0]), False


@dataclass
class MetricsReport:
    """Fit and prediction SSE per model, with wall-clock fit cost kept apart."""

    sse_fit: dict[str, float] = field(default_factory=dict)
    sse_predict: dict[str, float] = field(default_factory=dict)
    seconds: dict[str, float] = field(default_factory=dict)

    def add(self, name: str, sse_fit: float, sse_predict: float, seconds: float | None = None):
        if sse_fit < 0 or sse_predict < 0 or (seconds is not None and seconds < 0):
            raise DomainError("metrics must be nonnegative")
        self.sse_fit[name] = float(sse_fit)
        self.sse_predict[name] = float(sse_predict)
        if seconds is not None:
            self.seconds[name] = float(seconds)

    def rows(self) -> list[tuple[str, float, float]]:
        return [(k, self.sse_fit[k], self.sse_predict[k]) for k in self.sse_fit]
