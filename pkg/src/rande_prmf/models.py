"""Forward solvers: Fisher-KPP, the competition system and data-driven phenotypes.

Every model is discretized with the method of lines on a uniform grid with
zero-flux ends and advanced with :func:`integrate_adaptive`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .numerics import (
    DomainError,
    ShapeError,
    SpaceTimeField,
    SpatialGrid,
    TimeGrid,
    TimeInterpolator,
    _laplacian_into,
    integrate_adaptive,
)


@dataclass(frozen=True)
class Tolerances:
    rel: float = 1e-6
    abs: float = 1e-9


@dataclass(frozen=True)
class PhenotypeNode:
    D: float
    rho: float
    alpha: float = 1.0

    def __post_init__(self):
        if self.D < 0 or self.rho < 0:
            raise DomainError(f"negative rate in {self}")
        if self.alpha <= 0:
            raise DomainError("competitive advantage must be positive")


@dataclass(frozen=True)
class InitialCondition:
    """Initial density profile.

    ``gaussian``: ``amplitude * exp(-((x - center) / width)**2)``.
    ``step``: ``amplitude`` for ``x <= center + width``, zero beyond.
    ``custom``: ``samples`` given node by node.
    """

    kind: str = "gaussian"
    amplitude: float = 0.1
    width: float = 0.1
    center: float = 0.0
    samples: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind not in ("gaussian", "step", "custom"):
            raise DomainError(f"unknown initial condition kind {self.kind!r}")
        if self.kind == "custom":
            if self.samples is None:
                raise DomainError("custom initial condition needs samples")
            s = np.asarray(self.samples, dtype=float)
            if not np.all(np.isfinite(s)) or s.min() < 0 or s.max() > 1:
                raise DomainError("initial samples must lie in [0, 1]")
        elif not 0 <= self.amplitude <= 1:
            raise DomainError("amplitude must lie in [0, 1]")

    @classmethod
    def from_samples(cls, values: np.ndarray) -> "InitialCondition":
        return cls(kind="custom", samples=tuple(float(v) for v in values))

    def evaluate(self, grid: SpatialGrid) -> np.ndarray:
        x = grid.nodes
        if self.kind == "gaussian":
            return self.amplitude * np.exp(-(((x - self.center) / self.width) ** 2))
        if self.kind == "step":
            return np.where(x <= self.center + self.width, self.amplitude, 0.0)
        s = np.asarray(self.samples, dtype=float)
        if len(s) != grid.n_points:
            raise ShapeError(f"{len(s)} initial samples for {grid.n_points} grid points")
        return s.copy()


@dataclass
class CoupledSolution:
    aggregate: SpaceTimeField
    per_node: list[SpaceTimeField] = field(default_factory=list)

    def stacked(self) -> np.ndarray:
        """Per-node values as one ``(N_t, M, N_x)`` array."""
        return np.stack([f.values for f in self.per_node], axis=1)


def _check_weights(weights, n: int) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    if w.shape != (n,):
        raise ShapeError(f"{w.size} weights for {n} nodes")
    if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
        raise DomainError("weights must lie on the probability simplex")
    return w


def _as_time_grid(tgrid) -> TimeGrid:
    if isinstance(tgrid, TimeGrid):
        return tgrid
    t = np.asarray(tgrid, dtype=float)
    return TimeGrid(float(t[0]), float(t[-1]), len(t))


def solve_fisher_kpp(
    node: PhenotypeNode,
    ic: InitialCondition,
    sgrid: SpatialGrid,
    tgrid: TimeGrid,
    tols: Tolerances = Tolerances(),
) -> SpaceTimeField:
    """Solve ``u_t = D u_xx + rho u (1 - u)``."""
    u0 = ic.evaluate(sgrid)
    inv_dx2 = 1.0 / sgrid.dx**2
    D, rho = node.D, node.rho
    lap = np.empty_like(u0)

    def rhs(t, u):
        _laplacian_into(u, inv_dx2, lap)
        return D * lap + rho * u * (1.0 - u)

    tgrid = _as_time_grid(tgrid)
    values = integrate_adaptive(rhs, u0, tgrid, tols.rel, tols.abs)
    return SpaceTimeField(values, tgrid, sgrid)


def solve_coupled_array(
    D: np.ndarray,
    rho: np.ndarray,
    weights: np.ndarray,
    c0: np.ndarray,
    sgrid: SpatialGrid,
    times: np.ndarray,
    tols: Tolerances = Tolerances(),
    alpha: np.ndarray | None = None,
) -> np.ndarray:
    """Array-level competition solve, returns ``(N_t, M, N_x)`` per-node densities.

    Every phenotype starts from the same profile ``c0``.
    """
    D = np.asarray(D, dtype=float)[:, None]
    rho = np.asarray(rho, dtype=float)[:, None]
    w = np.asarray(weights, dtype=float)
    comp = w if alpha is None else w * np.asarray(alpha, dtype=float)
    M = D.shape[0]
    y0 = np.tile(np.asarray(c0, dtype=float), (M, 1))
    inv_dx2 = 1.0 / sgrid.dx**2
    lap = np.empty_like(y0)

    def rhs(t, c):
        _laplacian_into(c, inv_dx2, lap)
        return D * lap + rho * c * (1.0 - comp @ c)

    return integrate_adaptive(rhs, y0, times, tols.rel, tols.abs)


def solve_coupled_competition(
    nodes: Sequence[PhenotypeNode],
    weights,
    ic: InitialCondition,
    sgrid: SpatialGrid,
    tgrid: TimeGrid,
    tols: Tolerances = Tolerances(),
) -> CoupledSolution:
    """Solve the M-phenotype system with shared competition through the aggregate."""
    if len(nodes) == 0:
        raise DomainError("need at least one phenotype")
    w = _check_weights(weights, len(nodes))
    tgrid = _as_time_grid(tgrid)
    c = solve_coupled_array(
        np.array([n.D for n in nodes]),
        np.array([n.rho for n in nodes]),
        w,
        ic.evaluate(sgrid),
        sgrid,
        tgrid.nodes,
        tols,
        alpha=np.array([n.alpha for n in nodes]),
    )
    per_node = [SpaceTimeField(c[:, i], tgrid, sgrid) for i in range(len(nodes))]
    agg = SpaceTimeField(np.einsum("i,tix->tx", w, c), tgrid, sgrid)
    return CoupledSolution(agg, per_node)


def solve_phenotypes_vs_data_array(
    D: np.ndarray,
    rho: np.ndarray,
    u_obs: SpaceTimeField,
    c0: np.ndarray,
    tols: Tolerances = Tolerances(),
) -> np.ndarray:
    """Advance many phenotypes driven by observed aggregate density at once.

    Each row obeys ``c_t = D c_xx + rho c (1 - u_obs(x, t))`` with ``u_obs``
    linear in time between observations. Returns ``(N_t, M, N_x)``.
    """
    c0 = np.asarray(c0, dtype=float)
    sgrid = u_obs.spatial_grid
    if c0.shape != (sgrid.n_points,):
        raise ShapeError("c0 length does not match the data grid")
    if np.any(c0 < 0):
        raise DomainError("c0 must be nonnegative")
    D = np.asarray(D, dtype=float)[:, None]
    rho = np.asarray(rho, dtype=float)[:, None]
    driver = TimeInterpolator(u_obs.times, u_obs.values)
    y0 = np.tile(c0, (D.shape[0], 1))
    inv_dx2 = 1.0 / sgrid.dx**2
    lap = np.empty_like(y0)

    def rhs(t, c):
        _laplacian_into(c, inv_dx2, lap)
        return D * lap + rho * c * (1.0 - driver(t))

    return integrate_adaptive(rhs, y0, u_obs.times, tols.rel, tols.abs)


def solve_phenotype_vs_data(
    node: PhenotypeNode,
    u_obs: SpaceTimeField,
    c0: np.ndarray,
    tols: Tolerances = Tolerances(),
    tgrid: TimeGrid | None = None,
) -> SpaceTimeField:
    """Single phenotype driven by observed data on ``u_obs``'s time grid.

    ``tgrid`` may restrict the solve to a sub-interval; it must lie on the
    observed time range.
    """
    data = u_obs
    if tgrid is not None:
        t = u_obs.times
        if tgrid.t_min < t[0] - 1e-12 or tgrid.t_max > t[-1] + 1e-12:
            raise DomainError("solve interval not covered by the observed data")
        i0 = int(np.argmin(np.abs(t - tgrid.t_min)))
        i1 = int(np.argmin(np.abs(t - tgrid.t_max)))
        if tgrid.n_points != i1 - i0 + 1 or abs(t[i0] - tgrid.t_min) > 1e-12:
            raise DomainError("solve grid must coincide with observation times")
        data = u_obs.rows(i0, i1 + 1)
    values = solve_phenotypes_vs_data_array(
        np.array([node.D]), np.array([node.rho]), data, c0, tols)
    return SpaceTimeField(values[:, 0], data.time_grid, data.spatial_grid)


def aggregate(weights, per_node: Sequence[SpaceTimeField]) -> SpaceTimeField:
    """Pointwise ``sum_i w_i c_i``."""
    if len(per_node) == 0:
        raise ShapeError("no fields to aggregate")
    w = _check_weights(weights, len(per_node))
    shape = per_node[0].values.shape
    total = np.zeros(shape)
    for wi, f in zip(w, per_node):
        if f.values.shape != shape:
            raise ShapeError("fields have mismatched shapes")
        total += wi * f.values
    return SpaceTimeField(total, per_node[0].time_grid, per_node[0].spatial_grid)
