"""Synthetic aggregate datasets, proportional noise and fit/predict splits."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .distributions import (
    OMEGA_D,
    OMEGA_RHO,
    GaussianMixtureSpec,
    ParameterMesh,
    build_mesh,
    discretize_mixture,
    two_gaussian,
)
from .models import InitialCondition, Tolerances, solve_coupled_array
from .numerics import DomainError, SpaceTimeField, SpatialGrid, TimeGrid


@dataclass(frozen=True)
class NoiseModel:
    sigma: float = 0.01
    kind: str = "proportional"

    def __post_init__(self):
        if self.sigma < 0:
            raise DomainError("noise sigma must be nonnegative")
        if self.kind != "proportional":
            raise DomainError("only proportional noise is supported")


@dataclass(frozen=True)
class DataSetSpec:
    x_min: float = 0.0
    x_max: float = 2.0
    n_x: int = 101
    t_min: float = 0.0
    t_max: float = 1.4
    n_t: int = 51
    mixture: GaussianMixtureSpec = field(default_factory=two_gaussian)
    mesh_D: int = 30
    mesh_rho: int = 60
    D_range: tuple[float, float] = OMEGA_D
    rho_range: tuple[float, float] = OMEGA_RHO
    sigma: float = 0.01
    t_split: float = 1.0
    seed: int = 0
    ic: InitialCondition = field(default_factory=InitialCondition)
    normalize: str = "component"
    rel_tol: float = 1e-6
    abs_tol: float = 1e-9

    def __post_init__(self):
        if not self.t_min < self.t_split < self.t_max:
            raise DomainError("t_split must lie strictly inside the time range")
        if self.sigma < 0:
            raise DomainError("sigma must be nonnegative")

    @property
    def spatial_grid(self) -> SpatialGrid:
        return SpatialGrid(self.x_min, self.x_max, self.n_x)

    @property
    def time_grid(self) -> TimeGrid:
        return TimeGrid(self.t_min, self.t_max, self.n_t)

    @property
    def tolerances(self) -> Tolerances:
        return Tolerances(self.rel_tol, self.abs_tol)

    def generation_mesh(self) -> ParameterMesh:
        return build_mesh(self.D_range, self.mesh_D, self.rho_range, self.mesh_rho)

    def generation_weights(self) -> np.ndarray:
        return discretize_mixture(self.mixture, self.generation_mesh(), self.normalize)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mixture"] = self.mixture.to_dict()
        d["D_range"] = list(self.D_range)
        d["rho_range"] = list(self.rho_range)
        ic = asdict(self.ic)
        if ic["samples"] is not None:
            ic["samples"] = list(ic["samples"])
        d["ic"] = ic
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DataSetSpec":
        d = dict(d)
        d["mixture"] = GaussianMixtureSpec.from_dict(d["mixture"])
        d["D_range"] = tuple(d["D_range"])
        d["rho_range"] = tuple(d["rho_range"])
        ic = dict(d["ic"])
        if ic.get("samples") is not None:
            ic["samples"] = tuple(ic["samples"])
        d["ic"] = InitialCondition(**ic)
        return cls(**d)


@dataclass
class ObservedDataSet:
    u_obs: SpaceTimeField
    u_clean: SpaceTimeField | None
    fit_mask: np.ndarray
    predict_mask: np.ndarray
    t_split: float
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.fit_mask = np.asarray(self.fit_mask, dtype=bool)
        self.predict_mask = np.asarray(self.predict_mask, dtype=bool)
        n = self.u_obs.time_grid.n_points
        if self.fit_mask.shape != (n,) or self.predict_mask.shape != (n,):
            raise DomainError("masks must cover the time axis")
        if np.any(self.fit_mask & self.predict_mask) or not np.all(self.fit_mask | self.predict_mask):
            raise DomainError("fit and predict masks must partition the time axis")

    @property
    def times(self) -> np.ndarray:
        return self.u_obs.times

    @property
    def split_index(self) -> int:
        """Index of the last fit time."""
        return int(np.nonzero(self.fit_mask)[0][-1])

    def rows(self, start: int, stop: int) -> "ObservedDataSet":
        clean = None if self.u_clean is None else self.u_clean.rows(start, stop)
        return ObservedDataSet(self.u_obs.rows(start, stop), clean,
                               self.fit_mask[start:stop], self.predict_mask[start:stop],
                               self.t_split, self.provenance)


def snap_to_grid(times: np.ndarray, t: float) -> int:
    return int(np.argmin(np.abs(np.asarray(times) - t)))


def _masks(times: np.ndarray, j_split: int) -> tuple[np.ndarray, np.ndarray]:
    fit = np.arange(len(times)) <= j_split
    return fit, ~fit


def apply_proportional_noise(u: SpaceTimeField, model: NoiseModel, seed) -> SpaceTimeField:
    """``u * (1 + eps)`` with i.i.d. ``eps ~ N(0, sigma^2)``; negatives are kept."""
    if model.sigma == 0:
        return SpaceTimeField(u.values.copy(), u.time_grid, u.spatial_grid)
    rng = np.random.default_rng(seed)
    eps = rng.normal(0.0, model.sigma, size=u.values.shape)
    return SpaceTimeField(u.values * (1.0 + eps), u.time_grid, u.spatial_grid)


def generate_dataset(spec: DataSetSpec) -> ObservedDataSet:
    """Solve the competition system for the discretized mixture and add noise."""
    sgrid, tgrid = spec.spatial_grid, spec.time_grid
    mesh = spec.generation_mesh()
    w = spec.generation_weights()
    D, rho = mesh.flat()
    keep = w > 0
    try:
        c = solve_coupled_array(D[keep], rho[keep], w[keep], spec.ic.evaluate(sgrid),
                                sgrid, tgrid.nodes, spec.tolerances)
    except Exception as exc:
        raise type(exc)(f"data generation failed for spec {spec.to_dict()}: {exc}") from exc
    clean = SpaceTimeField(np.einsum("i,tix->tx", w[keep], c), tgrid, sgrid)
    noisy = apply_proportional_noise(clean, NoiseModel(spec.sigma), spec.seed)
    j = snap_to_grid(tgrid.nodes, spec.t_split)
    if j >= tgrid.n_points - 1:
        raise DomainError("split leaves an empty prediction window")
    fit, pred = _masks(tgrid.nodes, j)
    prov = {"spec": spec.to_dict(), "seed": spec.seed, "t_split_requested": spec.t_split}
    return ObservedDataSet(noisy, clean, fit, pred, float(tgrid.nodes[j]), prov)


def split_fit_predict(data: ObservedDataSet, t_split: float | None = None
                      ) -> tuple[ObservedDataSet, ObservedDataSet]:
    """Fit view (times <= t_split) and predict view (times > t_split).

    Without ``t_split`` the dataset's recorded split is used; an explicit value
    must coincide with a grid time.
    """
    times = data.times
    if t_split is None:
        j = data.split_index
    else:
        j = snap_to_grid(times, t_split)
        if abs(times[j] - t_split) > 1e-9 * max(1.0, abs(t_split)):
            raise DomainError(f"t_split={t_split} is not a grid time")
    if j >= len(times) - 1:
        raise DomainError("split leaves an empty prediction window")
    fit, pred = _masks(times, j)
    whole = ObservedDataSet(data.u_obs, data.u_clean, fit, pred, float(times[j]), data.provenance)
    return whole.rows(0, j + 1), whole.rows(j + 1, len(times))


def _grid_meta(f: SpaceTimeField) -> dict:
    return {"time_grid": asdict(f.time_grid), "spatial_grid": asdict(f.spatial_grid)}


def write_dataset(data: ObservedDataSet, path) -> Path:
    """Write ``meta.json`` plus ``u_obs.csv`` / ``u_clean.csv`` into ``path``."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    np.savetxt(path / "u_obs.csv", data.u_obs.values, delimiter=",", fmt="%.17g")
    if data.u_clean is not None:
        np.savetxt(path / "u_clean.csv", data.u_clean.values, delimiter=",", fmt="%.17g")
    meta = {
        **data.provenance,
        "t_split": data.t_split,
        "split_index": data.split_index,
        "has_clean": data.u_clean is not None,
        **_grid_meta(data.u_obs),
    }
    (path / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    return path


def read_dataset(path) -> ObservedDataSet:
    path = Path(path)
    meta = json.loads((path / "meta.json").read_text())
    tgrid = TimeGrid(**meta["time_grid"])
    sgrid = SpatialGrid(**meta["spatial_grid"])

    def load(name):
        v = np.loadtxt(path / name, delimiter=",", ndmin=2)
        return SpaceTimeField(v, tgrid, sgrid)

    u_obs = load("u_obs.csv")
    clean = load("u_clean.csv") if meta.get("has_clean") else None
    fit, pred = _masks(tgrid.nodes, int(meta["split_index"]))
    prov = {k: meta[k] for k in ("spec", "seed", "t_split_requested") if k in meta}
    return ObservedDataSet(u_obs, clean, fit, pred, float(meta["t_split"]), prov)
