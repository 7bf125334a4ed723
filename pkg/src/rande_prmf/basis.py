"""Phenotype basis solutions driven by observed aggregate data."""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .distributions import ParameterMesh
from .models import Tolerances, solve_phenotypes_vs_data_array
from .numerics import DomainError, IntegrationError, SpaceTimeField, SpatialGrid, TimeGrid
from .synthdata import ObservedDataSet


@dataclass
class BasisLibrary:
    """Solutions ``c(x, t; D_i, rho_i)`` for every mesh node.

    ``solutions`` has shape ``(N_t, M, N_x)`` with nodes in mesh order.
    """

    mesh: ParameterMesh
    solutions: np.ndarray
    time_grid: TimeGrid
    spatial_grid: SpatialGrid
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        expected = (self.time_grid.n_points, self.mesh.size, self.spatial_grid.n_points)
        if self.solutions.shape != expected:
            raise DomainError(f"solutions shape {self.solutions.shape} != {expected}")

    def __len__(self) -> int:
        return self.mesh.size

    def field(self, i: int) -> SpaceTimeField:
        return SpaceTimeField(self.solutions[:, i], self.time_grid, self.spatial_grid)

    def design_matrix(self) -> np.ndarray:
        """``(N_t * N_x, M)`` matrix whose columns are flattened node solutions."""
        nt, m, nx = self.solutions.shape
        return self.solutions.transpose(0, 2, 1).reshape(nt * nx, m)

    def predict(self, weights) -> np.ndarray:
        return np.einsum("i,tix->tx", np.asarray(weights, dtype=float), self.solutions)


def build_basis_library(data_fit: ObservedDataSet, mesh: ParameterMesh,
                        tols: Tolerances = Tolerances()) -> BasisLibrary:
    """Solve every node against the fit-window data, starting from its first row.

    All nodes are advanced together in one integration; if that fails, nodes
    are retried one by one so the error names the offending node.
    """
    u_obs = data_fit.u_obs
    if u_obs.time_grid.n_points < 2:
        raise DomainError("fit view needs at least two time points")
    D, rho = mesh.flat()
    c0 = np.clip(u_obs.values[0], 0.0, 1.0)
    t0 = time.perf_counter()
    try:
        sol = solve_phenotypes_vs_data_array(D, rho, u_obs, c0, tols)
    except IntegrationError:
        for i in range(mesh.size):
            try:
                solve_phenotypes_vs_data_array(D[i:i + 1], rho[i:i + 1], u_obs, c0, tols)
            except IntegrationError as exc:
                raise IntegrationError(
                    f"basis solve failed at node {i} (D={D[i]:.6g}, rho={rho[i]:.6g}): {exc}",
                    exc.t_last) from exc
        raise
    elapsed = time.perf_counter() - t0
    prov = {
        "dataset": data_fit.provenance.get("spec", {}).get("seed"),
        "rel_tol": tols.rel,
        "abs_tol": tols.abs,
        "solve_seconds": elapsed,
        "per_node_seconds": elapsed / mesh.size,
    }
    return BasisLibrary(mesh, sol, u_obs.time_grid, u_obs.spatial_grid, prov)


def subsample_indices(n_source: int, n_target: int) -> np.ndarray:
    """Rounded even spacing over source indices, endpoints kept, duplicates dropped."""
    if n_target > n_source:
        raise DomainError(f"cannot subsample {n_source} nodes to {n_target}")
    if n_target < 1:
        raise DomainError("target count must be positive")
    if n_target == 1:
        return np.array([0])
    idx = np.rint(np.linspace(0, n_source - 1, n_target)).astype(int)
    idx[0], idx[-1] = 0, n_source - 1
    return np.unique(idx)


def subsample_library(lib: BasisLibrary, M_D: int, M_rho: int) -> BasisLibrary:
    """Sub-library on a coarser node subset; no solutions are recomputed."""
    nD, nr = lib.mesh.shape
    iD = subsample_indices(nD, M_D)
    ir = subsample_indices(nr, M_rho)
    flat = (iD[:, None] * nr + ir[None, :]).ravel()
    mesh = ParameterMesh(lib.mesh.D_nodes[iD], lib.mesh.rho_nodes[ir])
    prov = {**lib.provenance, "subsampled_from": list(lib.mesh.shape),
            "D_indices": iD.tolist(), "rho_indices": ir.tolist()}
    return BasisLibrary(mesh, lib.solutions[:, flat], lib.time_grid, lib.spatial_grid, prov)


def write_library(lib: BasisLibrary, path) -> Path:
    """``library.json`` plus ``c_<iD>_<irho>.csv`` per node."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    nD, nr = lib.mesh.shape
    files = []
    for iD in range(nD):
        for ir in range(nr):
            name = f"c_{iD}_{ir}.csv"
            np.savetxt(path / name, lib.solutions[:, iD * nr + ir], delimiter=",", fmt="%.17g")
            files.append(name)
    meta = {
        "mesh": lib.mesh.to_dict(),
        "time_grid": asdict(lib.time_grid),
        "spatial_grid": asdict(lib.spatial_grid),
        "provenance": lib.provenance,
        "files": files,
    }
    (path / "library.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    return path


def read_library(path) -> BasisLibrary:
    path = Path(path)
    meta = json.loads((path / "library.json").read_text())
    mesh = ParameterMesh.from_dict(meta["mesh"])
    tgrid = TimeGrid(**meta["time_grid"])
    sgrid = SpatialGrid(**meta["spatial_grid"])
    nD, nr = mesh.shape
    sol = np.empty((tgrid.n_points, mesh.size, sgrid.n_points))
    for iD in range(nD):
        for ir in range(nr):
            sol[:, iD * nr + ir] = np.loadtxt(path / f"c_{iD}_{ir}.csv", delimiter=",", ndmin=2)
    return BasisLibrary(mesh, sol, tgrid, sgrid, meta.get("provenance", {}))
