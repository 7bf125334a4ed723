"""Parameter meshes, simplex weights and Gaussian mixtures over (D, rho)."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import DomainError, ShapeError

OMEGA_D = (0.0, 0.12)
OMEGA_RHO = (0.0, 12.0)


class DegenerateError(ValueError):
    pass


@dataclass(frozen=True)
class ParameterMesh:
    """Tensor mesh of phenotype nodes.

    Flattened node order is row-major with D as the slow axis, i.e. node
    ``i = iD * n_rho + irho``.
    """

    D_nodes: np.ndarray
    rho_nodes: np.ndarray

    def __post_init__(self):
        D = np.asarray(self.D_nodes, dtype=float)
        r = np.asarray(self.rho_nodes, dtype=float)
        object.__setattr__(self, "D_nodes", D)
        object.__setattr__(self, "rho_nodes", r)
        for name, a in (("D", D), ("rho", r)):
            if a.ndim != 1 or len(a) < 1:
                raise DomainError(f"{name} nodes must be a non-empty 1-D array")
            if len(a) > 1 and np.any(np.diff(a) <= 0):
                raise DomainError(f"{name} nodes must be strictly increasing")

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.D_nodes), len(self.rho_nodes)

    @property
    def size(self) -> int:
        return len(self.D_nodes) * len(self.rho_nodes)

    @property
    def D_range(self) -> tuple[float, float]:
        return float(self.D_nodes[0]), float(self.D_nodes[-1])

    @property
    def rho_range(self) -> tuple[float, float]:
        return float(self.rho_nodes[0]), float(self.rho_nodes[-1])

    def flat(self) -> tuple[np.ndarray, np.ndarray]:
        """``(D_i, rho_i)`` for every node in flattened order."""
        DD, RR = np.meshgrid(self.D_nodes, self.rho_nodes, indexing="ij")
        return DD.ravel(), RR.ravel()

    def points(self) -> np.ndarray:
        return np.column_stack(self.flat())

    def spacing(self) -> tuple[float, float]:
        """Largest node gap along each axis (zero for a single node)."""
        dD = float(np.max(np.diff(self.D_nodes))) if len(self.D_nodes) > 1 else 0.0
        dr = float(np.max(np.diff(self.rho_nodes))) if len(self.rho_nodes) > 1 else 0.0
        return dD, dr

    def to_dict(self) -> dict:
        return {"D_nodes": self.D_nodes.tolist(), "rho_nodes": self.rho_nodes.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "ParameterMesh":
        return cls(np.array(d["D_nodes"]), np.array(d["rho_nodes"]))


def build_mesh(D_range, M_D: int, rho_range, M_rho: int) -> ParameterMesh:
    """Evenly spaced mesh with exactly ``M_D`` x ``M_rho`` endpoint-inclusive nodes."""
    if M_D < 2 or M_rho < 2:
        raise DomainError("each axis needs at least 2 nodes")
    if not (D_range[1] > D_range[0] and rho_range[1] > rho_range[0]):
        raise DomainError("parameter ranges must be nondegenerate")
    return ParameterMesh(np.linspace(D_range[0], D_range[1], M_D),
                         np.linspace(rho_range[0], rho_range[1], M_rho))


@dataclass(frozen=True)
class GaussianComponent:
    mean_D: float
    std_D: float
    mean_rho: float
    std_rho: float
    weight: float = 1.0


@dataclass(frozen=True)
class GaussianMixtureSpec:
    components: tuple[GaussianComponent, ...]

    def __post_init__(self):
        comps = tuple(self.components)
        object.__setattr__(self, "components", comps)
        if not comps:
            raise DomainError("mixture needs at least one component")
        if any(c.std_D <= 0 or c.std_rho <= 0 for c in comps):
            raise DomainError("standard deviations must be positive")
        w = np.array([c.weight for c in comps])
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise DomainError("component weights must be nonnegative and sum to 1")

    def to_dict(self) -> dict:
        return {"components": [vars(c).copy() for c in self.components]}

    @classmethod
    def from_dict(cls, d: dict) -> "GaussianMixtureSpec":
        return cls(tuple(GaussianComponent(**c) for c in d["components"]))


def two_gaussian() -> GaussianMixtureSpec:
    """Proliferative (grow) and invasive (go) populations, equal mass."""
    return GaussianMixtureSpec((
        GaussianComponent(0.01, 5e-4, 10.0, 1.0, 0.5),
        GaussianComponent(0.1, 1e-3, 1.0, 1.0, 0.5),
    ))


def three_gaussian() -> GaussianMixtureSpec:
    """Two-population mixture plus an intermediate phenotype."""
    return GaussianMixtureSpec((
        GaussianComponent(0.01, 5e-4, 10.0, 1.0, 1 / 3),
        GaussianComponent(0.04, 5e-4, 5.0, 1.0, 1 / 3),
        GaussianComponent(0.1, 1e-3, 1.0, 1.0, 1 / 3),
    ))


def _normal_pdf(x, mean, std):
    z = (np.asarray(x, dtype=float) - mean) / std
    return np.exp(-0.5 * z * z) / (np.sqrt(2.0 * np.pi) * std)


def component_density(c: GaussianComponent, D, rho) -> np.ndarray:
    return _normal_pdf(D, c.mean_D, c.std_D) * _normal_pdf(rho, c.mean_rho, c.std_rho)


def mixture_density(spec: GaussianMixtureSpec, D, rho) -> np.ndarray:
    """Weighted sum of axis-independent bivariate normal densities."""
    return sum(c.weight * component_density(c, D, rho) for c in spec.components)


def discretize_mixture(spec: GaussianMixtureSpec, mesh: ParameterMesh,
                       normalize: str = "component") -> np.ndarray:
    """Node weights for a mixture evaluated on ``mesh``.

    ``normalize="component"`` scales each component's node densities to sum
    to its mixture weight before adding, so every subpopulation keeps its mass
    even when its spread is narrower than the node spacing.
    ``normalize="joint"`` uses weights proportional to the mixture density.
    """
    D, rho = mesh.flat()
    if normalize == "joint":
        dens = mixture_density(spec, D, rho)
        total = dens.sum()
        if not total > 0:
            raise DegenerateError("mixture density vanishes on every mesh node")
        return dens / total
    if normalize != "component":
        raise DomainError(f"unknown normalization {normalize!r}")
    w = np.zeros(mesh.size)
    for k, c in enumerate(spec.components):
        if c.weight == 0:
            continue
        dens = component_density(c, D, rho)
        total = dens.sum()
        if not total > 0:
            raise DegenerateError(f"component {k} vanishes on every mesh node")
        w += c.weight * dens / total
    return w / w.sum()


@dataclass
class SampleSet:
    """``(H, 2)`` array of ``(D, rho)`` realizations."""

    points: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))

    def __len__(self) -> int:
        return len(self.points)

    @property
    def D(self) -> np.ndarray:
        return self.points[:, 0]

    @property
    def rho(self) -> np.ndarray:
        return self.points[:, 1]


def check_simplex(w, n: int | None = None, tol: float = 1e-9) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.ndim != 1 or (n is not None and len(w) != n):
        raise ShapeError("weight vector has the wrong shape")
    if np.any(w < 0) or abs(w.sum() - 1.0) > tol:
        raise DomainError("weights must be nonnegative and sum to 1")
    return w


def sample_weights(weights, mesh: ParameterMesh, H: int, seed) -> SampleSet:
    """Draw ``H`` nodes i.i.d. with probabilities ``weights``."""
    if H <= 0:
        raise DomainError("need a positive sample count")
    w = check_simplex(weights, mesh.size)
    rng = np.random.default_rng(seed)
    idx = rng.choice(mesh.size, size=H, p=w / w.sum())
    return SampleSet(mesh.points()[idx])


_ARANGE = np.arange(4097, dtype=float)


def project_to_simplex(v) -> np.ndarray:
    """Euclidean projection onto ``{w >= 0, sum(w) = 1}`` (sort-and-threshold)."""
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or len(v) == 0 or not np.isfinite(v).all():
        raise DomainError("need a finite non-empty vector")
    u = np.sort(v)[::-1]
    css = np.cumsum(u)
    css -= 1.0
    n = len(v)
    k = _ARANGE[1:n + 1] if n < len(_ARANGE) else np.arange(1, n + 1, dtype=float)
    # the support test holds for a prefix of the sorted entries
    r = int(np.count_nonzero(u * k > css))
    theta = css[r - 1] / r
    return np.maximum(v - theta, 0.0)


def random_simplex(dim: int, seed) -> np.ndarray:
    """Flat Dirichlet draw."""
    if dim < 1:
        raise DomainError("dimension must be at least 1")
    rng = np.random.default_rng(seed)
    return rng.dirichlet(np.ones(dim))


def weighted_moments(weights, mesh: ParameterMesh) -> tuple[float, float]:
    """Mean D and mean rho under node weights."""
    D, rho = mesh.flat()
    w = np.asarray(weights, dtype=float)
    return float(w @ D), float(w @ rho)
