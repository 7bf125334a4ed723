"""Discrete-measure weight estimation on a basis library, with AIC mesh selection."""
from __future__ import annotations

import logging
import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .basis import BasisLibrary, subsample_library
from .distributions import ParameterMesh, check_simplex, project_to_simplex, random_simplex
from .models import InitialCondition, Tolerances, solve_coupled_array
from .numerics import DomainError, ShapeError, SpaceTimeField, SpatialGrid, TimeGrid
from .synthdata import ObservedDataSet

log = logging.getLogger(__name__)

DEFAULT_DIMS = tuple((a, b) for a in (5, 10, 20) for b in (5, 10, 20))


@dataclass(frozen=True)
class PrmfFitConfig:
    dims: tuple[tuple[int, int], ...] = DEFAULT_DIMS
    n_starts: int = 20
    tol: float = 1e-10
    max_iter: int = 5000
    seed: int = 0
    polish: bool = True


@dataclass
class PrmfFitResult:
    dims: tuple[int, int]
    weights: np.ndarray
    sse_fit: float
    aic: float
    n_obs: int
    start_sse: list[float] = field(default_factory=list)
    converged: bool = True
    iterations: int = 0
    seconds: float = 0.0

    @property
    def n_params(self) -> int:
        return self.dims[0] * self.dims[1]

    def to_dict(self) -> dict:
        return {
            "dims": list(self.dims),
            "weights": self.weights.tolist(),
            "sse_fit": self.sse_fit,
            "aic": self.aic,
            "n_obs": self.n_obs,
            "n_params": self.n_params,
            "start_sse": self.start_sse,
            "converged": self.converged,
            "iterations": self.iterations,
        }


class SimplexLeastSquares:
    """``min ||A w - b||^2`` over the probability simplex.

    Works with the Gram matrix so each iteration costs one ``M x M`` product.
    """

    def __init__(self, A: np.ndarray, b: np.ndarray):
        A = np.asarray(A, dtype=float)
        b = np.asarray(b, dtype=float).ravel()
        if A.shape[0] != b.size:
            raise ShapeError("design matrix and data have different lengths")
        if A.shape[0] > A.shape[1]:
            # reduce to an M x M problem; the orthogonal residual is a constant
            Q, R = np.linalg.qr(A)
            qb = Q.T @ b
            self.offset = float(np.sum((b - Q @ qb) ** 2))
            A, b = R, qb
        else:
            self.offset = 0.0
        self.A = A
        self.b = b
        self.G = A.T @ A
        self.h = A.T @ b
        self.bb = float(b @ b)
        m = self.G.shape[0]
        lam = float(np.linalg.eigvalsh(self.G)[-1]) if m > 0 else 0.0
        self.L = 2.0 * max(lam, 1e-300)

    @property
    def size(self) -> int:
        return self.G.shape[0]

    def objective(self, w) -> float:
        r = self.A @ w - self.b
        return float(r @ r)

    def sse(self, w) -> float:
        return self.objective(w) + self.offset

    def gradient(self, w) -> np.ndarray:
        return 2.0 * (self.G @ w - self.h)

    def fista(self, w0, tol: float, max_iter: int) -> tuple[np.ndarray, int, bool]:
        """Accelerated projected gradient with function-value restarts."""
        x = project_to_simplex(w0)
        y = x.copy()
        tk = 1.0
        f_old = self.objective(x)
        step = 1.0 / self.L
        for it in range(1, max_iter + 1):
            x_new = project_to_simplex(y - step * self.gradient(y))
            f_new = self.objective(x_new)
            if f_new > f_old:
                # restart momentum from the last iterate
                y = x.copy()
                tk = 1.0
                x_new = project_to_simplex(x - step * self.gradient(x))
                f_new = self.objective(x_new)
            t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * tk * tk))
            y = x_new + ((tk - 1.0) / t_next) * (x_new - x)
            tk = t_next
            change = abs(f_old - f_new)
            x, f_old = x_new, f_new
            if change <= tol * max(f_new + self.offset, 1e-300) or f_new == 0.0:
                return x, it, True
        return x, max_iter, False

    def _face_solve(self, free: np.ndarray) -> np.ndarray:
        """Minimizer on ``{w_free summing to 1}``, ignoring signs.

        The sum constraint is eliminated through the last free coordinate and
        the rest is an ordinary least-squares solve, avoiding the squared
        conditioning of the normal equations.
        """
        k = len(free)
        if k == 1:
            return np.ones(1)
        cols = self.A[:, free]
        last = cols[:, -1]
        B = cols[:, :-1] - last[:, None]
        z = np.linalg.lstsq(B, self.b - last, rcond=None)[0]
        return np.concatenate([z, [1.0 - z.sum()]])

    def active_set(self, w0, max_iter: int | None = None) -> tuple[np.ndarray, bool]:
        """Primal active-set refinement from a feasible start.

        Alternates exact face minimization with bound release by most negative
        multiplier. Returns the final point and whether the KKT conditions
        were met before the iteration cap.
        """
        w = project_to_simplex(w0)
        m = self.size
        max_iter = max_iter or 10 * m + 10
        free = w > 0
        # multiplier tolerance on the scale of the gradient at the origin
        kkt_tol = 1e-12 * max(float(np.max(np.abs(self.h))), 1e-300)
        for _ in range(max_iter):
            idx = np.nonzero(free)[0]
            v = self._face_solve(idx)
            p = v - w[idx]
            trial = np.zeros(m)
            trial[idx] = v
            f_w = self.objective(w)
            if np.max(np.abs(p)) <= 1e-14 or self.objective(trial) >= f_w * (1 - 1e-13):
                g = self.gradient(w)
                lam = float(np.mean(g[idx]))
                bound = np.nonzero(~free)[0]
                if len(bound) == 0:
                    return w, True
                mu = g[bound] - lam
                j = int(np.argmin(mu))
                if mu[j] >= -kkt_tol:
                    return w, True
                free[bound[j]] = True
                continue
            neg = p < 0
            alpha = 1.0
            blocking = -1
            if np.any(neg):
                ratios = w[idx][neg] / -p[neg]
                r = int(np.argmin(ratios))
                if ratios[r] < 1.0:
                    alpha = float(ratios[r])
                    blocking = int(idx[neg][r])
            w_new = w.copy()
            w_new[idx] = w[idx] + alpha * p
            if blocking >= 0:
                w_new[blocking] = 0.0
                free[blocking] = False
            w = np.maximum(w_new, 0.0)
            w /= w.sum()
        return w, False


def compute_aic(sse: float, n_obs: int, n_params: int) -> float:
    """``n ln(SSE/n) + 2 (p + 1)``; ``-inf`` with a warning for a zero SSE."""
    if n_obs <= n_params:
        raise DomainError("AIC needs more observations than parameters")
    if sse < 0:
        raise DomainError("SSE must be nonnegative")
    if sse == 0:
        warnings.warn("zero SSE gives an unbounded AIC", RuntimeWarning, stacklevel=2)
        return -math.inf
    return n_obs * math.log(sse / n_obs) + 2.0 * (n_params + 1)


def _check_grids(lib: BasisLibrary, data_fit: ObservedDataSet) -> np.ndarray:
    u = data_fit.u_obs
    if u.values.shape != (lib.time_grid.n_points, lib.spatial_grid.n_points):
        raise ShapeError("library and data grids differ")
    if not np.allclose(u.times, lib.time_grid.nodes, rtol=0, atol=1e-12):
        raise ShapeError("library and data time grids differ")
    return u.values


def fit_prmf(lib: BasisLibrary, data_fit: ObservedDataSet,
             config: PrmfFitConfig = PrmfFitConfig()) -> PrmfFitResult:
    """Best-of-``n_starts`` simplex least-squares fit of node weights."""
    t0 = time.perf_counter()
    values = _check_grids(lib, data_fit)
    problem = SimplexLeastSquares(lib.design_matrix(), values.ravel())
    m = problem.size
    n_obs = values.size
    if m == 1:
        w = np.ones(1)
        sse = problem.sse(w)
        return PrmfFitResult(lib.mesh.shape, w, sse, compute_aic(sse, n_obs, 1), n_obs, [sse],
                             True, 0, time.perf_counter() - t0)

    ss = np.random.SeedSequence([config.seed, *lib.mesh.shape])
    best = None
    start_sse = []
    all_conv = True
    total_it = 0
    for k, child in enumerate(ss.spawn(config.n_starts)):
        w0 = random_simplex(m, child)
        w, it, conv = problem.fista(w0, config.tol, config.max_iter)
        total_it += it
        if config.polish:
            w_p, kkt = problem.active_set(w)
            if problem.sse(w_p) <= problem.sse(w):
                w = w_p
                conv = conv or kkt
        sse = problem.sse(w)
        start_sse.append(sse)
        all_conv &= conv
        if best is None or sse < best[0]:
            best = (sse, k, w)
    if not all_conv:
        log.warning("fit on %s mesh hit max_iter on some starts", lib.mesh.shape)
    sse, _, w = best
    aic = compute_aic(sse, n_obs, m) if sse > 0 else -math.inf
    return PrmfFitResult(lib.mesh.shape, w, sse, aic, n_obs, start_sse, all_conv, total_it,
                         time.perf_counter() - t0)


def fit_candidates(lib: BasisLibrary, data_fit: ObservedDataSet,
                   config: PrmfFitConfig = PrmfFitConfig()) -> list[PrmfFitResult]:
    """Fit every candidate mesh obtained by subsampling ``lib``."""
    results = []
    for dims in config.dims:
        sub = subsample_library(lib, *dims)
        res = fit_prmf(sub, data_fit, config)
        res.dims = tuple(dims)
        results.append(res)
    return results


def select_model(results: list[PrmfFitResult]) -> PrmfFitResult:
    """Minimum AIC; ties go to fewer parameters, then smaller dims."""
    if not results:
        raise DomainError("no candidate fits")
    return min(results, key=lambda r: (r.aic, r.n_params, tuple(r.dims)))


def predict_rande(weights, mesh: ParameterMesh, ic: InitialCondition, tgrid: TimeGrid,
                  sgrid: SpatialGrid, tols: Tolerances = Tolerances()) -> SpaceTimeField:
    """Forecast by re-solving the closed competition system with fitted weights.

    Nodes with zero weight cannot influence the aggregate and are skipped.
    """
    w = check_simplex(weights, mesh.size)
    D, rho = mesh.flat()
    keep = w > 0
    c = solve_coupled_array(D[keep], rho[keep], w[keep], ic.evaluate(sgrid), sgrid,
                            tgrid.nodes, tols)
    return SpaceTimeField(np.einsum("i,tix->tx", w[keep], c), tgrid, sgrid)
