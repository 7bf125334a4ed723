"""Pointwise inverse problem for the M-subpopulation competition model."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit, logit, softmax

from .distributions import OMEGA_D, OMEGA_RHO
from .models import Tolerances, solve_coupled_array
from .numerics import DomainError, IntegrationError
from .synthdata import ObservedDataSet

log = logging.getLogger(__name__)

_EDGE = 1e-12
_FAIL_SSE = 1e10


@dataclass(frozen=True)
class PointwiseFitConfig:
    M: int = 2
    D_bounds: tuple[float, float] = OMEGA_D
    rho_bounds: tuple[float, float] = OMEGA_RHO
    n_starts: int = 20
    seed: int = 0
    max_evals: int | None = None
    xatol: float = 1e-6
    fatol: float = 1e-10

    def __post_init__(self):
        if self.M < 1:
            raise DomainError("need at least one subpopulation")
        for (lo, hi), (omin, omax) in ((self.D_bounds, OMEGA_D), (self.rho_bounds, OMEGA_RHO)):
            if not omin <= lo < hi <= omax:
                raise DomainError(f"bounds ({lo}, {hi}) not inside ({omin}, {omax})")


@dataclass
class PointwiseFitResult:
    D: np.ndarray
    rho: np.ndarray
    weights: np.ndarray
    sse_fit: float
    start_sse: list[float] = field(default_factory=list)
    n_evals: int = 0
    seconds: float = 0.0

    @property
    def M(self) -> int:
        return len(self.D)

    @property
    def q(self) -> np.ndarray:
        """``(D_1..D_M, rho_1..rho_M, w_1..w_M)``."""
        return np.concatenate([self.D, self.rho, self.weights])

    def to_dict(self) -> dict:
        return {
            "M": self.M,
            "D": self.D.tolist(),
            "rho": self.rho.tolist(),
            "weights": self.weights.tolist(),
            "sse_fit": self.sse_fit,
            "start_sse": self.start_sse,
            "n_evals": self.n_evals,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PointwiseFitResult":
        return cls(np.array(d["D"]), np.array(d["rho"]), np.array(d["weights"]),
                   d["sse_fit"], d.get("start_sse", []), d.get("n_evals", 0))


def _to_box(z, lo, hi):
    return lo + (hi - lo) * expit(z)


def _from_box(v, lo, hi):
    s = np.clip((np.asarray(v, dtype=float) - lo) / (hi - lo), _EDGE, 1 - _EDGE)
    return logit(s)


def decode(z: np.ndarray, config: PointwiseFitConfig):
    """Unconstrained vector to ``(D, rho, w)`` inside the admissible box."""
    M = config.M
    D = _to_box(z[:M], *config.D_bounds)
    rho = _to_box(z[M:2 * M], *config.rho_bounds)
    w = softmax(z[2 * M:])
    return D, rho, w


def encode(D, rho, w, config: PointwiseFitConfig) -> np.ndarray:
    w = np.clip(np.asarray(w, dtype=float), 1e-12, None)
    return np.concatenate([_from_box(D, *config.D_bounds), _from_box(rho, *config.rho_bounds),
                           np.log(w / w.sum())])


def _make_solver(engine: str):
    if engine == "compiled":
        from ._fastsolve import solve_coupled_fast

        def run(D, rho, w, c0, sgrid, times, tols):
            vals, status, t_last = solve_coupled_fast(D, rho, w, c0, sgrid.dx, times,
                                                      tols.rel, tols.abs)
            if status != 0:
                raise IntegrationError("competition solve failed", t_last)
            return vals
        return run
    if engine == "numpy":
        return solve_coupled_array
    raise DomainError(f"unknown solver engine {engine!r}")


def simulate_pointwise(D, rho, w, c0, sgrid, times, tols: Tolerances = Tolerances(),
                       engine: str = "compiled") -> np.ndarray:
    """Aggregate density ``(N_t, N_x)`` of the competition model."""
    vals = _make_solver(engine)(np.asarray(D), np.asarray(rho), np.asarray(w), c0, sgrid,
                                np.asarray(times), tols)
    return np.einsum("i,tix->tx", np.asarray(w, dtype=float), vals)


def pad_solution(res: PointwiseFitResult, M: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Split the heaviest subpopulations in half until there are ``M``.

    Duplicated nodes with halved weights give an identical aggregate, so the
    padded point reproduces the smaller model's SSE.
    """
    D, rho, w = list(res.D), list(res.rho), list(res.weights)
    if M < len(D):
        raise DomainError("cannot pad to fewer subpopulations")
    while len(D) < M:
        i = int(np.argmax(w))
        w[i] *= 0.5
        D.append(D[i])
        rho.append(rho[i])
        w.append(w[i])
    return np.array(D), np.array(rho), np.array(w)


def fit_pointwise(data_fit: ObservedDataSet, config: PointwiseFitConfig,
                  tols: Tolerances = Tolerances(), engine: str = "compiled",
                  extra_starts: list[np.ndarray] | None = None,
                  workers: int = 1) -> PointwiseFitResult:
    """Multi-start Nelder-Mead fit of ``(D_i, rho_i, w_i)`` to fit-window data.

    Starts are drawn uniformly from the admissible box (weights flat Dirichlet);
    ``extra_starts`` are unconstrained vectors tried before the random ones.
    With ``workers > 1`` starts run on a thread pool; the best start is chosen
    by SSE then start index, so the result does not depend on scheduling.
    """
    t0 = time.perf_counter()
    u = data_fit.u_obs
    data = u.values
    times = u.times
    c0 = np.clip(data[0], 0.0, 1.0)
    sgrid = u.spatial_grid
    solve = _make_solver(engine)
    M = config.M

    rng = np.random.default_rng(np.random.SeedSequence([config.seed, M]))
    starts = list(extra_starts or [])
    for _ in range(config.n_starts):
        D0 = rng.uniform(*config.D_bounds, size=M)
        r0 = rng.uniform(*config.rho_bounds, size=M)
        w0 = rng.dirichlet(np.ones(M))
        starts.append(encode(D0, r0, w0, config))
    max_evals = config.max_evals or 200 * 3 * M

    def run_start(z0):
        n = 0

        def objective(z):
            nonlocal n
            n += 1
            D, rho, w = decode(z, config)
            try:
                vals = solve(D, rho, w, c0, sgrid, times, tols)
            except IntegrationError:
                return _FAIL_SSE
            r = np.einsum("i,tix->tx", w, vals) - data
            sse = float(np.sum(r * r))
            return sse if np.isfinite(sse) else _FAIL_SSE

        res = minimize(objective, z0, method="Nelder-Mead",
                       options={"maxfev": max_evals, "xatol": config.xatol,
                                "fatol": config.fatol, "adaptive": True})
        return float(res.fun), res.x, n

    outcomes = []
    if workers > 1 and len(starts) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(run_start, z0) for z0 in starts]
            for fut in futures:
                try:
                    outcomes.append(fut.result())
                except Exception as exc:  # noqa: BLE001 - keep going, report below
                    outcomes.append(exc)
    else:
        for z0 in starts:
            try:
                outcomes.append(run_start(z0))
            except Exception as exc:  # noqa: BLE001 - keep going, report below
                outcomes.append(exc)

    best = None
    start_sse = []
    failures = []
    n_evals = 0
    for k, out in enumerate(outcomes):
        if isinstance(out, Exception):
            failures.append(f"start {k}: {out}")
            start_sse.append(float("nan"))
            continue
        sse, x, n = out
        n_evals += n
        start_sse.append(sse)
        if sse >= _FAIL_SSE:
            failures.append(f"start {k}: every evaluation failed")
        if best is None or sse < best[0]:
            best = (sse, k, x)
    if best is None or best[0] >= _FAIL_SSE:
        raise IntegrationError("all pointwise starts failed: " + "; ".join(failures), 0.0)
    D, rho, w = decode(best[2], config)
    order = np.lexsort((rho, D))
    return PointwiseFitResult(D[order], rho[order], w[order], best[0], start_sse, n_evals,
                              time.perf_counter() - t0)


def fit_pointwise_sequence(data_fit: ObservedDataSet, Ms=(2, 4, 6), n_starts: int = 20,
                           seed: int = 0, tols: Tolerances = Tolerances(),
                           engine: str = "compiled", workers: int = 1,
                           **config_kw) -> list[PointwiseFitResult]:
    """Fit increasing subpopulation counts, seeding each with the padded previous optimum."""
    results = []
    prev = None
    for M in Ms:
        config = PointwiseFitConfig(M=M, n_starts=n_starts, seed=seed, **config_kw)
        extra = []
        if prev is not None:
            extra.append(encode(*pad_solution(prev, M), config))
        res = fit_pointwise(data_fit, config, tols, engine, extra, workers)
        if prev is not None and res.sse_fit > prev.sse_fit:
            log.warning("M=%d fit worse than padded M=%d optimum", M, prev.M)
        results.append(res)
        prev = res
    return results
