"""File-based pipeline stages: generate, basis, fit, analyze, report.

Each stage reads its inputs from a run directory, writes its artifacts next to
them and records hashes and timings in ``manifest.json``. Timings live only in
the manifest so every other JSON artifact is reproducible byte for byte.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import os
import shutil
import tempfile
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    DEFAULT_LEVELS,
    MetricsReport,
    cluster_sweep,
    denormalize_centers,
    elbow_select,
    normalize_samples,
    sse,
    wave_speed_profile,
)
from .basis import build_basis_library, read_library, subsample_library, write_library
from .distributions import OMEGA_D, OMEGA_RHO, build_mesh, sample_weights, weighted_moments
from .models import InitialCondition
from .numerics import SpaceTimeField
from .pointwise import PointwiseFitResult, fit_pointwise_sequence, simulate_pointwise
from .prmf import (
    DEFAULT_DIMS,
    PrmfFitConfig,
    compute_aic,
    fit_candidates,
    predict_rande,
    select_model,
)
from .synthdata import DataSetSpec, generate_dataset, read_dataset, split_fit_predict, write_dataset

log = logging.getLogger(__name__)

MANIFEST = "manifest.json"


class ConfigError(ValueError):
    """Bad configuration, missing inputs or a refused overwrite."""


def derive_seed(seed: int, step: str) -> int:
    """Deterministic 32-bit seed for a named stochastic step."""
    tag = int.from_bytes(hashlib.sha256(step.encode()).digest()[:4], "little")
    return int(np.random.SeedSequence([seed, tag]).generate_state(1)[0])


@dataclass
class RunConfig:
    """Everything that determines a run's results, plus where to put them.

    ``out_dir`` and ``threads`` do not enter the config hash.
    """

    out_dir: str = "run"
    seed: int = 0
    threads: int = 0
    dataset: DataSetSpec = field(default_factory=DataSetSpec)
    basis_dims: tuple[int, int] = (20, 20)
    prmf_dims: tuple[tuple[int, int], ...] = DEFAULT_DIMS
    prmf_starts: int = 20
    prmf_tol: float = 1e-10
    prmf_max_iter: int = 5000
    pde_Ms: tuple[int, ...] = (2, 4, 6)
    pde_starts: int = 20
    pde_engine: str = "compiled"
    n_samples: int = 10_000
    ks: tuple[int, ...] = tuple(range(1, 11))
    kmeans_restarts: int = 10
    elbow_sensitivity: float = 1.0
    levels: tuple[float, ...] = DEFAULT_LEVELS
    fit_window: tuple[float, float] = (0.6, 1.0)
    predict_window: tuple[float, float] | None = None

    def __post_init__(self):
        if self.threads < 0:
            raise ConfigError("threads must be nonnegative")
        for a, b in [self.basis_dims, *self.prmf_dims]:
            if a < 1 or b < 1:
                raise ConfigError("mesh dims must be positive")
        for a, b in self.prmf_dims:
            if a > self.basis_dims[0] or b > self.basis_dims[1]:
                raise ConfigError(f"candidate dims {(a, b)} exceed basis dims {self.basis_dims}")
        if self.prmf_starts < 1 or self.pde_starts < 0 or self.n_samples < 1:
            raise ConfigError("start and sample counts must be positive")
        if len(self.ks) < 3:
            raise ConfigError("the k sweep needs at least 3 values")

    @property
    def n_threads(self) -> int:
        return self.threads or os.cpu_count() or 1

    def step_seed(self, step: str) -> int:
        return derive_seed(self.seed, step)

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["dataset"] = self.dataset.to_dict()
        # the noise seed is derived from the global seed
        d["dataset"].pop("seed", None)
        return json.loads(json.dumps(d))

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config fields {sorted(unknown)}")
        try:
            if "dataset" in d:
                ds = {**DataSetSpec().to_dict(), **d["dataset"]}
                ds.pop("seed", None)
                d["dataset"] = DataSetSpec.from_dict(ds)
            for key in ("basis_dims", "fit_window", "ks", "levels", "pde_Ms"):
                if key in d and d[key] is not None:
                    d[key] = tuple(d[key])
            if d.get("predict_window") is not None:
                d["predict_window"] = tuple(d["predict_window"])
            if "prmf_dims" in d:
                d["prmf_dims"] = tuple(tuple(x) for x in d["prmf_dims"])
            return cls(**d)
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(f"invalid config: {exc}") from exc

    def _hash(self, keys) -> str:
        d = self.to_dict()
        blob = json.dumps({k: d[k] for k in keys}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()

    def config_hash(self) -> str:
        return self._hash([k for k in self.to_dict() if k not in ("out_dir", "threads")])

    def stage_hash(self, stage: str) -> str:
        """Hash of the settings a stage and its upstream stages depend on."""
        return self._hash(_STAGE_KEYS[stage])


_GEN = ("seed", "dataset")
_STAGE_KEYS = {
    "generate": _GEN,
    "basis": _GEN + ("basis_dims",),
    "fit-prmf": _GEN + ("basis_dims", "prmf_dims", "prmf_starts", "prmf_tol", "prmf_max_iter"),
    "fit-pde": _GEN + ("pde_Ms", "pde_starts", "pde_engine"),
}
_STAGE_KEYS["analyze"] = tuple(dict.fromkeys(
    _STAGE_KEYS["fit-prmf"] + _STAGE_KEYS["fit-pde"]
    + ("n_samples", "ks", "kmeans_restarts", "elbow_sensitivity", "levels", "fit_window",
       "predict_window")))


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Config from an optional JSON file with flat or ``dataset.``-prefixed overrides."""
    d = {}
    if path is not None:
        try:
            d = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key.startswith("dataset."):
            d.setdefault("dataset", {})[key.split(".", 1)[1]] = value
        else:
            d[key] = value
    return RunConfig.from_dict(d)


# ---------------------------------------------------------------- manifest

def file_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _hash_tree(root: Path, paths) -> dict[str, str]:
    return {str(Path(p).relative_to(root)): file_hash(p) for p in sorted(paths)}


def _atomic_write(path: Path, text: str):
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _dump(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def read_manifest(out: Path) -> dict:
    p = out / MANIFEST
    if not p.exists():
        return {"tool_version": __version__, "stages": {}}
    return json.loads(p.read_text())


def _record(out: Path, config: RunConfig, stage: str, inputs, outputs, timings: dict):
    man = read_manifest(out)
    man["tool_version"] = __version__
    man["config_hash"] = config.config_hash()
    man["config"] = config.to_dict()
    man["stages"][stage] = {
        "stage_hash": config.stage_hash(stage),
        "inputs": _hash_tree(out, inputs),
        "outputs": _hash_tree(out, outputs),
        "timings": timings,
    }
    _atomic_write(out / MANIFEST, _dump(man))
    return man


def _require(out: Path, config: RunConfig, stage: str):
    man = read_manifest(out)
    rec = man["stages"].get(stage)
    if rec is None:
        raise ConfigError(f"stage {stage!r} has not been run in {out}")
    if rec["stage_hash"] != config.stage_hash(stage):
        raise ConfigError(f"stage {stage!r} in {out} was run with different settings")


def _prepare(out: Path, sub: str, force: bool) -> Path:
    target = out / sub
    if target.exists():
        if not force:
            raise ConfigError(f"{target} exists; pass --force to overwrite")
        shutil.rmtree(target)
    target.mkdir(parents=True)
    return target


def _files(d: Path) -> list[Path]:
    return sorted(p for p in d.rglob("*") if p.is_file())


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return "nan" if not math.isfinite(v) else repr(float(v))
    return v


# ---------------------------------------------------------------- stages

def stage_generate(config: RunConfig, force: bool = False) -> Path:
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    target = _prepare(out, "dataset", force)
    t0 = time.perf_counter()
    spec = replace(config.dataset, seed=config.step_seed("generate"))
    data = generate_dataset(spec)
    write_dataset(data, target)
    _record(out, config, "generate", [], _files(target),
            {"generate": time.perf_counter() - t0})
    return target


def stage_basis(config: RunConfig, force: bool = False) -> Path:
    out = Path(config.out_dir)
    _require(out, config, "generate")
    data = read_dataset(out / "dataset")
    fit_view, _ = split_fit_predict(data)
    D_range, rho_range = config.dataset.D_range, config.dataset.rho_range
    mesh = build_mesh(D_range, config.basis_dims[0], rho_range, config.basis_dims[1])
    target = _prepare(out, "library", force)
    t0 = time.perf_counter()
    lib = build_basis_library(fit_view, mesh, config.dataset.tolerances)
    timings = {"basis": time.perf_counter() - t0,
               "basis_per_node": lib.provenance.pop("per_node_seconds"),
               "basis_solve": lib.provenance.pop("solve_seconds")}
    write_library(lib, target)
    _record(out, config, "basis", _files(out / "dataset"), _files(target), timings)
    return target


def prmf_config(config: RunConfig) -> PrmfFitConfig:
    return PrmfFitConfig(config.prmf_dims, config.prmf_starts, config.prmf_tol,
                         config.prmf_max_iter, config.step_seed("fit-prmf"))


def stage_fit_prmf(config: RunConfig, force: bool = False) -> Path:
    out = Path(config.out_dir)
    _require(out, config, "basis")
    data = read_dataset(out / "dataset")
    fit_view, _ = split_fit_predict(data)
    lib = read_library(out / "library")
    target = _prepare(out, "fit_prmf", force)
    t0 = time.perf_counter()
    results = fit_candidates(lib, fit_view, prmf_config(config))
    elapsed = time.perf_counter() - t0
    best = select_model(results)
    (target / "candidates.json").write_text(_dump([r.to_dict() for r in results]))
    (target / "selected.json").write_text(_dump(best.to_dict()))
    _write_csv(target / "aic_table.csv", ["M_D", "M_rho", "n_params", "sse_fit", "aic", "selected"],
               [(*r.dims, r.n_params, r.sse_fit, r.aic, int(r is best)) for r in results])
    timings = {"fit_prmf": elapsed}
    timings.update({f"fit_prmf_{r.dims[0]}x{r.dims[1]}": r.seconds for r in results})
    _record(out, config, "fit-prmf", _files(out / "dataset") + _files(out / "library"),
            _files(target), timings)
    return target


def stage_fit_pde(config: RunConfig, force: bool = False) -> Path:
    out = Path(config.out_dir)
    _require(out, config, "generate")
    data = read_dataset(out / "dataset")
    fit_view, _ = split_fit_predict(data)
    target = _prepare(out, "fit_pde", force)
    t0 = time.perf_counter()
    results = fit_pointwise_sequence(fit_view, config.pde_Ms, config.pde_starts,
                                     config.step_seed("fit-pde"), config.dataset.tolerances,
                                     config.pde_engine, workers=config.n_threads)
    elapsed = time.perf_counter() - t0
    n_obs = fit_view.u_obs.values.size
    rows = []
    for r in results:
        (target / f"pde_M{r.M}.json").write_text(_dump(r.to_dict()))
        rows.append((r.M, 3 * r.M, r.sse_fit, compute_aic(r.sse_fit, n_obs, 3 * r.M)))
    _write_csv(target / "pde_table.csv", ["M", "n_params", "sse_fit", "aic"], rows)
    timings = {"fit_pde": elapsed}
    timings.update({f"fit_pde_M{r.M}": r.seconds for r in results})
    _record(out, config, "fit-pde", _files(out / "dataset"), _files(target), timings)
    return target


def _load_pde(out: Path) -> list[PointwiseFitResult]:
    paths = sorted((out / "fit_pde").glob("pde_M*.json"), key=lambda p: int(p.stem[5:]))
    return [PointwiseFitResult.from_dict(json.loads(p.read_text())) for p in paths]


def stage_analyze(config: RunConfig, force: bool = False) -> Path:
    out = Path(config.out_dir)
    for stage in ("fit-prmf", "fit-pde"):
        _require(out, config, stage)
    t_start = time.perf_counter()
    data = read_dataset(out / "dataset")
    lib = read_library(out / "library")
    selected = json.loads((out / "fit_prmf" / "selected.json").read_text())
    candidates = json.loads((out / "fit_prmf" / "candidates.json").read_text())
    pde = _load_pde(out)
    target = _prepare(out, "analysis", force)
    tols = config.dataset.tolerances
    tgrid, sgrid = data.u_obs.time_grid, data.u_obs.spatial_grid
    c0 = np.clip(data.u_obs.values[0], 0.0, 1.0)
    ic = InitialCondition.from_samples(c0)
    timings = {}

    sub = subsample_library(lib, *selected["dims"])
    w = np.asarray(selected["weights"])
    t0 = time.perf_counter()
    fields_ = {"rande": predict_rande(w, sub.mesh, ic, tgrid, sgrid, tols)}
    timings["forecast_rande"] = time.perf_counter() - t0
    for r in pde:
        t0 = time.perf_counter()
        vals = simulate_pointwise(r.D, r.rho, r.weights, c0, sgrid, tgrid.nodes, tols,
                                  config.pde_engine)
        fields_[f"pde{r.M}"] = SpaceTimeField(vals, tgrid, sgrid)
        timings[f"forecast_pde{r.M}"] = time.perf_counter() - t0

    # fit / predict errors
    metrics = MetricsReport()
    clean = {}
    for name, f in fields_.items():
        metrics.add(name, sse(f, data.u_obs, data.fit_mask), sse(f, data.u_obs, data.predict_mask))
        if data.u_clean is not None:
            clean[name] = sse(f, data.u_clean, data.predict_mask)
    _write_csv(target / "sse.csv", ["model", "sse_fit", "sse_predict", "sse_predict_clean"],
               [(k, a, b, clean.get(k, float("nan"))) for k, a, b in metrics.rows()])

    # wave speeds
    t_split, t_max = data.t_split, float(tgrid.nodes[-1])
    windows = {"fit": tuple(config.fit_window),
               "predict": tuple(config.predict_window or (t_split, t_max))}
    speeds = {}
    rows = []
    for wname, window in windows.items():
        speeds[wname] = {}
        sources = {"data": data.u_obs, **({"clean": data.u_clean} if data.u_clean is not None else {}),
                   **fields_}
        for name, f in sources.items():
            prof = wave_speed_profile(f, config.levels, window)
            speeds[wname][name] = prof.speeds
            rows += [(wname, name, lv, sp, n) for lv, sp, n in
                     zip(prof.levels, prof.speeds, prof.n_crossings)]
    _write_csv(target / "wave_speeds.csv", ["window", "source", "u_star", "speed", "n_crossings"],
               rows)

    # recovered distribution and clustering
    P = sub.mesh.points()
    _write_csv(target / "weights.csv", ["D", "rho", "weight"],
               [(d, r, wi) for (d, r), wi in zip(P, w)])
    samples = sample_weights(w, sub.mesh, config.n_samples, config.step_seed("sample"))
    _write_csv(target / "samples.csv", ["D", "rho"], samples.points)
    D_range, rho_range = config.dataset.D_range, config.dataset.rho_range
    X = normalize_samples(samples, D_range, rho_range)
    t0 = time.perf_counter()
    sweep = cluster_sweep(X, config.ks, config.kmeans_restarts, config.step_seed("kmeans"))
    timings["kmeans"] = time.perf_counter() - t0
    k, found = elbow_select(sweep.inertias, sweep.ks, config.elbow_sensitivity)
    _write_csv(target / "kmeans_sweep.csv", ["k", "inertia"], zip(sweep.ks, sweep.inertias))
    if k in sweep.results:
        res = sweep.results[k]
        centers = denormalize_centers(res.centers, D_range, rho_range)
        sizes = np.bincount(res.labels, minlength=k)
    else:
        centers = np.unique(samples.points, axis=0)[:k]
        sizes = np.array([np.sum(np.all(samples.points == c, axis=1)) for c in centers])
    order = np.lexsort((centers[:, 1], centers[:, 0]))
    centers, sizes = centers[order], sizes[order]
    _write_csv(target / "clusters.csv", ["cluster", "D", "rho", "size"],
               [(i, c[0], c[1], int(s)) for i, (c, s) in enumerate(zip(centers, sizes))])

    ED, Erho = weighted_moments(w, sub.mesh)
    truth = [[c.mean_D, c.mean_rho] for c in config.dataset.mixture.components]
    summary = {
        "config_hash": config.config_hash(),
        "tool_version": __version__,
        "t_split": t_split,
        "n_obs_fit": int(data.fit_mask.sum() * sgrid.n_points),
        "prmf": {
            "selected_dims": selected["dims"],
            "selected_sse_fit": selected["sse_fit"],
            "selected_aic": selected["aic"],
            "mesh_spacing": list(sub.mesh.spacing()),
            "mean_D": ED,
            "mean_rho": Erho,
            "aic_table": [{"dims": c["dims"], "sse_fit": c["sse_fit"], "aic": c["aic"]}
                          for c in candidates],
        },
        "pde": [{"M": r.M, "D": r.D, "rho": r.rho, "weights": r.weights, "sse_fit": r.sse_fit}
                for r in pde],
        "sse": {name: {"fit": metrics.sse_fit[name], "predict": metrics.sse_predict[name],
                       **({"predict_clean": clean[name]} if name in clean else {})}
                for name in fields_},
        "wave_speeds": {"levels": list(config.levels),
                        "windows": {k_: list(v) for k_, v in windows.items()},
                        "speeds": speeds},
        "clustering": {
            "ks": sweep.ks,
            "inertias": sweep.inertias,
            "chosen_k": k,
            "knee_found": found,
            "centers": centers,
            "sizes": sizes,
            "true_means": truth,
        },
    }
    (target / "summary.json").write_text(_dump(summary))
    timings["analyze"] = time.perf_counter() - t_start
    inputs = [p for d in ("dataset", "library", "fit_prmf", "fit_pde") for p in _files(out / d)]
    _record(out, config, "analyze", inputs, _files(target), timings)
    return target


def stage_report(config: RunConfig) -> Path:
    """Plain-text digest of the summary and stage timings."""
    out = Path(config.out_dir)
    _require(out, config, "analyze")
    summary = json.loads((out / "analysis" / "summary.json").read_text())
    man = read_manifest(out)
    lines = [f"run {out}  config {summary['config_hash'][:12]}  version {summary['tool_version']}",
             "", "model        sse_fit      sse_predict"]
    for name, s in summary["sse"].items():
        lines.append(f"{name:<10} {s['fit']:>12.6g} {s['predict']:>14.6g}")
    p = summary["prmf"]
    lines += ["", f"selected mesh {p['selected_dims'][0]}x{p['selected_dims'][1]}"
              f"  AIC {p['selected_aic']:.2f}  E[D] {p['mean_D']:.4g}  E[rho] {p['mean_rho']:.4g}"]
    c = summary["clustering"]
    lines.append(f"elbow k={c['chosen_k']} (knee found: {c['knee_found']})")
    for (d, r), n in zip(c["centers"], c["sizes"]):
        lines.append(f"  center D={d:.4g} rho={r:.4g} n={n}")
    lines += ["", "stage timings (s)"]
    for stage, rec in man["stages"].items():
        for key, val in rec["timings"].items():
            lines.append(f"  {stage:<9} {key:<22} {val:10.3f}")
    path = out / "report.txt"
    path.write_text("\n".join(lines) + "\n")
    # the report is derived from the manifest, so it is listed but not hashed into it
    man["report"] = path.name
    _atomic_write(out / MANIFEST, _dump(man))
    return path


def run_all(config: RunConfig, force: bool = False) -> Path:
    stage_generate(config, force)
    stage_basis(config, force)
    stage_fit_prmf(config, force)
    stage_fit_pde(config, force)
    stage_analyze(config, force)
    stage_report(config)
    return Path(config.out_dir)
