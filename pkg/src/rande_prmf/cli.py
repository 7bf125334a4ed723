"""Command-line front end.

Exit codes: 0 success, 2 configuration or input error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

from . import __version__
from .distributions import DegenerateError, three_gaussian, two_gaussian
from .numerics import DomainError, IntegrationError, ShapeError
from .pipeline import (
    ConfigError,
    load_config,
    run_all,
    stage_analyze,
    stage_basis,
    stage_fit_pde,
    stage_fit_prmf,
    stage_generate,
    stage_report,
)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

_MIXTURES = {"two": two_gaussian, "three": three_gaussian}


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON run config; flags override its fields")
    p.add_argument("--out", dest="out_dir", help="run directory (default: run)")
    p.add_argument("--seed", type=int, help="global seed; step seeds derive from it")
    p.add_argument("--threads", type=int, help="worker threads (default: all cores)")
    p.add_argument("--force", action="store_true", help="overwrite existing stage output")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rande-prmf", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="synthesize a noisy aggregate dataset")
    _common(g)
    g.add_argument("--sigma", type=float, help="proportional noise level")
    g.add_argument("--mixture", choices=sorted(_MIXTURES), help="generating distribution")
    g.add_argument("--n-t", type=int, dest="n_t", help="number of time points")

    b = sub.add_parser("basis", help="solve the phenotype basis library")
    _common(b)
    b.add_argument("--mesh", type=int, nargs=2, metavar=("M_D", "M_RHO"), dest="basis_dims")

    f = sub.add_parser("fit", help="fit mesh weights (prmf) or pointwise M-PDE models (pde)")
    _common(f)
    f.add_argument("--method", choices=("prmf", "pde"), required=True)
    f.add_argument("--starts", type=int, help="random starts per fit")
    f.add_argument("--Ms", type=int, nargs="+", dest="pde_Ms", help="subpopulation counts")

    a = sub.add_parser("analyze", help="errors, wave speeds and clustering")
    _common(a)
    a.add_argument("--samples", type=int, dest="n_samples", help="phenotype samples H")

    r = sub.add_parser("report", help="text digest of an analyzed run")
    _common(r)

    al = sub.add_parser("run", help="every stage in order")
    _common(al)
    return parser


def _overrides(args) -> dict:
    o = {k: getattr(args, k, None) for k in ("out_dir", "seed", "threads", "basis_dims",
                                             "pde_Ms", "n_samples")}
    if getattr(args, "sigma", None) is not None:
        o["dataset.sigma"] = args.sigma
    if getattr(args, "n_t", None) is not None:
        o["dataset.n_t"] = args.n_t
    if getattr(args, "mixture", None) is not None:
        o["dataset.mixture"] = _MIXTURES[args.mixture]().to_dict()
    if getattr(args, "starts", None) is not None:
        o["prmf_starts" if args.method == "prmf" else "pde_starts"] = args.starts
    return o


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = load_config(args.config, _overrides(args))
        if args.command == "generate":
            out = stage_generate(config, args.force)
        elif args.command == "basis":
            out = stage_basis(config, args.force)
        elif args.command == "fit":
            fn = stage_fit_prmf if args.method == "prmf" else stage_fit_pde
            out = fn(config, args.force)
        elif args.command == "analyze":
            out = stage_analyze(config, args.force)
        elif args.command == "report":
            out = stage_report(config)
            sys.stdout.write(out.read_text())
        else:
            out = run_all(config, args.force)
    except (ConfigError, ShapeError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IntegrationError, DegenerateError, DomainError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    print(json.dumps({"command": args.command, "output": str(out)}))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
