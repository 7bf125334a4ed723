"""End-to-end run on the three-Gaussian dataset.

The elbow choice here is observational: the third component is small and
tends to merge with a neighbour in the inertia curve.

Usage: python scripts/three_gaussian_run.py [--out runs/three] [--seed 0] [--force]
"""
import argparse
import json
from dataclasses import replace

from rande_prmf.distributions import three_gaussian
from rande_prmf.pipeline import RunConfig, run_all

from two_gaussian_run import digest


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="runs/three")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--force", action="store_true")
    args = p.parse_args()
    base = RunConfig(out_dir=args.out, seed=args.seed)
    config = replace(base, dataset=replace(base.dataset, mixture=three_gaussian()))
    out = run_all(config, args.force)
    print(json.dumps(digest(out), indent=2))


if __name__ == "__main__":
    main()
