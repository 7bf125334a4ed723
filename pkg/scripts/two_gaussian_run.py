"""End-to-end run on the default two-Gaussian dataset, then a short digest.

Usage: python scripts/two_gaussian_run.py [--out runs/two] [--seed 0] [--force]
"""
import argparse
import json
from pathlib import Path

from rande_prmf.pipeline import RunConfig, run_all


def digest(out: Path) -> dict:
    s = json.loads((out / "analysis" / "summary.json").read_text())
    return {
        "selected_mesh": s["prmf"]["selected_dims"],
        "predict_sse": {k: v["predict"] for k, v in s["sse"].items()},
        "predict_sse_clean": {k: v["predict_clean"] for k, v in s["sse"].items()},
        "elbow_k": s["clustering"]["chosen_k"],
        "centers": s["clustering"]["centers"],
        "true_means": s["clustering"]["true_means"],
    }


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="runs/two")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--force", action="store_true")
    args = p.parse_args()
    out = run_all(RunConfig(out_dir=args.out, seed=args.seed), args.force)
    print(json.dumps(digest(out), indent=2))


if __name__ == "__main__":
    main()
