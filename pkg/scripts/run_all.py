"""Run every experiment at its default configuration and print the summaries.

    python scripts/run_all.py --out results [--seed 0] [--only wta-adapt,...]

Each experiment writes its own subdirectory (manifest, CSVs, summary.json),
so an interrupted sweep can be continued with ``synsamp resume``.
"""
import argparse
import json
import os
import time

from synsamp import cli
from synsamp.experiments import EXPERIMENTS


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", required=True)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--only", default="", help="comma-separated experiment names")
    args = ap.parse_args()
    names = [n for n in args.only.split(",") if n] or list(EXPERIMENTS)
    runs = [(n, []) for n in names]
    if "rbm-generalization" in names:
        i = names.index("rbm-generalization")
        runs[i:i + 1] = [("rbm-generalization", [f"sampler.prior={p}"]) for p in ("uniform", "bimodal")]
    for name, overrides in runs:
        tag = name + ("-" + overrides[0].split("=")[1] if overrides else "")
        out = os.path.join(args.out, tag)
        t = time.perf_counter()
        exp, _ = cli.run_experiment(name, out, seed=args.seed, overrides=overrides, quiet=True)
        print(f"{tag}: {time.perf_counter() - t:.0f} s")
        print(json.dumps(exp.summary, indent=2, default=float))


if __name__ == "__main__":
    main()
