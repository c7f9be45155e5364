"""Bias and MSE tables for MLE and MDPDE over the contamination levels.

    python scripts/reproduce_tables.py --reps 200 --threads 4 > tables.json
"""

import argparse
import json

from paneldpd.scp import ScpConfig
from paneldpd.simulate import CONTAMINATION_LEVELS, EstimatorSpec, SimConfig, run_replications


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--reps", type=int, default=200)
    p.add_argument("--m", type=int, default=100)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--gammas", default="0.2,0.5,0.8")
    p.add_argument("--radius-mode", default="adaptive", choices=("adaptive", "fixed", "ratio"))
    args = p.parse_args()

    scp = ScpConfig(radius_mode=args.radius_mode)
    specs = [EstimatorSpec(None, r, scp) for r in (True, False)]
    specs += [EstimatorSpec(float(g), r, scp) for g in args.gammas.split(",") for r in (True, False)]
    tables = [
        run_replications(SimConfig(m=args.m, epsilon=eps, seed=args.seed), args.reps, specs, args.threads).to_dict()
        for eps in CONTAMINATION_LEVELS
    ]
    print(json.dumps(tables, indent=2, sort_keys=True))


if __name__ == "__main__":
    main()
