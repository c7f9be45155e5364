"""Total MSE of the MDPDE at the GSM-selected and IWJ-selected gamma.

    python scripts/compare_selectors.py --reps 100 --epsilon 0 0.085
"""

import argparse
import json

from paneldpd.simulate import SimConfig
from paneldpd.tuning import compare_selectors


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--m", type=int, default=100)
    p.add_argument("--seed", type=int, default=8)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--epsilon", type=float, nargs="+", default=[0.0, 0.085])
    args = p.parse_args()

    out = []
    for eps in args.epsilon:
        gsm, iwj = compare_selectors(SimConfig(m=args.m, epsilon=eps, seed=args.seed), args.reps, threads=args.threads)
        out.append({"epsilon": eps, "gsm": gsm.to_dict(), "iwj": iwj.to_dict()})
    print(json.dumps(out, indent=2, sort_keys=True))


if __name__ == "__main__":
    main()
