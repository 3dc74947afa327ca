"""Train a SACC on 16 FMBu beams and localise held-out scenes from its weights."""
import argparse
import csv

import numpy as np

from spatial_frontend.experiments import DEFAULT_TRAIN, localization_experiment
from spatial_frontend.sacc import save_params


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--train", type=int, default=100)
    ap.add_argument("--test", type=int, default=40)
    ap.add_argument("--csv", help="per-scene results")
    ap.add_argument("--params", help="save the SACC parameters of the first seed")
    args = ap.parse_args()
    rows = []
    for seed in args.seeds:
        res = localization_experiment(args.train, args.test, seed, DEFAULT_TRAIN)
        print(f"seed {seed}: within one beam {res.within_one_beam:.1%}, "
              f"mean error {np.mean(res.errors_deg):.2f} deg, mean flatness {np.mean(res.flatness):.3f}, "
              f"loss {res.trace[0]:.4f} -> {res.trace[-1]:.4f}")
        if args.params and seed == args.seeds[0]:
            save_params(args.params, res.params)
        for i in range(len(res.oracle_deg)):
            rows.append([seed, i, res.oracle_deg[i], res.estimates_deg[i], res.beam_offsets[i], res.flatness[i]])
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["seed", "scene", "oracle_deg", "estimate_deg", "beam_offset", "flatness"])
            w.writerows(rows)


if __name__ == "__main__":
    main()
