"""Mean early-reference SNR of the preset systems on held-out scenes."""
import argparse
import json

from spatial_frontend.experiments import ORDERING_PRESETS, ordering_experiment
from spatial_frontend.pipeline import PRESETS


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--presets", nargs="+", default=list(ORDERING_PRESETS), choices=sorted(PRESETS))
    ap.add_argument("--train", type=int, default=60)
    ap.add_argument("--test", type=int, default=20)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--out", help="write scores as JSON")
    args = ap.parse_args()
    scores = ordering_experiment(args.train, args.test, args.seed, tuple(args.presets))
    for name, value in sorted(scores.items(), key=lambda kv: kv[1]):
        print(f"{name:16s} {value:6.2f} dB")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(scores, fh, indent=2)


if __name__ == "__main__":
    main()
