"""Early-reference SNR and effective C50 before/after WPE on the reference scene,
plus the effective-C50 table for the dereverberation front ends."""
import argparse
import json

from spatial_frontend.experiments import c50_table, wpe_reference_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", help="write results as JSON")
    args = ap.parse_args()
    rows = wpe_reference_experiment()
    table = c50_table()
    for name, row in rows.items():
        print(f"{name:6s} " + "  ".join(f"{k}={v:.2f}" for k, v in row.items()))
    print("effective C50 by front end: " + ", ".join(f"{k} {v:.2f} dB" for k, v in table.items()))
    if args.out:
        with open(args.out, "w") as fh:
            json.dump({"reference_scene": rows, "c50_table": table}, fh, indent=2)


if __name__ == "__main__":
    main()
