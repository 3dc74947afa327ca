"""Beampattern grids (azimuth x frequency, dB) for FMBu and FMBi, one beam each."""
import argparse
from pathlib import Path

import numpy as np

from spatial_frontend.beamform import ArrayGeometry, beampattern, design_beamset, save_beampattern_csv
from spatial_frontend.spectral import STFT_PRESETS


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out-dir", default=".")
    ap.add_argument("--beam", type=int, default=8)
    ap.add_argument("--loading", type=float, default=0.01)
    args = ap.parse_args()
    geom = ArrayGeometry()
    freqs = STFT_PRESETS["default"].frequencies()
    azimuths = np.arange(0, 181, 1.0)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for model in ("fmbu", "fmbi"):
        beams = design_beamset(geom, model, args.loading, 16, freqs)
        pattern = beampattern(beams.weights[args.beam], geom, azimuths, freqs)
        path = out / f"{model}_beam{args.beam}.csv"
        save_beampattern_csv(path, pattern, azimuths, freqs)
        look = beams.look_azimuths[args.beam]
        print(f"{model}: look {look:.3f} deg, mean gain off-look {np.mean(pattern[np.abs(azimuths - look) > 30]):.1f} dB"
              f" -> {path}")


if __name__ == "__main__":
    main()
