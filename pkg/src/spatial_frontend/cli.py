"""Command line entry point: ``spatial-frontend <command> ...``.

Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 numerical error.
The number of BLAS threads can be pinned with ``SPATIAL_FRONTEND_THREADS``.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .beamform import ArrayGeometry, beampattern, design_beamset, load_beamset, save_beampattern_csv, save_beamset
from .errors import ConfigError, NumericalError
from .metrics import MetricReport, c50_from_rir, drr, early_reference, reference_snr
from .pipeline import Pipeline, load_pipeline, save_weights_csv
from .sacc import (SaccTrainConfig, average_weights, localize, sacc_train, save_params,
                   save_trace)
from .scene import Rir, RoomScene, generate_rir, render_scene, scene_sidecar
from .spectral import istft, log_power_normalize, read_wav, stft, stft_preset, write_wav

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERICAL = 0, 2, 3, 4
THREADS_ENV = "SPATIAL_FRONTEND_THREADS"

log = logging.getLogger("spatial_frontend")


def _read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}: invalid JSON ({err})") from None


def _write_json(path, doc):
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _geometry(path):
    return ArrayGeometry() if path is None else ArrayGeometry.from_dict(_read_json(path))


# ----------------------------------------------------------------- commands

def cmd_simulate(args):
    scene = RoomScene.from_dict(_read_json(args.scene))
    geom = _geometry(args.geometry)
    clean = read_wav(args.clean)
    if clean.num_channels != 1:
        raise ConfigError(f"{args.clean}: clean source must be mono, got {clean.num_channels} channels")
    rir = generate_rir(scene, geom, clean.sample_rate)
    rendered = render_scene(clean, rir, scene, geom)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_wav(out / "mixture.wav", rendered.wave)
    np.save(out / "rir.npy", rir.taps)
    side = scene_sidecar(scene, rir, rendered, geom, c50=c50_from_rir(rir), clean_path=Path(args.clean).resolve())
    side["rir_path"] = "rir.npy"
    _write_json(out / "scene.json", side)
    log.info("wrote %s", out)


def cmd_process(args):
    cfg = load_pipeline(args.pipeline)
    cfg.validate()  # before reading any audio
    wave = read_wav(args.input)
    pipe = Pipeline(cfg, num_channels=wave.num_channels)
    res = pipe.run(wave, keep_stages=args.dump_stages)
    write_wav(args.out, res.output)
    if args.dump_stages:
        stem = Path(args.out).with_suffix("")
        for name, spec in res.stages.items():
            write_wav(f"{stem}.{name}.wav", istft(spec, length=wave.num_samples))
        save_weights_csv(f"{stem}.weights.csv", res.weights)
    log.info("wrote %s", args.out)


def cmd_design_beams(args):
    geom = _geometry(args.geometry)
    cfg = stft_preset(args.stft)
    freqs = cfg.frequencies(args.sample_rate)
    beams = design_beamset(geom, args.model, args.loading, args.num_beams, freqs)
    save_beamset(args.out, beams)
    if args.beampattern:
        azimuths = np.arange(0, 181, 1.0)
        pattern = beampattern(beams.weights[args.beam], geom, azimuths, freqs)
        save_beampattern_csv(args.beampattern, pattern, azimuths, freqs)


def _load_pair(entry, base):
    x = np.load(base / entry["features"])
    y = np.load(base / entry["target"])
    return x, y


def cmd_train_sacc(args):
    """Manifest: {"train": {...}, "pairs": [{"features": x.npy, "target": y.npy}]}
    or {"pairs": [{"mixture": m.wav, "clean": c.wav}], "pipeline": p.json}.
    """
    manifest = _read_json(args.manifest)
    base = Path(args.manifest).parent
    cfg = SaccTrainConfig.from_dict(manifest.get("train", {}))
    entries = manifest.get("pairs")
    if not entries:
        raise ConfigError(f"{args.manifest}: 'pairs' must be a non-empty list")
    pipe = None
    if "pipeline" in manifest:
        pcfg = load_pipeline(base / manifest["pipeline"])
        pipe = Pipeline(replace(pcfg, combiner=replace(pcfg.combiner, kind="mean")))
    dataset = []
    for i, e in enumerate(entries):
        if "features" in e:
            dataset.append(_load_pair(e, base))
        elif pipe is not None and "mixture" in e:
            spec, _ = pipe.front(read_wav(base / e["mixture"]))
            clean = read_wav(base / e["clean"])
            target = log_power_normalize(stft(clean, pipe.stft_cfg)).data[:, 0, :]
            T = min(spec.num_frames, target.shape[0])
            dataset.append((log_power_normalize(spec).data[:T], target[:T]))
        else:
            raise ConfigError(f"{args.manifest}: pairs[{i}] needs features/target or mixture/clean + pipeline")
    params, trace = sacc_train(dataset, cfg)
    save_params(args.out, params)
    save_trace(args.trace or Path(args.out).with_suffix(".loss.json"), trace)


def cmd_report(args):
    side = _read_json(args.sidecar)
    if side.get("format") != "scene-sidecar":
        raise ConfigError(f"{args.sidecar}: not a scene sidecar")
    processed = read_wav(args.processed)
    base = Path(args.sidecar).parent
    taps = np.load(base / side.get("rir_path", "rir.npy"))
    scene = RoomScene.from_dict(side["scene"])
    rir = Rir(taps, side["sample_rate"], np.asarray(side["direct_index"]), scene)
    c50s = [float(x) for x in c50_from_rir(rir)]
    report = MetricReport(c50_db=c50s, drr_db=[drr(h, rir.sample_rate) for h in taps],
                          realized_snr_db=side.get("realized_snr_db", {}))
    if "clean_path" in side and Path(side["clean_path"]).is_file():
        clean = read_wav(side["clean_path"])
        ref = early_reference(clean, rir).samples[args.channel]
        report.early_reference_snr_db = reference_snr(processed.samples[0], ref)
    report.to_json(args.out)


def cmd_localize(args):
    beams = load_beamset(args.beams)
    if args.weights.endswith(".csv"):
        W = np.loadtxt(args.weights, delimiter=",", skiprows=1)[:, 1:]
    else:
        W = np.atleast_2d(np.asarray(_read_json(args.weights), dtype=float))
    result = localize(average_weights(W), beams)
    _write_json(args.out, result.to_dict())


# ----------------------------------------------------------------- plumbing

def build_parser():
    p = argparse.ArgumentParser(prog="spatial-frontend", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="render a reverberant multichannel scene")
    s.add_argument("--scene", required=True)
    s.add_argument("--clean", required=True)
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--geometry")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("process", help="run a pipeline on a multichannel WAV")
    s.add_argument("--pipeline", required=True)
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--dump-stages", action="store_true")
    s.set_defaults(func=cmd_process)

    s = sub.add_parser("design-beams", help="design a fixed MVDR beam set")
    s.add_argument("--geometry")
    s.add_argument("--model", choices=["fmbu", "fmbi"], default="fmbu")
    s.add_argument("--out", required=True)
    s.add_argument("--beampattern")
    s.add_argument("--beam", type=int, default=8, help="beam exported with --beampattern")
    s.add_argument("--loading", type=float, default=0.01)
    s.add_argument("--num-beams", type=int, default=16)
    s.add_argument("--stft", default="default")
    s.add_argument("--sample-rate", type=int, default=16000)
    s.set_defaults(func=cmd_design_beams)

    s = sub.add_parser("train-sacc", help="train a channel combinator")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--trace", help="loss trace JSON (default: <out>.loss.json)")
    s.set_defaults(func=cmd_train_sacc)

    s = sub.add_parser("report", help="oracle metrics for a processed WAV")
    s.add_argument("--processed", required=True)
    s.add_argument("--sidecar", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--channel", type=int, default=3, help="reference microphone")
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("localize", help="source azimuth from combiner weights")
    s.add_argument("--weights", required=True, help="weights CSV from process --dump-stages, or JSON")
    s.add_argument("--beams", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_localize)
    return p


def _limit_threads():
    n = os.environ.get(THREADS_ENV)
    if not n:
        return None
    try:
        n = int(n)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {n!r}") from None
    from threadpoolctl import threadpool_limits
    return threadpool_limits(n)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        limiter = _limit_threads()
        try:
            args.func(args)
        finally:
            if limiter is not None:
                limiter.unregister()
    except (ConfigError, KeyError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as err:
        print(f"numerical error: {err}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as err:
        print(f"io error: {err}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
