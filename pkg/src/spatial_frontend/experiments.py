"""Desk-scale experiments: reference scene, scene sets, localisation, ordering."""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .beamform import ArrayGeometry, beam_azimuths
from .dereverb import WPE_PRESETS, wpe
from .metrics import c50, early_reference, effective_c50, reference_snr
from .pipeline import PRESETS, Pipeline, PipelineConfig
from .sacc import SaccParams, SaccTrainConfig, average_weights, localize, sacc_train
from .scene import RoomScene, generate_rir, render_scene, synthetic_utterance
from .spectral import SAMPLE_RATE, WaveformBuffer, istft, log_power_normalize, stft

REFERENCE_SCENE = RoomScene(azimuth=60.0, range=1.5, t60=0.5, ambient_snr=20.0, seed=7)
REFERENCE_CHANNEL = 3
REFERENCE_DURATION = 6.0
IDENTIFY_TAPS = 4800  # 300 ms at 16 kHz


@dataclass
class SceneSample:
    scene: RoomScene
    clean: WaveformBuffer
    rir: object
    rendered: object

    @property
    def wave(self):
        return self.rendered.wave

    def early(self):
        """Per-microphone early reference at the rendered gain and scale."""
        ref = early_reference(self.clean, self.rir).samples
        g = 10 ** (self.rendered.gains_db / 20)[:, None] * self.rendered.scale
        return WaveformBuffer(ref * g, self.clean.sample_rate)


def make_scene(scene: RoomScene, duration=3.0, geom=ArrayGeometry(), source_seed=None):
    clean = synthetic_utterance(duration, SAMPLE_RATE, scene.seed if source_seed is None else source_seed)
    rir = generate_rir(scene, geom)
    return SceneSample(scene, clean, rir, render_scene(clean, rir, scene, geom))


def reference_scene(duration=REFERENCE_DURATION):
    return make_scene(REFERENCE_SCENE, duration)


def random_scenes(n, seed, t60=(0.3, 0.6), snr=(5.0, 25.0), num_beams=16, jitter_deg=None,
                  range_m=(1.0, 3.0), duration=2.0, geom=ArrayGeometry()):
    """Scenes with azimuths near the beam grid: a random look angle plus jitter."""
    rng = np.random.default_rng(seed)
    grid = beam_azimuths(num_beams)
    width = 180.0 / num_beams
    jitter_deg = 0.4 * width if jitter_deg is None else jitter_deg
    out = []
    for i in range(n):
        k = rng.integers(num_beams)
        az = float(np.clip(grid[k] + rng.uniform(-jitter_deg, jitter_deg), 0.0, 180.0))
        scene = RoomScene(azimuth=az, range=float(rng.uniform(*range_m)), t60=float(rng.uniform(*t60)),
                          ambient_snr=float(rng.uniform(*snr)), level_dbfs=float(rng.uniform(-15, -1)),
                          seed=int(rng.integers(2 ** 31)))
        out.append(make_scene(scene, duration, geom))
    return out


def clean_target(sample: SceneSample, cfg_stft):
    return log_power_normalize(stft(sample.clean, cfg_stft)).data[:, 0, :]


def training_pairs(pipe: Pipeline, samples):
    """``(X, Y_clean)`` pairs from the combiner input of ``pipe``."""
    pairs = []
    for s in samples:
        spec, _ = pipe.front(s.wave)
        pairs.append((log_power_normalize(spec).data, clean_target(s, pipe.stft_cfg)))
    return pairs


DEFAULT_TRAIN = SaccTrainConfig(learning_rate=1e-3, epochs=100, batch_size=4, seed=0)


def train_for(cfg: PipelineConfig, samples, train_cfg=DEFAULT_TRAIN):
    """Train a SACC on the front end of ``cfg``; returns (params, trace, pipeline)."""
    probe = Pipeline(replace(cfg, combiner=replace(cfg.combiner, kind="mean")))
    params, trace = sacc_train(training_pairs(probe, samples), train_cfg)
    return params, trace, Pipeline(cfg, params)


# ------------------------------------------------------------------ criteria

def wpe_reference_experiment(sample=None, modes=("mimo", "siso"), wpe_cfg=WPE_PRESETS["early50"],
                             channel=REFERENCE_CHANNEL, taps=IDENTIFY_TAPS):
    """Early-reference SNR and effective C50 of one channel before and after WPE."""
    sample = reference_scene() if sample is None else sample
    x = sample.wave
    ref = sample.early().samples[channel]
    clean = sample.clean.samples[0]
    fs = x.sample_rate
    rows = {"input": {
        "early_reference_snr_db": reference_snr(x.samples[channel], ref),
        "effective_c50_db": effective_c50(x.samples[channel], clean, taps, fs),
        "oracle_c50_db": c50(sample.rir.taps[channel], fs),
    }}
    spec = stft(x)
    for mode in modes:
        t0 = time.perf_counter()
        y = istft(wpe(spec, replace(wpe_cfg, mode=mode)), length=x.num_samples).samples[channel]
        rows[mode] = {
            "early_reference_snr_db": reference_snr(y, ref),
            "effective_c50_db": effective_c50(y, clean, taps, fs),
            "seconds": time.perf_counter() - t0,
        }
    return rows


@dataclass
class LocalizationResult:
    errors_deg: np.ndarray
    beam_offsets: np.ndarray
    estimates_deg: np.ndarray
    oracle_deg: np.ndarray
    flatness: np.ndarray
    trace: list = field(default_factory=list)
    params: SaccParams | None = None

    @property
    def within_one_beam(self):
        return float(np.mean(np.abs(self.beam_offsets) <= 1))


def localization_experiment(n_train=100, n_test=40, seed=0, train_cfg=DEFAULT_TRAIN, duration=2.0):
    cfg = PRESETS["fmbu-sacc"]
    train = random_scenes(n_train, seed, duration=duration)
    params, trace, pipe = train_for(cfg, train, train_cfg)
    del train
    test = random_scenes(n_test, seed + 10_000, duration=duration)
    width = 180.0 / pipe.beams.num_beams
    est, oracle, offsets, flat = [], [], [], []
    for s in test:
        res = pipe.run(s.wave)
        loc = localize(average_weights(res.weights), pipe.beams)
        nearest = int(np.clip(s.scene.azimuth // width, 0, pipe.beams.num_beams - 1))
        est.append(loc.azimuth_deg)
        oracle.append(s.scene.azimuth)
        offsets.append(loc.beam_index - nearest)
        flat.append(loc.flatness)
    est, oracle = np.array(est), np.array(oracle)
    return LocalizationResult(np.abs(est - oracle), np.array(offsets), est, oracle,
                              np.array(flat), trace, params)


ORDERING_PRESETS = ("sdm", "sacc", "wpem-sacc", "wpem-fmbu-sacc")


def ordering_experiment(n_train=60, n_test=20, seed=1, presets=ORDERING_PRESETS,
                        train_cfg=DEFAULT_TRAIN, duration=2.0):
    """Mean early-reference SNR per preset on held-out scenes.

    The reference for each system is the per-mic early reference passed through
    the same beams and combiner weights, so that only dereverberation and noise
    reduction count, not the linear spatial filtering itself.
    """
    train = random_scenes(n_train, seed, duration=duration)
    test = random_scenes(n_test, seed + 10_000, duration=duration)
    scores = {}
    for name in presets:
        cfg = PRESETS[name]
        if cfg.combiner.kind == "sacc":
            _, _, pipe = train_for(cfg, train, train_cfg)
        else:
            pipe = Pipeline(cfg)
        vals = []
        for s in test:
            res = pipe.run(s.wave)
            ref = res.spatial(s.early())
            vals.append(reference_snr(res.output.samples[0], ref.samples[0]))
        scores[name] = float(np.mean(vals))
    return scores


def c50_table(samples=None, presets=("sdm", "wpes-sacc", "wpem-sacc"), taps=IDENTIFY_TAPS):
    """Effective C50 per dereverberation front end, measured on the SDM channel."""
    samples = [reference_scene()] if samples is None else samples
    out = {}
    for name in presets:
        cfg = PRESETS[name]
        vals = []
        for s in samples:
            spec = stft(s.wave)
            if cfg.wpe is not None:
                spec = wpe(spec, cfg.wpe)
            y = istft(spec, length=s.wave.num_samples).samples[REFERENCE_CHANNEL]
            vals.append(effective_c50(y, s.clean.samples[0], taps, s.wave.sample_rate))
        out[name] = float(np.mean(vals))
    return out
