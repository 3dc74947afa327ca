"""Processing chain dereverb -> beamform -> combine, configured from JSON.

Every config is validated in full before any audio is touched.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .beamform import ArrayGeometry, BeamSet, apply_beamset, design_beamset, noise_model
from .dereverb import WPE_PRESETS, WpeConfig, wpe
from .errors import ConfigError
from .sacc import SaccParams, average_weights, combine_spectrogram, load_params, sacc_forward
from .spectral import (STFT_PRESETS, Spectrogram, WaveformBuffer, istft, log_power_normalize,
                       stft, stft_preset)

COMBINERS = ("sacc", "mean", "single")


@dataclass(frozen=True)
class BeamformerConfig:
    model: str = "fmbu"
    diagonal_loading: float = 0.01
    num_beams: int = 16

    def __post_init__(self):
        object.__setattr__(self, "model", noise_model(self.model))
        if self.diagonal_loading < 0:
            raise ConfigError(f"beamformer.diagonal_loading must be >= 0, got {self.diagonal_loading}")
        if self.num_beams < 1:
            raise ConfigError(f"beamformer.num_beams must be >= 1, got {self.num_beams}")


@dataclass(frozen=True)
class CombinerConfig:
    kind: str = "mean"
    channel: int = 0
    params: str | None = None  # path to a SACC parameter file

    def __post_init__(self):
        if self.kind not in COMBINERS:
            raise ConfigError(f"combiner.kind must be one of {COMBINERS}, got {self.kind!r}")
        if self.kind == "single" and self.channel < 0:
            raise ConfigError(f"combiner.channel must be >= 0, got {self.channel}")


@dataclass(frozen=True)
class PipelineConfig:
    wpe: WpeConfig | None = None
    beamformer: BeamformerConfig | None = None
    combiner: CombinerConfig = CombinerConfig()
    stft: str = "default"
    geometry: ArrayGeometry = ArrayGeometry()
    seed: int = 0

    def __post_init__(self):
        stft_preset(self.stft)

    @property
    def stages(self):
        return [s for s, on in (("wpe", self.wpe), ("beamformer", self.beamformer)) if on] + ["combiner"]

    def output_channels(self):
        return self.beamformer.num_beams if self.beamformer else self.geometry.num_mics

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        known = {"wpe", "beamformer", "combiner", "stft", "geometry", "seed"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"pipeline: unknown keys {sorted(unknown)}")

        def section(name, build):
            value = d.get(name)
            if value is None or value == "none" or (isinstance(value, dict) and value.get("mode") == "none"):
                return None
            try:
                return build(value)
            except ConfigError as err:
                raise ConfigError(f"pipeline.{name}: {err}") from None
            except TypeError as err:
                raise ConfigError(f"pipeline.{name}: {err}") from None

        def build_wpe(v):
            if isinstance(v, str):
                return WpeConfig(mode=v)
            v = dict(v)
            if "preset" in v:
                base = WPE_PRESETS.get(v.pop("preset"))
                if base is None:
                    raise ConfigError(f"unknown wpe preset, choose from {sorted(WPE_PRESETS)}")
                v = {**base.to_dict(), **v}
            return WpeConfig.from_dict(v)

        def build_beam(v):
            return BeamformerConfig(model=v) if isinstance(v, str) else BeamformerConfig(**v)

        def build_comb(v):
            return CombinerConfig(kind=v) if isinstance(v, str) else CombinerConfig(**v)

        combiner = section("combiner", build_comb)
        if combiner is None:
            raise ConfigError("pipeline.combiner is required")
        try:
            geometry = ArrayGeometry.from_dict(d.get("geometry", {}))
        except ConfigError as err:
            raise ConfigError(f"pipeline.geometry: {err}") from None
        try:
            return cls(wpe=section("wpe", build_wpe), beamformer=section("beamformer", build_beam),
                       combiner=combiner, stft=d.get("stft", "default"), geometry=geometry,
                       seed=int(d.get("seed", 0)))
        except ConfigError as err:
            raise ConfigError(f"pipeline: {err}") from None

    def to_dict(self):
        return {
            "wpe": self.wpe.to_dict() if self.wpe else None,
            "beamformer": None if self.beamformer is None else {
                "model": self.beamformer.model,
                "diagonal_loading": self.beamformer.diagonal_loading,
                "num_beams": self.beamformer.num_beams},
            "combiner": {"kind": self.combiner.kind, "channel": self.combiner.channel,
                         "params": self.combiner.params},
            "stft": self.stft,
            "geometry": self.geometry.to_dict(),
            "seed": self.seed,
        }

    def validate(self, num_channels=None, sacc_params: SaccParams | None = None):
        """Check channel-count chaining and combiner resources; raises ConfigError."""
        M = self.geometry.num_mics
        if num_channels is not None and num_channels != M:
            raise ConfigError(f"input has {num_channels} channels, geometry expects {M}")
        C = self.output_channels()
        if self.combiner.kind == "single" and self.combiner.channel >= C:
            raise ConfigError(
                f"pipeline.combiner.channel {self.combiner.channel} out of range for {C} channels")
        if self.combiner.kind == "sacc":
            if sacc_params is None:
                if not self.combiner.params:
                    raise ConfigError("pipeline.combiner: sacc requires a params file")
                if not Path(self.combiner.params).is_file():
                    raise ConfigError(f"pipeline.combiner: params file {self.combiner.params} not found")
                sacc_params = load_params(self.combiner.params)
            F = stft_preset(self.stft).num_bins
            if sacc_params.num_bins != F:
                raise ConfigError(
                    f"pipeline.combiner: SACC expects {sacc_params.num_bins} bins, "
                    f"stft preset {self.stft!r} gives {F}")
        return sacc_params


def _preset(wpe=None, beam=None, combiner="sacc", channel=3):
    return PipelineConfig(
        wpe=None if wpe is None else replace(WPE_PRESETS["early50"], mode=wpe),
        beamformer=None if beam is None else BeamformerConfig(model=beam),
        combiner=CombinerConfig(kind=combiner, channel=channel),
    )


# System presets; "sdm" is the single distant microphone (index 3).
PRESETS = {
    "sdm": _preset(combiner="single"),
    "sacc": _preset(),
    "wpes-sacc": _preset(wpe="siso"),
    "wpem-sacc": _preset(wpe="mimo"),
    "fmbu-sacc": _preset(beam="fmbu"),
    "fmbi-sacc": _preset(beam="fmbi"),
    "wpem-fmbu-sacc": _preset(wpe="mimo", beam="fmbu"),
}


def preset(name, params_path=None):
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}, choose from {sorted(PRESETS)}")
    cfg = PRESETS[name]
    if params_path is not None:
        cfg = replace(cfg, combiner=replace(cfg.combiner, params=str(params_path)))
    return cfg


def load_pipeline(path):
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}: invalid JSON ({err})") from None
    if isinstance(doc, dict) and "preset" in doc:
        base = preset(doc.pop("preset")).to_dict()
        for key, value in doc.items():
            if isinstance(value, dict) and isinstance(base.get(key), dict):
                base[key] = {**base[key], **value}
            else:
                base[key] = value
        doc = base
    return PipelineConfig.from_dict(doc)


# ---------------------------------------------------------------- execution

@dataclass
class PipelineResult:
    output: WaveformBuffer
    weights: np.ndarray              # (T, C) combiner weights, rows sum to 1
    log_power: np.ndarray            # (T, F) combined normalised log power
    stages: dict = field(default_factory=dict)   # stage name -> Spectrogram
    beams: BeamSet | None = None
    config: PipelineConfig | None = None

    def weight_profile(self):
        return average_weights(self.weights)

    def spatial(self, wave: WaveformBuffer) -> WaveformBuffer:
        """Pass a multichannel reference through the linear spatial stages only.

        The beams and the realised combiner weights are applied; WPE is not.
        """
        cfg = self.config.stft
        spec = stft(wave, stft_preset(cfg))
        if self.beams is not None:
            spec = apply_beamset(spec, self.beams)
        T = min(spec.num_frames, self.weights.shape[0])
        data = combine_spectrogram(spec.data[:T], self.weights[:T])
        return istft(spec.replace(data), length=wave.num_samples)


class Pipeline:
    """Validated, ready-to-run chain.  Beams are designed once per instance."""

    def __init__(self, cfg: PipelineConfig, sacc_params: SaccParams | None = None,
                 num_channels=None):
        self.cfg = cfg
        self.params = cfg.validate(num_channels, sacc_params)
        self.stft_cfg = stft_preset(cfg.stft)
        self.beams = None
        if cfg.beamformer is not None:
            b = cfg.beamformer
            self.beams = design_beamset(cfg.geometry, b.model, b.diagonal_loading, b.num_beams,
                                        self.stft_cfg.frequencies())

    def front(self, wave: WaveformBuffer, keep_stages=False):
        """Dereverb and beamform; returns the combiner input and stage dict."""
        self.cfg.validate(wave.num_channels, self.params)
        spec = stft(wave, self.stft_cfg)
        stages = {"input": spec} if keep_stages else {}
        if self.cfg.wpe is not None:
            spec = wpe(spec, self.cfg.wpe)
            if keep_stages:
                stages["wpe"] = spec
        if self.beams is not None:
            spec = apply_beamset(spec, self.beams)
            if keep_stages:
                stages["beamformer"] = spec
        return spec, stages

    def combine(self, spec: Spectrogram):
        feats = log_power_normalize(spec)
        T, C, _ = spec.data.shape
        kind = self.cfg.combiner.kind
        if kind == "sacc":
            out = sacc_forward(feats, self.params)
            W, Y = out.W, out.Y
        else:
            W = np.zeros((T, C))
            if kind == "mean":
                W[:] = 1.0 / C
            else:
                W[:, self.cfg.combiner.channel] = 1.0
            Y = np.einsum("tm,tmf->tf", W, feats.data)
        return W, Y

    def run(self, wave: WaveformBuffer, keep_stages=False) -> PipelineResult:
        spec, stages = self.front(wave, keep_stages)
        W, Y = self.combine(spec)
        combined = spec.replace(combine_spectrogram(spec.data, W))
        if keep_stages:
            stages["combiner"] = combined
        output = istft(combined, length=wave.num_samples)
        return PipelineResult(output, W, Y, stages, self.beams, self.cfg)


def run_pipeline(cfg: PipelineConfig, wave: WaveformBuffer, sacc_params=None, keep_stages=False):
    return Pipeline(cfg, sacc_params, wave.num_channels).run(wave, keep_stages)


def save_weights_csv(path, W):
    T, C = W.shape
    with open(path, "w") as fh:
        fh.write("frame," + ",".join(f"ch{c}" for c in range(C)) + "\n")
        for t, row in enumerate(W):
            fh.write(f"{t}," + ",".join(f"{w:.9f}" for w in row) + "\n")


__all__ = ["PipelineConfig", "BeamformerConfig", "CombinerConfig", "PRESETS", "preset",
           "load_pipeline", "Pipeline", "PipelineResult", "run_pipeline", "save_weights_csv",
           "STFT_PRESETS"]
