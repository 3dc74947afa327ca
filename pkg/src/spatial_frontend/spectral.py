"""STFT analysis/synthesis, log-power features and WAV I/O.

Layout conventions used throughout the package:

* time-domain signals are ``(channels, samples)`` arrays,
* spectrograms are ``(frames, channels, bins)`` complex arrays.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.io.wavfile
import scipy.signal

from .errors import ConfigError

SAMPLE_RATE = 16000
LOG_FLOOR = 1e-10


@dataclass(frozen=True)
class WaveformBuffer:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=float)
        if samples.ndim == 1:
            samples = samples[None, :]
        if samples.ndim != 2:
            raise ConfigError(f"expected (channels, samples), got shape {samples.shape}")
        if self.sample_rate <= 0:
            raise ConfigError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(samples)):
            raise ConfigError("waveform contains non-finite samples")
        object.__setattr__(self, "samples", samples)

    @property
    def num_channels(self):
        return self.samples.shape[0]

    @property
    def num_samples(self):
        return self.samples.shape[1]

    def channel(self, index):
        return WaveformBuffer(self.samples[index:index + 1], self.sample_rate)


def _window(name, size):
    if name == "sqrt_hann":
        return np.sqrt(scipy.signal.get_window("hann", size, fftbins=True))
    if name in ("hann", "hamming", "blackman"):
        return scipy.signal.get_window(name, size, fftbins=True)
    if name in ("rect", "boxcar"):
        return np.ones(size)
    raise ConfigError(f"unknown window {name!r}")


@dataclass(frozen=True)
class StftConfig:
    """Frame size, hop and window shared by analysis and synthesis.

    The same window is used on both sides, so perfect reconstruction needs
    the shifted *squared* windows to sum to a constant.  This is checked on
    construction.
    """

    fft_size: int = 512
    hop_size: int = 128
    window: str = "sqrt_hann"

    def __post_init__(self):
        if self.fft_size < 2 or self.fft_size % 2:
            raise ConfigError(f"fft_size must be even and >= 2, got {self.fft_size}")
        if not 1 <= self.hop_size <= self.fft_size:
            raise ConfigError(
                f"hop_size must be in [1, fft_size], got {self.hop_size}")
        w2 = self.window_array() ** 2
        env = np.zeros(self.hop_size)
        for start in range(0, self.fft_size, self.hop_size):
            seg = w2[start:start + self.hop_size]
            env[:len(seg)] += seg
        if not np.allclose(env, env.mean(), rtol=1e-9, atol=1e-12):
            raise ConfigError(
                f"window {self.window!r} is not COLA at hop {self.hop_size} "
                f"(squared-window overlap varies by {np.ptp(env):.3g})")

    @property
    def num_bins(self):
        return self.fft_size // 2 + 1

    def window_array(self):
        return _window(self.window, self.fft_size)

    def frequencies(self, sample_rate=SAMPLE_RATE):
        return np.fft.rfftfreq(self.fft_size, d=1.0 / sample_rate)

    def num_frames(self, num_samples):
        if num_samples < self.fft_size:
            raise ConfigError(
                f"signal of {num_samples} samples is shorter than one "
                f"{self.fft_size}-sample frame")
        return 1 + -(-(num_samples - self.fft_size) // self.hop_size)


STFT_PRESETS = {
    "default": StftConfig(512, 128, "sqrt_hann"),
    # finer frequency resolution, same 75 % overlap
    "hires": StftConfig(1024, 256, "sqrt_hann"),
}


def stft_preset(name):
    try:
        return STFT_PRESETS[name]
    except KeyError:
        raise ConfigError(
            f"unknown STFT preset {name!r}; choose from {sorted(STFT_PRESETS)}") from None


@dataclass(frozen=True)
class Spectrogram:
    data: np.ndarray
    sample_rate: int = SAMPLE_RATE
    config: StftConfig = field(default_factory=StftConfig)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=complex)
        if data.ndim != 3:
            raise ConfigError(f"expected (frames, channels, bins), got shape {data.shape}")
        if data.shape[2] != self.config.num_bins:
            raise ConfigError(
                f"bin count {data.shape[2]} does not match fft_size "
                f"{self.config.fft_size} ({self.config.num_bins} bins)")
        if not np.all(np.isfinite(data)):
            raise ConfigError("spectrogram contains non-finite entries")
        object.__setattr__(self, "data", data)

    @property
    def num_frames(self):
        return self.data.shape[0]

    @property
    def num_channels(self):
        return self.data.shape[1]

    @property
    def num_bins(self):
        return self.data.shape[2]

    def frequencies(self):
        return self.config.frequencies(self.sample_rate)

    def replace(self, data):
        return Spectrogram(data, self.sample_rate, self.config)


def stft(wave: WaveformBuffer, cfg: StftConfig = STFT_PRESETS["default"]) -> Spectrogram:
    """Frame without centring; the tail is zero-padded to fill the last frame."""
    num_frames = cfg.num_frames(wave.num_samples)
    padded_len = (num_frames - 1) * cfg.hop_size + cfg.fft_size
    x = np.zeros((wave.num_channels, padded_len))
    x[:, :wave.num_samples] = wave.samples
    frames = np.lib.stride_tricks.sliding_window_view(x, cfg.fft_size, axis=1)
    frames = frames[:, ::cfg.hop_size][:, :num_frames]
    spec = np.fft.rfft(frames * cfg.window_array(), axis=-1)
    return Spectrogram(spec.transpose(1, 0, 2), wave.sample_rate, cfg)


def window_envelope(cfg: StftConfig, num_frames: int) -> np.ndarray:
    """Overlap-added squared window for ``num_frames`` frames."""
    w2 = cfg.window_array() ** 2
    env = np.zeros((num_frames - 1) * cfg.hop_size + cfg.fft_size)
    for t in range(num_frames):
        env[t * cfg.hop_size:t * cfg.hop_size + cfg.fft_size] += w2
    return env


def istft(spec: Spectrogram, cfg: StftConfig | None = None, length: int | None = None) -> WaveformBuffer:
    cfg = spec.config if cfg is None else cfg
    if spec.num_bins != cfg.num_bins:
        raise ConfigError(f"spectrogram has {spec.num_bins} bins, config expects {cfg.num_bins}")
    num_frames = spec.num_frames
    win = cfg.window_array()
    frames = np.fft.irfft(spec.data, n=cfg.fft_size, axis=-1) * win
    out = np.zeros((spec.num_channels, (num_frames - 1) * cfg.hop_size + cfg.fft_size))
    for t in range(num_frames):
        out[:, t * cfg.hop_size:t * cfg.hop_size + cfg.fft_size] += frames[t]
    env = window_envelope(cfg, num_frames)
    nonzero = env > 1e-8 * env.max()
    out[:, nonzero] /= env[nonzero]
    out[:, ~nonzero] = 0.0
    if length is not None:
        if length > out.shape[1]:
            out = np.pad(out, ((0, 0), (0, length - out.shape[1])))
        out = out[:, :length]
    return WaveformBuffer(out, spec.sample_rate)


@dataclass(frozen=True)
class LogPowerTensor:
    data: np.ndarray
    mean: np.ndarray
    std: np.ndarray

    @property
    def num_frames(self):
        return self.data.shape[0]

    @property
    def num_channels(self):
        return self.data.shape[1]

    @property
    def num_bins(self):
        return self.data.shape[2]

    def denormalize(self):
        """Undo the per-channel standardisation (returns raw log power)."""
        return self.data * self.std[None, :, None] + self.mean[None, :, None]


def log_power(spec_data):
    return np.log(np.abs(spec_data) ** 2 + LOG_FLOOR)


def log_power_normalize(spec: Spectrogram | np.ndarray) -> LogPowerTensor:
    """Log power standardised per channel over frames and bins.

    Constant channels come out as zeros and keep ``std = 1`` so that
    ``denormalize`` remains well defined.
    """
    data = spec.data if isinstance(spec, Spectrogram) else np.asarray(spec)
    lp = log_power(data)
    mean = lp.mean(axis=(0, 2))
    std = lp.std(axis=(0, 2))
    flat = std <= 1e-12 * (1.0 + np.abs(mean))
    std = np.where(flat, 1.0, std)
    out = (lp - mean[None, :, None]) / std[None, :, None]
    out[:, flat, :] = 0.0
    return LogPowerTensor(out, mean, std)


def read_wav(path, sample_rate=None) -> WaveformBuffer:
    """Read PCM16 or float WAV into ``(channels, samples)`` floats in [-1, 1]."""
    rate, data = scipy.io.wavfile.read(Path(path))
    if sample_rate is not None and rate != sample_rate:
        raise ConfigError(
            f"{path}: sample rate {rate} Hz does not match the configured {sample_rate} Hz")
    if data.dtype == np.int16:
        data = data.astype(float) / 32768.0
    elif data.dtype == np.int32:
        data = data.astype(float) / 2147483648.0
    elif data.dtype.kind == "f":
        data = data.astype(float)
    else:
        raise ConfigError(f"{path}: unsupported sample format {data.dtype}")
    data = data.T if data.ndim == 2 else data[None, :]
    return WaveformBuffer(np.ascontiguousarray(data), rate)


def write_wav(path, wave: WaveformBuffer, fmt="float32"):
    samples = wave.samples.T
    if fmt == "float32":
        data = samples.astype(np.float32)
    elif fmt == "pcm16":
        if np.max(np.abs(samples), initial=0.0) > 1.0:
            raise ConfigError(f"{path}: samples exceed full scale, cannot write PCM16")
        data = np.clip(np.round(samples * 32768.0), -32768, 32767).astype(np.int16)
    else:
        raise ConfigError(f"unknown WAV format {fmt!r}")
    if data.shape[1] == 1:
        data = data[:, 0]
    scipy.io.wavfile.write(Path(path), wave.sample_rate, data)
