"""Synthetic reverberant multichannel scenes.

RIRs are a fractional-delay direct path plus an exponentially decaying
Gaussian tail (independent per channel).  Tail energy follows the diffuse
field relation ``E_tail / E_direct = (range / r_crit)^2`` with the Sabine
critical distance ``r_crit = 0.057 sqrt(V / T60)``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.signal

from .beamform import ArrayGeometry
from .errors import ConfigError
from .spectral import SAMPLE_RATE, WaveformBuffer

FRACTIONAL_DELAY_TAPS = 64
TAIL_OFFSET_S = 0.0025
AMBIENT_FIELDS = ("diffuse", "common")


@dataclass(frozen=True)
class RoomScene:
    azimuth: float = 90.0
    range: float = 1.5
    t60: float = 0.5
    ambient_snr: float = 20.0
    white_snr: float = 45.0
    gain_jitter: tuple = (0.1, 2.0)
    level_dbfs: float = -6.0
    seed: int = 0
    room_volume: float = 30.0
    ambient_field: str = "diffuse"
    ambient_coherence: float = 0.5  # only for ambient_field="common"

    def __post_init__(self):
        if not 0 <= self.azimuth <= 180:
            raise ConfigError(f"azimuth must lie in [0, 180], got {self.azimuth}")
        if not self.range > 0:
            raise ConfigError(f"range must be > 0, got {self.range}")
        if not self.t60 >= 0:
            raise ConfigError(f"t60 must be >= 0, got {self.t60}")
        if not self.room_volume > 0:
            raise ConfigError(f"room_volume must be > 0, got {self.room_volume}")
        lo, hi = self.gain_jitter
        if lo > hi:
            raise ConfigError(f"gain_jitter range is reversed: {self.gain_jitter}")
        if self.ambient_field not in AMBIENT_FIELDS:
            raise ConfigError(f"ambient_field must be one of {AMBIENT_FIELDS}, got {self.ambient_field!r}")
        if not 0 <= self.ambient_coherence <= 1:
            raise ConfigError("ambient_coherence must lie in [0, 1]")
        object.__setattr__(self, "gain_jitter", (float(lo), float(hi)))

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for key in ("ambient_snr", "white_snr"):
            if isinstance(d.get(key), str):
                d[key] = float(d[key])  # accepts "inf"
        try:
            return cls(**d)
        except TypeError as err:
            raise ConfigError(f"invalid scene: {err}") from None

    def to_dict(self):
        d = asdict(self)
        d["gain_jitter"] = list(self.gain_jitter)
        for key in ("ambient_snr", "white_snr"):
            if math.isinf(d[key]):
                d[key] = "inf"
        return d

    def streams(self):
        """Independent generators for RIR, ambient noise, white noise and gains."""
        children = np.random.SeedSequence(self.seed).spawn(4)
        return [np.random.default_rng(c) for c in children]


@dataclass(frozen=True)
class Rir:
    taps: np.ndarray
    sample_rate: int
    direct_index: np.ndarray
    scene: RoomScene | None = None

    @property
    def num_channels(self):
        return self.taps.shape[0]


def fractional_delay_kernel(delay, length):
    """Hann-windowed sinc for a delay of ``delay`` samples, placed in ``length`` taps."""
    n = np.arange(length)
    x = n - delay
    half = FRACTIONAL_DELAY_TAPS / 2
    h = np.sinc(x) * np.where(np.abs(x) < half, 0.5 * (1 + np.cos(np.pi * x / half)), 0.0)
    return h


def critical_distance(room_volume, t60):
    return 0.057 * math.sqrt(room_volume / t60)


def generate_rir(scene: RoomScene, geom: ArrayGeometry = ArrayGeometry(),
                 sample_rate: int = SAMPLE_RATE) -> Rir:
    rng = scene.streams()[0]
    cos_az = math.cos(math.radians(scene.azimuth))
    delays = (scene.range + geom.positions * cos_az) / geom.speed_of_sound * sample_rate
    tail_len = max(int(1.2 * scene.t60 * sample_rate), int(0.06 * sample_rate))
    length = int(np.ceil(delays.max())) + FRACTIONAL_DELAY_TAPS + tail_len
    taps = np.zeros((geom.num_mics, length))
    direct = np.zeros(geom.num_mics, dtype=int)
    for m, d in enumerate(delays):
        h = fractional_delay_kernel(d, length) / scene.range
        direct[m] = int(np.argmax(np.abs(h)))
        taps[m] = h
    if scene.t60 > 0:
        decay = 6 * math.log(10) / scene.t60  # energy decay rate, 1/s
        tail_energy = 1.0 / critical_distance(scene.room_volume, scene.t60) ** 2
        offset = int(round(TAIL_OFFSET_S * sample_rate))
        noise = rng.standard_normal((geom.num_mics, length))
        for m in range(geom.num_mics):
            start = direct[m] + offset
            t = np.arange(length - start) / sample_rate
            envelope = np.exp(-decay * t)
            sigma = math.sqrt(tail_energy / envelope.sum())
            peak = abs(taps[m, direct[m]])
            # keep argmax |h| on the direct path
            tail = np.clip(sigma * np.sqrt(envelope) * noise[m, start:], -0.95 * peak, 0.95 * peak)
            taps[m, start:] += tail
    return Rir(taps, sample_rate, direct, scene)


def pink_noise(rng, shape, sample_rate=SAMPLE_RATE):
    """Gaussian noise with a 1/f power spectrum (flat below 20 Hz)."""
    n = shape[-1]
    spec = rng.standard_normal(shape[:-1] + (n // 2 + 1,)) \
        + 1j * rng.standard_normal(shape[:-1] + (n // 2 + 1,))
    f = np.fft.rfftfreq(n, 1.0 / sample_rate)
    spec /= np.sqrt(np.maximum(f, 20.0))
    spec[..., 0] = 0.0
    out = np.fft.irfft(spec, n=n)
    return out / np.std(out, axis=-1, keepdims=True)


def diffuse_pink_noise(rng, geom: ArrayGeometry, num_samples, sample_rate=SAMPLE_RATE):
    """Pink noise with spherically diffuse inter-mic coherence ``sinc(2 pi f d / c)``.

    Independent channels are mixed per frequency by a square root of the
    coherence matrix, then shaped to 1/f.
    """
    M = geom.num_mics
    n = num_samples
    f = np.fft.rfftfreq(n, 1.0 / sample_rate)
    spec = rng.standard_normal((M, len(f))) + 1j * rng.standard_normal((M, len(f)))
    dist = np.abs(geom.positions[:, None] - geom.positions[None, :])
    out = np.empty_like(spec)
    # coherence varies slowly with f: factor it on a coarse grid, apply per block
    edges = np.linspace(0, len(f), 513).astype(int)
    for lo, hi in zip(edges[:-1], edges[1:]):
        if hi <= lo:
            continue
        gamma = np.sinc(2 * f[(lo + hi) // 2] * dist / geom.speed_of_sound)
        vals, vecs = np.linalg.eigh(gamma)
        mix = vecs * np.sqrt(np.maximum(vals, 0.0))
        out[:, lo:hi] = mix @ spec[:, lo:hi]
    out /= np.sqrt(np.maximum(f, 20.0))
    out[:, 0] = 0.0
    x = np.fft.irfft(out, n=n)
    return x / np.std(x, axis=-1, keepdims=True)


def _scale_to_snr(reference, noise, snr_db):
    """Scale each row of ``noise`` to ``snr_db`` below the same row of ``reference``."""
    if math.isinf(snr_db):
        return np.zeros_like(noise)
    ref_energy = np.sum(reference ** 2, axis=-1, keepdims=True)
    energy = np.sum(noise ** 2, axis=-1, keepdims=True)
    return noise * np.sqrt(ref_energy / (energy * 10 ** (snr_db / 10)))


@dataclass
class RenderedScene:
    """Rendered mixture with its additive components kept separately.

    ``wave.samples == speech + ambient + white`` exactly.
    """

    wave: WaveformBuffer
    speech: np.ndarray
    ambient: np.ndarray
    white: np.ndarray
    gains_db: np.ndarray
    scale: float
    scene: RoomScene = field(default=None)

    def realized_snrs(self):
        s = np.sum(self.speech ** 2)
        out = {}
        for name in ("ambient", "white"):
            e = np.sum(getattr(self, name) ** 2)
            out[name] = math.inf if e == 0 else 10 * math.log10(s / e)
        return out


def render_scene(clean: WaveformBuffer, rir: Rir, scene: RoomScene | None = None,
                 geom: ArrayGeometry | None = None) -> RenderedScene:
    scene = rir.scene if scene is None else scene
    if clean.sample_rate != rir.sample_rate:
        raise ConfigError(
            f"clean signal at {clean.sample_rate} Hz, RIR at {rir.sample_rate} Hz")
    if clean.num_channels != 1:
        raise ConfigError("clean source must be single-channel")
    if scene.level_dbfs > 0:
        raise ConfigError(f"level {scene.level_dbfs} dBFS would clip")
    _, rng_ambient, rng_white, rng_gain = scene.streams()
    n = clean.num_samples
    M = rir.num_channels
    speech = scipy.signal.fftconvolve(clean.samples, rir.taps, axes=1)[:, :n]

    if scene.ambient_field == "diffuse":
        geom = ArrayGeometry(num_mics=M) if geom is None else geom
        if geom.num_mics != M:
            raise ConfigError(f"geometry has {geom.num_mics} mics, RIR has {M} channels")
        field_noise = diffuse_pink_noise(rng_ambient, geom, n, clean.sample_rate)
    else:
        rho = scene.ambient_coherence
        common = pink_noise(rng_ambient, (1, n), clean.sample_rate)
        local = pink_noise(rng_ambient, (M, n), clean.sample_rate)
        field_noise = math.sqrt(rho) * common + math.sqrt(1 - rho) * local
    ambient = _scale_to_snr(speech, field_noise, scene.ambient_snr)
    white = _scale_to_snr(speech, rng_white.standard_normal((M, n)), scene.white_snr)

    lo, hi = scene.gain_jitter
    gains_db = rng_gain.uniform(lo, hi, M)
    g = 10 ** (gains_db / 20)[:, None]
    speech, ambient, white = speech * g, ambient * g, white * g
    peak = np.max(np.abs(speech + ambient + white))
    if peak == 0:
        raise ConfigError("rendered scene is silent")
    scale = 10 ** (scene.level_dbfs / 20) / peak
    speech, ambient, white = speech * scale, ambient * scale, white * scale
    mixture = speech + ambient + white
    if np.max(np.abs(mixture)) > 1.0:
        raise ConfigError("rendered scene clips after level scaling")
    return RenderedScene(WaveformBuffer(mixture, clean.sample_rate), speech, ambient, white,
                         gains_db, scale, scene)


# ------------------------------------------------------------ source signals

def _resonator(freq, bandwidth, sample_rate):
    r = math.exp(-math.pi * bandwidth / sample_rate)
    theta = 2 * math.pi * freq / sample_rate
    a = [1.0, -2 * r * math.cos(theta), r * r]
    b = [1 - r, 0.0, -(1 - r)]  # band-pass, zeros at DC and Nyquist
    return b, a


def synthetic_utterance(duration=4.0, sample_rate=SAMPLE_RATE, seed=0) -> WaveformBuffer:
    """Speech-like test source: voiced/unvoiced syllables with pauses.

    Voiced segments are gliding, jittered harmonic series through random
    parallel formant resonators; unvoiced segments are fricative-like noise.
    Syllable envelopes make the variance strongly time-varying.
    """
    rng = np.random.default_rng(seed)
    n_total = int(round(duration * sample_rate))
    out = np.zeros(n_total)
    pos = int(rng.uniform(0.02, 0.1) * sample_rate)
    while pos < n_total:
        kind = rng.choice(["pause", "voiced", "unvoiced"], p=[0.2, 0.55, 0.25])
        if kind == "pause":
            pos += int(rng.uniform(0.04, 0.2) * sample_rate)
            continue
        n = min(int(rng.uniform(0.08, 0.3) * sample_rate), n_total - pos)
        if n < 64:
            break
        t = np.arange(n) / sample_rate
        if kind == "voiced":
            f0 = rng.uniform(90, 220) * np.exp(np.linspace(0, rng.uniform(-0.25, 0.25), n))
            f0 *= 1 + 0.01 * scipy.signal.lfilter([0.05], [1, -0.95], rng.standard_normal(n))
            phase = 2 * np.pi * np.cumsum(f0) / sample_rate
            excitation = np.zeros(n)
            for k in range(1, int(7000 / f0.max()) + 1):
                excitation += np.cos(k * phase + rng.uniform(0, 2 * np.pi)) / k ** 0.7
            excitation += 0.1 * rng.standard_normal(n) * excitation.std()
            seg = np.zeros(n)
            for lo, hi in ((250, 900), (800, 2400), (2000, 3400), (3300, 5000)):
                b, a = _resonator(rng.uniform(lo, hi), rng.uniform(80, 250), sample_rate)
                seg += rng.uniform(0.4, 1.0) * scipy.signal.lfilter(b, a, excitation)
        else:
            noise = rng.standard_normal(n)
            b, a = _resonator(rng.uniform(2500, 6500), rng.uniform(1000, 3000), sample_rate)
            seg = scipy.signal.lfilter(b, a, noise) + 0.2 * noise
        ramp = min(int(0.015 * sample_rate), n // 2)
        env = np.ones(n)
        env[:ramp] = 0.5 - 0.5 * np.cos(np.pi * np.arange(ramp) / ramp)
        env[n - ramp:] = env[:ramp][::-1]
        env *= 1 + 0.3 * np.sin(2 * np.pi * rng.uniform(3, 7) * t + rng.uniform(0, 2 * np.pi))
        seg = seg / (seg.std() + 1e-12) * env * 10 ** (rng.uniform(-10, 0) / 20)
        out[pos:pos + n] += seg
        pos += n
    out /= np.max(np.abs(out)) / 0.5
    return WaveformBuffer(out, sample_rate)


def scene_sidecar(scene: RoomScene, rir: Rir, rendered: RenderedScene, geom: ArrayGeometry,
                  c50=None, clean_path=None):
    doc = {
        "format": "scene-sidecar",
        "version": 1,
        "scene": scene.to_dict(),
        "geometry": geom.to_dict(),
        "sample_rate": rir.sample_rate,
        "oracle_azimuth_deg": scene.azimuth,
        "oracle_range_m": scene.range,
        "seed": scene.seed,
        "direct_index": rir.direct_index.tolist(),
        "gains_db": rendered.gains_db.tolist(),
        "realized_snr_db": {k: (v if math.isfinite(v) else "inf")
                            for k, v in rendered.realized_snrs().items()},
        "assumptions": {
            "rir_model": "fractional-delay direct path + exponential Gaussian tail",
            "tail": "independent per channel, starts 2.5 ms after direct path",
            "ambient_noise": ("pink, spherically diffuse coherence" if scene.ambient_field == "diffuse"
                              else "pink, partially common across channels"),
        },
    }
    if c50 is not None:
        doc["c50_db"] = [float(x) for x in c50]
    if clean_path is not None:
        doc["clean_path"] = str(clean_path)
    return doc
