"""Fixed MVDR beamformers for a uniform linear array.

Azimuth convention: mic ``m`` sits at ``m * spacing`` on the array axis,
0 deg is endfire on the mic-0 side, 90 deg is broadside.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, SingularSystemError
from .spectral import Spectrogram

UNCORRELATED = "uncorrelated"
ISOTROPIC = "isotropic"
_MODEL_ALIASES = {
    "uncorrelated": UNCORRELATED, "fmbu": UNCORRELATED,
    "isotropic": ISOTROPIC, "spherically_isotropic": ISOTROPIC, "fmbi": ISOTROPIC,
}


@dataclass(frozen=True)
class ArrayGeometry:
    num_mics: int = 8
    spacing: float = 0.033
    speed_of_sound: float = 343.0

    def __post_init__(self):
        if self.num_mics < 1:
            raise ConfigError(f"num_mics must be >= 1, got {self.num_mics}")
        if not self.spacing > 0:
            raise ConfigError(f"spacing must be > 0, got {self.spacing}")
        if not self.speed_of_sound > 0:
            raise ConfigError(f"speed_of_sound must be > 0, got {self.speed_of_sound}")

    @property
    def positions(self):
        return np.arange(self.num_mics) * self.spacing

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(**d)
        except TypeError as err:
            raise ConfigError(f"invalid geometry: {err}") from None

    def to_dict(self):
        return {"num_mics": self.num_mics, "spacing": self.spacing,
                "speed_of_sound": self.speed_of_sound}


def noise_model(kind):
    try:
        return _MODEL_ALIASES[kind.lower()]
    except (KeyError, AttributeError):
        raise ConfigError(f"unknown noise model {kind!r}") from None


def steering_vector(geom: ArrayGeometry, azimuth, freq):
    """Far-field plane-wave phases ``exp(-j 2 pi f m d cos(theta) / c)``.

    ``azimuth`` (degrees) and ``freq`` (Hz) broadcast against each other; the
    mic axis is appended last.
    """
    azimuth = np.asarray(azimuth, dtype=float)
    if np.any((azimuth < 0) | (azimuth > 180)):
        raise ConfigError("azimuth must lie in [0, 180] degrees")
    delay = np.cos(np.deg2rad(azimuth))[..., None] * geom.positions / geom.speed_of_sound
    return np.exp(-2j * np.pi * np.asarray(freq, dtype=float)[..., None] * delay)


def coherence_matrix(geom: ArrayGeometry, freq, model=ISOTROPIC):
    """Noise coherence for one frequency (or a vector of them, stacked first)."""
    model = noise_model(model)
    freq = np.asarray(freq, dtype=float)
    M = geom.num_mics
    if model == UNCORRELATED:
        return np.broadcast_to(np.eye(M), freq.shape + (M, M)).copy()
    dist = np.abs(geom.positions[:, None] - geom.positions[None, :])
    # np.sinc is the normalised sinc: sinc(x) = sin(pi x) / (pi x)
    return np.sinc(2 * freq[..., None, None] * dist / geom.speed_of_sound)


def design_mvdr(geom, look_azimuth, model, diagonal_loading, freqs):
    """MVDR weights ``(F, M)`` for one look direction.

    Solves ``(Phi + sigma^2 I) u = v`` and normalises by ``v^H u`` so that
    ``w^H v = 1`` at every bin.
    """
    freqs = np.atleast_1d(np.asarray(freqs, dtype=float))
    model = noise_model(model)
    if diagonal_loading < 0:
        raise ConfigError(f"diagonal loading must be >= 0, got {diagonal_loading}")
    v = steering_vector(geom, look_azimuth, freqs)
    phi = coherence_matrix(geom, freqs, model) + diagonal_loading * np.eye(geom.num_mics)
    if diagonal_loading <= 0:
        cond = np.linalg.cond(phi)
        if np.any(cond > 1e12):
            f = int(np.argmax(cond))
            raise SingularSystemError(
                f"noise covariance is near-singular at {freqs[f]:.1f} Hz "
                f"(condition {cond[f]:.3g}); use positive diagonal loading",
                index=f, condition=float(cond[f]))
    u = np.linalg.solve(phi, v[..., None])[..., 0]
    return u / np.einsum("fm,fm->f", v.conj(), u)[:, None]


def beam_azimuths(num_beams):
    if num_beams < 1:
        raise ConfigError(f"num_beams must be >= 1, got {num_beams}")
    return (np.arange(num_beams) + 0.5) * 180.0 / num_beams


@dataclass(frozen=True)
class BeamSet:
    look_azimuths: np.ndarray
    weights: np.ndarray  # (N_b, F, M)
    diagonal_loading: float
    geometry: ArrayGeometry
    freqs: np.ndarray
    model: str = UNCORRELATED

    @property
    def num_beams(self):
        return self.weights.shape[0]

    def response(self, azimuth, beam=None):
        """Complex gain ``w^H v`` per (beam, bin) for a source at ``azimuth``."""
        v = steering_vector(self.geometry, azimuth, self.freqs)
        w = self.weights if beam is None else self.weights[beam]
        return np.einsum("...fm,fm->...f", w.conj(), v)


def design_beamset(geom=ArrayGeometry(), model=UNCORRELATED, diagonal_loading=0.01,
                   num_beams=16, freqs=None):
    if freqs is None:
        raise ConfigError("a frequency grid is required")
    freqs = np.asarray(freqs, dtype=float)
    azimuths = beam_azimuths(num_beams)
    weights = np.stack([design_mvdr(geom, az, model, diagonal_loading, freqs) for az in azimuths])
    return BeamSet(azimuths, weights, float(diagonal_loading), geom, freqs, noise_model(model))


def apply_beamset(spec: Spectrogram, beams: BeamSet) -> Spectrogram:
    if spec.num_channels != beams.geometry.num_mics:
        raise ConfigError(
            f"spectrogram has {spec.num_channels} channels, beams expect "
            f"{beams.geometry.num_mics}")
    if spec.num_bins != len(beams.freqs) or not np.allclose(spec.frequencies(), beams.freqs):
        raise ConfigError("spectrogram bin grid does not match the beam design grid")
    out = np.einsum("bfm,tmf->tbf", beams.weights.conj(), spec.data)
    return spec.replace(out)


def beampattern(weights, geom, azimuths, freqs):
    """Gain in dB, shape ``(len(azimuths), len(freqs))``."""
    freqs = np.asarray(freqs, dtype=float)
    v = steering_vector(geom, np.asarray(azimuths, dtype=float)[:, None], freqs[None, :])
    gain = np.abs(np.einsum("fm,afm->af", np.asarray(weights).conj(), v))
    with np.errstate(divide="ignore"):
        return 20 * np.log10(gain)


def white_noise_gain(weights):
    """Array gain against spatially white noise, ``-10 log10(w^H w)`` per bin."""
    return -10 * np.log10(np.sum(np.abs(weights) ** 2, axis=-1))


def noise_output_power(weights, gamma):
    return np.real(np.einsum("...m,...mn,...n->...", weights.conj(), gamma, weights))


# ---------------------------------------------------------------- file formats

_MAGIC = b"BEAM"
_VERSION = 1


def save_beamset(path, beams: BeamSet):
    """JSON for ``*.json`` paths, little-endian binary otherwise."""
    path = Path(path)
    inter = np.stack([beams.weights.real, beams.weights.imag], axis=-1)
    if path.suffix == ".json":
        doc = {
            "format": "beamset", "version": _VERSION, "model": beams.model,
            "geometry": beams.geometry.to_dict(),
            "diagonal_loading": beams.diagonal_loading,
            "look_azimuths": beams.look_azimuths.tolist(),
            "freqs": beams.freqs.tolist(),
            "shape": list(beams.weights.shape),
            "weights": inter.ravel().tolist(),
        }
        path.write_text(json.dumps(doc))
        return
    nb, nf, nm = beams.weights.shape
    model = beams.model.encode()
    header = struct.pack("<4sIIIIddd", _MAGIC, _VERSION, nb, nf, nm,
                         beams.diagonal_loading, beams.geometry.spacing,
                         beams.geometry.speed_of_sound)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(struct.pack("<I", len(model)) + model)
        fh.write(beams.look_azimuths.astype("<f8").tobytes())
        fh.write(beams.freqs.astype("<f8").tobytes())
        fh.write(inter.astype("<f8").tobytes())


def load_beamset(path) -> BeamSet:
    path = Path(path)
    if path.suffix == ".json":
        doc = json.loads(path.read_text())
        if doc.get("format") != "beamset" or doc.get("version") != _VERSION:
            raise ConfigError(f"{path}: not a version-{_VERSION} beamset file")
        inter = np.asarray(doc["weights"], dtype=float).reshape(*doc["shape"], 2)
        return BeamSet(np.asarray(doc["look_azimuths"]), inter[..., 0] + 1j * inter[..., 1],
                       float(doc["diagonal_loading"]), ArrayGeometry.from_dict(doc["geometry"]),
                       np.asarray(doc["freqs"]), doc["model"])
    raw = path.read_bytes()
    head = struct.calcsize("<4sIIIIddd")
    if len(raw) < head:
        raise ConfigError(f"{path}: truncated beamset file")
    magic, version, nb, nf, nm, loading, spacing, c = struct.unpack_from("<4sIIIIddd", raw)
    if magic != _MAGIC or version != _VERSION:
        raise ConfigError(f"{path}: not a version-{_VERSION} beamset file")
    (nlen,) = struct.unpack_from("<I", raw, head)
    offset = head + 4
    model = raw[offset:offset + nlen].decode()
    offset += nlen
    arr = np.frombuffer(raw, dtype="<f8", offset=offset)
    if arr.size != nb + nf + nb * nf * nm * 2:
        raise ConfigError(f"{path}: payload size does not match header")
    azimuths, freqs, inter = arr[:nb], arr[nb:nb + nf], arr[nb + nf:].reshape(nb, nf, nm, 2)
    return BeamSet(azimuths.copy(), inter[..., 0] + 1j * inter[..., 1], loading,
                   ArrayGeometry(nm, spacing, c), freqs.copy(), model)


def save_beampattern_csv(path, pattern_db, azimuths, freqs):
    """Rows are azimuths, columns frequency bins."""
    with open(path, "w") as fh:
        fh.write("azimuth_deg," + ",".join(f"{f:.3f}" for f in freqs) + "\n")
        for az, row in zip(azimuths, pattern_db):
            fh.write(f"{az:.3f}," + ",".join(f"{g:.6f}" for g in row) + "\n")
