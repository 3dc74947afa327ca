"""Self-attention channel combinator (SACC).

Per frame ``t`` with normalised log power ``X_t`` (channels x bins)::

    Q = X_t Wq + bq,  K = X_t Wk + bk,  V = X_t Wv + bv
    A = softmax_rows(Q K^T / sqrt(dim))          (M x M)
    W = softmax_channels(A V)                    (M,)
    Y_t = sum_m W_m X_t[m]                        (bins,)

The same weights apply to every frequency bin.  Gradients are derived by hand
(``sacc_backward``) and the combinator is trained against the clean log power
with Adam.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import ConfigError, DivergenceError
from .spectral import LogPowerTensor

_PARAM_NAMES = ("wq", "bq", "wk", "bk", "wv", "bv")


@dataclass
class SaccParams:
    wq: np.ndarray
    bq: np.ndarray
    wk: np.ndarray
    bk: np.ndarray
    wv: np.ndarray
    bv: np.ndarray

    @classmethod
    def init(cls, num_bins, dim=32, seed=0):
        """Glorot-uniform matrices, zero biases."""
        if dim < 1:
            raise ConfigError(f"attention dimension must be >= 1, got {dim}")
        rng = np.random.default_rng(seed)

        def glorot(fan_in, fan_out):
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            return rng.uniform(-limit, limit, (fan_in, fan_out))

        return cls(glorot(num_bins, dim), np.zeros(dim), glorot(num_bins, dim), np.zeros(dim),
                   glorot(num_bins, 1), np.zeros(1))

    @property
    def num_bins(self):
        return self.wq.shape[0]

    @property
    def dim(self):
        return self.wq.shape[1]

    def tensors(self):
        return [getattr(self, n) for n in _PARAM_NAMES]

    def copy(self):
        return SaccParams(*[t.copy() for t in self.tensors()])

    def validate(self):
        F, K = self.wq.shape
        expected = {"wq": (F, K), "bq": (K,), "wk": (F, K), "bk": (K,), "wv": (F, 1), "bv": (1,)}
        for name, shape in expected.items():
            t = getattr(self, name)
            if t.shape != shape:
                raise ConfigError(f"parameter {name} has shape {t.shape}, expected {shape}")
            if not np.all(np.isfinite(t)):
                raise ConfigError(f"parameter {name} has non-finite entries")


@dataclass
class SaccOutput:
    Y: np.ndarray      # (T, F)
    W: np.ndarray      # (T, M)
    A: np.ndarray      # (T, M, M)
    cache: dict = field(default_factory=dict, repr=False)


def _softmax(x, axis=-1):
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def _as_array(X):
    return X.data if isinstance(X, LogPowerTensor) else np.asarray(X, dtype=float)


def sacc_forward(X, params: SaccParams) -> SaccOutput:
    X = _as_array(X)
    if X.ndim != 3:
        raise ConfigError(f"expected (frames, channels, bins), got shape {X.shape}")
    if X.shape[2] != params.num_bins:
        raise ConfigError(
            f"input has {X.shape[2]} bins but parameters expect {params.num_bins}")
    scale = 1.0 / math.sqrt(params.dim)
    Q = X @ params.wq + params.bq
    K = X @ params.wk + params.bk
    V = (X @ params.wv + params.bv)[..., 0]
    A = _softmax(np.einsum("tik,tjk->tij", Q, K) * scale, axis=-1)
    Z = np.einsum("tij,tj->ti", A, V)
    W = _softmax(Z, axis=-1)
    Y = np.einsum("tm,tmf->tf", W, X)
    return SaccOutput(Y, W, A, {"Q": Q, "K": K, "V": V, "Z": Z, "shape": X.shape,
                                "dim": params.dim})


def sacc_backward(out: SaccOutput, X, params: SaccParams, dY) -> SaccParams:
    """Gradients of a loss with ``dL/dY = dY`` w.r.t. every parameter tensor."""
    X = _as_array(X)
    dY = np.asarray(dY, dtype=float)
    cache = out.cache
    if cache.get("shape") != X.shape or cache.get("dim") != params.dim \
            or dY.shape != out.Y.shape or X.shape[2] != params.num_bins:
        raise ConfigError("forward cache does not match the inputs given to backward")
    Q, K, V = cache["Q"], cache["K"], cache["V"]
    A, W = out.A, out.W
    scale = 1.0 / math.sqrt(params.dim)

    dW = np.einsum("tf,tmf->tm", dY, X)
    dZ = W * (dW - np.sum(W * dW, axis=-1, keepdims=True))
    dA = dZ[:, :, None] * V[:, None, :]
    dV = np.einsum("tij,ti->tj", A, dZ)
    dS = A * (dA - np.sum(A * dA, axis=-1, keepdims=True)) * scale
    dQ = np.einsum("tij,tjk->tik", dS, K)
    dK = np.einsum("tij,tik->tjk", dS, Q)

    T, M, F = X.shape
    Xf = X.reshape(T * M, F)
    return SaccParams(
        wq=Xf.T @ dQ.reshape(T * M, -1), bq=dQ.sum(axis=(0, 1)),
        wk=Xf.T @ dK.reshape(T * M, -1), bk=dK.sum(axis=(0, 1)),
        wv=(Xf.T @ dV.reshape(T * M))[:, None], bv=np.array([dV.sum()]),
    )


def mse_loss(Y, target):
    diff = Y - target
    return float(np.mean(diff ** 2)), 2.0 * diff / diff.size


def combine_spectrogram(data, W):
    """Frame-wise weighted channel sum of complex STFT data ``(T, M, F)``."""
    return np.einsum("tm,tmf->tf", W, data)[:, None, :]


# ------------------------------------------------------------------ training

@dataclass(frozen=True)
class SaccTrainConfig:
    learning_rate: float = 3e-3
    epochs: int = 30
    batch_size: int = 8
    seed: int = 0
    attention_dim: int = 32
    loss: str = "mse"
    beta1: float = 0.9
    beta2: float = 0.999

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ConfigError(f"learning rate must be >= 0, got {self.learning_rate}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if self.loss != "mse":
            raise ConfigError(f"unsupported loss {self.loss!r}")

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown training keys {sorted(unknown)}")
        return cls(**d)


def dataset_loss(params, dataset):
    """Mean over utterances of the per-utterance MSE."""
    return float(np.mean([mse_loss(sacc_forward(X, params).Y, Yc)[0] for X, Yc in dataset]))


def _check_dataset(dataset):
    if not dataset:
        raise ConfigError("training set is empty")
    shapes = {(_as_array(X).shape[1], _as_array(X).shape[2]) for X, _ in dataset}
    if len(shapes) != 1:
        raise ConfigError(f"training pairs disagree on (channels, bins): {sorted(shapes)}")
    for X, Yc in dataset:
        Xa = _as_array(X)
        if np.shape(Yc) != (Xa.shape[0], Xa.shape[2]):
            raise ConfigError(
                f"target shape {np.shape(Yc)} does not match input frames/bins {Xa.shape}")
    return shapes.pop()


def sacc_train(dataset, cfg: SaccTrainConfig = SaccTrainConfig(), params: SaccParams | None = None):
    """Fit the combinator to ``[(X, Y_clean), ...]`` by mini-batch Adam.

    Returns ``(params, trace)`` where ``trace[e]`` is the full-dataset loss
    after epoch ``e``.
    """
    _, F = _check_dataset(dataset)
    dataset = [(_as_array(X), np.asarray(Yc, dtype=float)) for X, Yc in dataset]
    params = SaccParams.init(F, cfg.attention_dim, cfg.seed) if params is None else params.copy()
    params.validate()
    rng = np.random.default_rng(cfg.seed)
    m = [np.zeros_like(t) for t in params.tensors()]
    v = [np.zeros_like(t) for t in params.tensors()]
    step = 0
    trace = []
    for _ in range(cfg.epochs):
        order = rng.permutation(len(dataset))
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            grads = [np.zeros_like(t) for t in params.tensors()]
            for i in batch:
                X, Yc = dataset[i]
                out = sacc_forward(X, params)
                _, dY = mse_loss(out.Y, Yc)
                g = sacc_backward(out, X, params, dY)
                for acc, gi in zip(grads, g.tensors()):
                    acc += gi / len(batch)
            step += 1
            for name, t, g, mi, vi in zip(_PARAM_NAMES, params.tensors(), grads, m, v):
                mi *= cfg.beta1
                mi += (1 - cfg.beta1) * g
                vi *= cfg.beta2
                vi += (1 - cfg.beta2) * g * g
                m_hat = mi / (1 - cfg.beta1 ** step)
                v_hat = vi / (1 - cfg.beta2 ** step)
                t -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + 1e-8)
        loss = dataset_loss(params, dataset)
        trace.append(loss)
        if not math.isfinite(loss):
            raise DivergenceError(f"training diverged at epoch {len(trace)}", trace)
    return params, trace


# ------------------------------------------------------------------ analysis

def average_weights(W):
    W = np.asarray(W, dtype=float)
    if W.ndim != 2 or W.shape[0] < 1:
        raise ConfigError("expected a (frames, channels) weight matrix with frames >= 1")
    return W.mean(axis=0)


@dataclass
class Localization:
    azimuth_deg: float
    beam_index: int
    flatness: float
    profile: list

    def to_dict(self):
        return {"azimuth_deg": self.azimuth_deg, "beam_index": self.beam_index,
                "flatness": self.flatness, "profile": self.profile}


def flatness(profile):
    """Geometric over arithmetic mean; 1 for a uniform profile."""
    p = np.maximum(np.asarray(profile, dtype=float), 1e-300)
    return float(np.exp(np.mean(np.log(p))) / np.mean(p))


def localize(profile, beams) -> Localization:
    """Beam with the largest average weight (lowest index on ties)."""
    profile = np.asarray(profile, dtype=float)
    azimuths = np.asarray(getattr(beams, "look_azimuths", beams), dtype=float)
    if profile.shape != azimuths.shape:
        raise ConfigError(
            f"profile has {profile.size} entries but there are {azimuths.size} beams")
    idx = int(np.argmax(profile))
    return Localization(float(azimuths[idx]), idx, flatness(profile), profile.tolist())


# ------------------------------------------------------------------ file formats

_MAGIC = b"SACC"
_VERSION = 1


def save_params(path, params: SaccParams):
    """Header ``magic, version, bins, dim`` then float64 tensors, row-major."""
    params.validate()
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sIII", _MAGIC, _VERSION, params.num_bins, params.dim))
        for t in params.tensors():
            fh.write(np.ascontiguousarray(t, dtype="<f8").tobytes())


def load_params(path) -> SaccParams:
    raw = Path(path).read_bytes()
    head = struct.calcsize("<4sIII")
    if len(raw) < head:
        raise ConfigError(f"{path}: truncated SACC parameter file")
    magic, version, F, K = struct.unpack_from("<4sIII", raw)
    if magic != _MAGIC or version != _VERSION:
        raise ConfigError(f"{path}: not a version-{_VERSION} SACC parameter file")
    shapes = [(F, K), (K,), (F, K), (K,), (F, 1), (1,)]
    arr = np.frombuffer(raw, dtype="<f8", offset=head)
    if arr.size != sum(int(np.prod(s)) for s in shapes):
        raise ConfigError(f"{path}: payload size does not match header")
    tensors, offset = [], 0
    for s in shapes:
        n = int(np.prod(s))
        tensors.append(arr[offset:offset + n].reshape(s).copy())
        offset += n
    return SaccParams(*tensors)


def save_trace(path, trace):
    with open(path, "w") as fh:
        json.dump({"loss": [float(x) for x in trace]}, fh, indent=2)
