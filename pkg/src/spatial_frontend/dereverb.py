"""Weighted prediction error (WPE) dereverberation, batch mode.

The late tail of every channel is predicted from a delayed window of past
STFT frames and subtracted.  Filters and the time-varying source variance are
re-estimated alternately.  With per-frame variances (``psd_context=0``) every
round decreases the weighted prediction-error objective, provided there are
many more frames than filter coefficients.

    >>> cfg = WpeConfig(mode="mimo")
    >>> out = wpe(spec, cfg)              # doctest: +SKIP
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.ndimage

from .errors import ConfigError, SingularSystemError
from .spectral import Spectrogram

VARIANCE_FLOOR = 1e-10
_BIN_CHUNK = 16


@dataclass(frozen=True)
class WpeConfig:
    delay: int = 3
    taps: int = 10
    iterations: int = 3
    # relative to trace(R_f) / (M * taps)
    regularization: float = 1e-6
    mode: str = "mimo"
    # lambda averaged over +/- psd_context neighbouring frames; 0 = per frame
    psd_context: int = 0

    def __post_init__(self):
        if self.mode not in ("mimo", "siso"):
            raise ConfigError(f"wpe mode must be 'mimo' or 'siso', got {self.mode!r}")
        for name in ("delay", "taps", "iterations"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise ConfigError(f"wpe {name} must be an integer >= 1, got {value!r}")
        if not isinstance(self.psd_context, (int, np.integer)) or self.psd_context < 0:
            raise ConfigError(f"wpe psd_context must be an integer >= 0, got {self.psd_context!r}")
        if not self.regularization > 0:
            raise ConfigError(f"wpe regularization must be > 0, got {self.regularization}")

    @classmethod
    def from_dict(cls, d):
        known = {"delay", "taps", "iterations", "regularization", "mode", "psd_context"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown wpe keys {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        return {"mode": self.mode, "delay": self.delay, "taps": self.taps,
                "iterations": self.iterations, "regularization": self.regularization,
                "psd_context": self.psd_context}


# With a 512-sample window the frames overlap by 75%, so Delta * hop undercounts
# what survives; Delta = 7 keeps reflections up to about 50 ms intact.
WPE_PRESETS = {
    "default": WpeConfig(),
    "early50": WpeConfig(delay=7),
}


@dataclass
class WpeFilters:
    """Per-bin prediction filters.

    ``filters`` has shape ``(F, M*taps, M)``; row ``k*M + m'`` holds the
    coefficient applied to channel ``m'`` delayed by ``delay + k`` frames.
    SISO filters use the same layout with zero cross-channel entries.
    ``variance`` is ``(T, 1, F)`` for MIMO and ``(T, M, F)`` for SISO.
    """

    filters: np.ndarray
    variance: np.ndarray
    config: WpeConfig
    objective: list = field(default_factory=list)

    @property
    def num_channels(self):
        return self.filters.shape[2]


def stack_delayed(y, delay, taps):
    """Delayed context vectors for every frame of a ``(F, T, M)`` array.

    Returns ``(F, T, taps*M)``; history before frame 0 is zero.
    """
    F, T, M = y.shape
    out = np.zeros((F, T, taps * M), dtype=y.dtype)
    for k in range(taps):
        shift = delay + k
        if shift < T:
            out[:, shift:, k * M:(k + 1) * M] = y[:, :T - shift, :]
    return out


def _predict(filters, context):
    # x_hat = y - G^H y_tilde
    return np.einsum("fkm,ftk->ftm", filters.conj(), context)


def _variance(x, floor=VARIANCE_FLOOR, context=0):
    """Channel-averaged power of ``(F, T, M)``, optionally smoothed over frames."""
    power = np.mean(np.abs(x) ** 2, axis=-1, keepdims=True)
    if context:
        power = scipy.ndimage.uniform_filter1d(power, 2 * context + 1, axis=1, mode="constant")
    return np.maximum(power, floor)


def _objective(x, lam):
    """sum over (t, f, m) of |x|^2 / lambda + log lambda."""
    lam = np.broadcast_to(lam, x.shape)
    return float(np.sum(np.abs(x) ** 2 / lam) + np.sum(np.log(lam)))


def _solve_filters(context, y, lam, rel_reg, bin_offset):
    """Weighted least squares for one chunk of bins; lam is ``(F, T, 1)``."""
    weighted = context / lam
    R = weighted.transpose(0, 2, 1) @ context.conj()
    P = weighted.transpose(0, 2, 1) @ y.conj()
    p = R.shape[-1]
    trace = np.real(np.trace(R, axis1=1, axis2=2))
    G = np.zeros_like(P)
    active = trace > 0
    if not np.all(np.isfinite(trace)):
        bad = int(np.flatnonzero(~np.isfinite(trace))[0])
        raise SingularSystemError(
            f"WPE correlation matrix is non-finite at bin {bin_offset + bad}",
            index=bin_offset + bad)
    if np.any(active):
        eps = rel_reg * trace[active] / p
        Ra = R[active] + eps[:, None, None] * np.eye(p)
        try:
            G[active] = np.linalg.solve(Ra, P[active])
        except np.linalg.LinAlgError:
            for i, f in enumerate(np.flatnonzero(active)):
                try:
                    np.linalg.solve(Ra[i], P[active][i])
                except np.linalg.LinAlgError:
                    raise SingularSystemError(
                        f"regularised WPE correlation matrix is singular at bin {bin_offset + f}",
                        index=bin_offset + f) from None
            raise
        bad = ~np.all(np.isfinite(G), axis=(1, 2))
        if np.any(bad):
            f = int(np.flatnonzero(bad)[0])
            raise SingularSystemError(
                f"WPE filter solve produced non-finite values at bin {bin_offset + f}",
                index=bin_offset + f, condition=float(np.linalg.cond(R[f] + 0)))
    return G


def _estimate_block(y, cfg, bin_offset):
    """Alternating estimation on ``(F, T, M)``; returns filters, variance, objective."""
    context = stack_delayed(y, cfg.delay, cfg.taps)
    x = y
    objective = []
    G = None
    lam = None
    for _ in range(cfg.iterations):
        lam = _variance(x, context=cfg.psd_context)
        G = _solve_filters(context, y, lam, cfg.regularization, bin_offset)
        x = y - _predict(G, context)
        objective.append(_objective(x, lam))
    return G, lam, objective


def estimate_wpe_filters(spec: Spectrogram, cfg: WpeConfig = WpeConfig()) -> WpeFilters:
    T, M, F = spec.data.shape
    if T <= cfg.delay + cfg.taps:
        raise ConfigError(
            f"need more than delay + taps = {cfg.delay + cfg.taps} frames, got {T}")
    y_all = spec.data.transpose(2, 0, 1)
    p = cfg.taps * M
    filters = np.zeros((F, p, M), dtype=complex)
    lam_channels = 1 if cfg.mode == "mimo" else M
    variance = np.zeros((T, lam_channels, F))
    objective = np.zeros(cfg.iterations)
    for start in range(0, F, _BIN_CHUNK):
        stop = min(start + _BIN_CHUNK, F)
        if cfg.mode == "mimo":
            G, lam, obj = _estimate_block(y_all[start:stop], cfg, start)
            filters[start:stop] = G
            variance[:, 0, start:stop] = lam[..., 0].T
            objective += obj
        else:
            for m in range(M):
                G, lam, obj = _estimate_block(y_all[start:stop, :, m:m + 1], cfg, start)
                filters[start:stop, m::M, m] = G[:, :, 0]
                variance[:, m, start:stop] = lam[..., 0].T
                objective += obj
    return WpeFilters(filters, variance, cfg, list(objective))


def apply_wpe(spec: Spectrogram, filters: WpeFilters, cfg: WpeConfig | None = None) -> Spectrogram:
    cfg = filters.config if cfg is None else cfg
    T, M, F = spec.data.shape
    expected = (F, cfg.taps * M, M)
    if filters.filters.shape != expected:
        raise ConfigError(
            f"filter shape {filters.filters.shape} does not match spectrogram "
            f"and config (expected {expected})")
    y = spec.data.transpose(2, 0, 1)
    out = np.empty_like(y)
    for start in range(0, F, _BIN_CHUNK):
        stop = min(start + _BIN_CHUNK, F)
        context = stack_delayed(y[start:stop], cfg.delay, cfg.taps)
        out[start:stop] = y[start:stop] - _predict(filters.filters[start:stop], context)
    return spec.replace(out.transpose(1, 2, 0))


def wpe(spec: Spectrogram, cfg: WpeConfig = WpeConfig()) -> Spectrogram:
    """Estimate filters on ``spec`` and apply them to it."""
    return apply_wpe(spec, estimate_wpe_filters(spec, cfg), cfg)


def wpe_objective(spec: Spectrogram, filters: WpeFilters) -> float:
    """Weighted prediction-error objective of ``spec`` under the stored variance."""
    out = apply_wpe(spec, filters)
    x = out.data.transpose(2, 0, 1)
    lam = filters.variance.transpose(2, 0, 1)
    return _objective(x, lam)
