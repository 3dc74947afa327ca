"""Intrusive reverberation metrics: C50, early-reference SNR, LS channel fits."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse.linalg
import scipy.signal

from .errors import ConfigError, SingularSystemError
from .scene import Rir
from .spectral import WaveformBuffer

DB_CAP = 80.0
EARLY_WINDOW_S = 0.05


def _cap(db):
    return float(np.clip(db, -DB_CAP, DB_CAP))


def _ratio_db(num, den):
    if den <= 0:
        return DB_CAP if num > 0 else -DB_CAP
    if num <= 0:
        return -DB_CAP
    return _cap(10 * math.log10(num / den))


def _taps(rir):
    if isinstance(rir, Rir):
        return np.atleast_2d(rir.taps), rir.sample_rate
    raise TypeError("expected an Rir")


def c50(h, sample_rate, direct_index=None):
    """C50 of a single impulse response, in dB, capped at +/-80.

    The 50 ms early window starts at the direct path (``argmax |h|`` unless
    given) and includes the sample 50 ms later.
    """
    h = np.asarray(h, dtype=float)
    if not np.any(h):
        raise ConfigError("C50 of an all-zero impulse response is undefined")
    n_d = int(np.argmax(np.abs(h))) if direct_index is None else int(direct_index)
    n_50 = int(round(EARLY_WINDOW_S * sample_rate))
    if len(h) <= n_d + n_50:
        raise ConfigError(
            f"impulse response of {len(h)} taps ends before direct path + 50 ms "
            f"({n_d + n_50})")
    energy = h ** 2
    split = n_d + n_50 + 1
    return _ratio_db(energy[:split].sum(), energy[split:].sum())


def c50_from_rir(rir: Rir):
    taps, fs = _taps(rir)
    return np.array([c50(h, fs) for h in taps])


def drr(h, sample_rate, direct_index=None, half_width_s=0.0025):
    """Direct-to-reverberant ratio with a +/-2.5 ms direct window."""
    h = np.asarray(h, dtype=float)
    n_d = int(np.argmax(np.abs(h))) if direct_index is None else int(direct_index)
    w = int(round(half_width_s * sample_rate))
    energy = h ** 2
    direct = energy[max(0, n_d - w):n_d + w + 1].sum()
    return _ratio_db(direct, energy.sum() - direct)


def truncate_early(rir: Rir) -> np.ndarray:
    taps, fs = _taps(rir)
    n_50 = int(round(EARLY_WINDOW_S * fs))
    out = np.zeros_like(taps)
    for m, h in enumerate(taps):
        n_d = int(np.argmax(np.abs(h)))
        out[m, :n_d + n_50 + 1] = h[:n_d + n_50 + 1]
    return out


def early_reference(clean: WaveformBuffer, rir: Rir) -> WaveformBuffer:
    """Clean source through the first 50 ms (after the direct path) of each RIR."""
    if clean.num_channels != 1:
        raise ConfigError("clean reference must be single-channel")
    early = truncate_early(rir)
    out = scipy.signal.fftconvolve(clean.samples, early, axes=1)[:, :clean.num_samples]
    return WaveformBuffer(out, clean.sample_rate)


def reference_snr(processed, reference, max_lag=160):
    """Scale- and lag-compensated SNR of ``processed`` against ``reference``.

    For every integer lag within ``max_lag`` the optimal gain ``alpha`` is
    fitted on the overlapping part; the result is ``|alpha r|^2 / |p - alpha r|^2``
    at the best lag, in dB.
    """
    p = np.asarray(processed, dtype=float).ravel()
    r = np.asarray(reference, dtype=float).ravel()
    n = min(len(p), len(r))
    p, r = p[:n], r[:n]
    if not np.any(r):
        raise ConfigError("early reference is all zeros")
    max_lag = min(max_lag, n - 1)
    # xc[n-1+lag] = sum_i p[i+lag] r[i]
    xc = scipy.signal.fftconvolve(p, r[::-1])
    lags = np.arange(-max_lag, max_lag + 1)
    r_cum = np.concatenate([[0.0], np.cumsum(r ** 2)])
    p_cum = np.concatenate([[0.0], np.cumsum(p ** 2)])
    best = -np.inf
    for lag in lags:
        c = xc[n - 1 + lag]
        if lag >= 0:
            er, ep = r_cum[n - lag], p_cum[n] - p_cum[lag]
        else:
            er, ep = r_cum[n] - r_cum[-lag], p_cum[n + lag]
        if er <= 0:
            continue
        signal = c * c / er
        err = max(ep - signal, 0.0)
        value = np.inf if err <= signal * 1e-16 else signal / err
        best = max(best, value)
    if best == np.inf:
        return DB_CAP
    if best <= 0:
        return -DB_CAP
    return _cap(10 * math.log10(best))


def early_reference_snr(processed: WaveformBuffer, clean: WaveformBuffer, rir: Rir,
                        channel=0, max_lag=160):
    """SNR of a single-channel output against one microphone's early reference."""
    ref = early_reference(clean, rir).samples[channel]
    return reference_snr(processed.samples[0], ref, max_lag=max_lag)


# ----------------------------------------------------------- system identification

def _toeplitz_condition_estimate(r):
    """Condition number of the symmetric Toeplitz matrix with first column ``r``.

    Extreme eigenvalues by Lanczos: FFT matrix-vector products for the largest,
    Levinson solves (shift-invert) for the smallest.
    """
    L = len(r)
    if L == 1:
        return 1.0
    if L <= 64:
        return float(np.linalg.cond(scipy.linalg.toeplitz(r)))
    c = np.concatenate([r, [0.0], r[:0:-1]])  # circulant embedding
    c_hat = np.fft.rfft(c)

    def matvec(v):
        return np.fft.irfft(c_hat * np.fft.rfft(np.ravel(v), len(c)), len(c))[:L]

    def solve(v):
        return scipy.linalg.solve_toeplitz(r, np.ravel(v))

    op = scipy.sparse.linalg.LinearOperator((L, L), matvec=matvec, dtype=float)
    inv = scipy.sparse.linalg.LinearOperator((L, L), matvec=solve, dtype=float)
    v0 = np.ones(L)
    try:
        hi = scipy.sparse.linalg.eigsh(op, k=1, which="LA", v0=v0, tol=1e-3,
                                       return_eigenvectors=False)[0]
        lo_inv = scipy.sparse.linalg.eigsh(inv, k=1, which="LM", v0=v0, tol=1e-3,
                                           return_eigenvectors=False)[0]
    except (np.linalg.LinAlgError, scipy.sparse.linalg.ArpackError):
        return math.inf
    if not np.isfinite(lo_inv) or lo_inv <= 0:
        return math.inf
    return float(hi * lo_inv)


def identify_channel(processed, clean, length, *, max_condition=1e10, tol=1e-10, maxiter=500):
    """Least-squares FIR ``h`` (``length`` taps) with ``processed ~ (clean * h)[:N]``.

    Solved exactly by conjugate gradients on the normal equations, with the
    stationary (Toeplitz) part of the normal matrix as preconditioner.
    """
    y = np.asarray(getattr(processed, "samples", processed), dtype=float).ravel()
    c = np.asarray(getattr(clean, "samples", clean), dtype=float).ravel()
    n = min(len(y), len(c))
    y, c = y[:n], c[:n]
    if length < 1 or length > n / 4:
        raise ConfigError(f"filter length must be in [1, {n // 4}], got {length}")
    c_rev = c[::-1]

    def normal(v):
        u = scipy.signal.fftconvolve(c, v)[:n]
        return scipy.signal.fftconvolve(u, c_rev)[n - 1:n - 1 + length]

    r = scipy.signal.fftconvolve(c, c_rev)[n - 1:n - 1 + length]
    b = scipy.signal.fftconvolve(y, c_rev)[n - 1:n - 1 + length]
    cond = _toeplitz_condition_estimate(r)
    if not cond < max_condition or r[0] <= 0:
        raise SingularSystemError(
            f"normal equations are ill-conditioned (condition ~{cond:.3g})", condition=cond)

    def precondition(v):
        return scipy.linalg.solve_toeplitz(r, v)

    x = np.zeros(length)
    res = b.copy()
    z = precondition(res)
    p = z.copy()
    rz = res @ z
    b_norm = np.linalg.norm(b)
    if b_norm == 0:
        return x
    for _ in range(maxiter):
        Ap = normal(p)
        alpha = rz / (p @ Ap)
        x += alpha * p
        res -= alpha * Ap
        if np.linalg.norm(res) <= tol * b_norm:
            return x
        z = precondition(res)
        rz_new = res @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise SingularSystemError(
        f"channel fit did not converge in {maxiter} iterations (condition ~{cond:.3g})",
        condition=cond)


def effective_c50(processed, clean, length, sample_rate):
    """C50 of the LS-identified clean-to-output channel."""
    return c50(identify_channel(processed, clean, length), sample_rate)


def localization_error(estimate, oracle):
    estimate = np.asarray(estimate, dtype=float)
    oracle = np.asarray(oracle, dtype=float)
    for a in (estimate, oracle):
        if np.any((a < 0) | (a > 180)):
            raise ConfigError("azimuths must lie in [0, 180] degrees")
    err = np.abs(estimate - oracle)
    return float(err) if err.ndim == 0 else err


# ------------------------------------------------------------------- reporting

@dataclass
class MetricReport:
    c50_db: list
    early_reference_snr_db: float | None = None
    effective_c50_db: float | None = None
    localization_error_deg: float | None = None
    drr_db: list = field(default_factory=list)
    realized_snr_db: dict = field(default_factory=dict)

    def to_dict(self):
        def clean(v):
            if isinstance(v, float) and math.isinf(v):
                return "inf" if v > 0 else "-inf"
            if isinstance(v, dict):
                return {k: clean(x) for k, x in v.items()}
            if isinstance(v, list):
                return [clean(x) for x in v]
            return v
        return clean(asdict(self))

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text


def write_reports_csv(path, reports, labels=None):
    """One row per report; list-valued fields are averaged."""
    fields = ["label", "c50_db_mean", "early_reference_snr_db", "effective_c50_db",
              "localization_error_deg", "drr_db_mean"]
    labels = labels or [str(i) for i in range(len(reports))]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(fields)
        for label, rep in zip(labels, reports):
            w.writerow([
                label,
                float(np.mean(rep.c50_db)) if rep.c50_db else "",
                "" if rep.early_reference_snr_db is None else rep.early_reference_snr_db,
                "" if rep.effective_c50_db is None else rep.effective_c50_db,
                "" if rep.localization_error_deg is None else rep.localization_error_deg,
                float(np.mean(rep.drr_db)) if rep.drr_db else "",
            ])
