import numpy as np
import pytest
import scipy.signal
from hypothesis import given, strategies as st

from spatial_frontend.dereverb import (WPE_PRESETS, WpeConfig, WpeFilters, _solve_filters, apply_wpe,
                                       estimate_wpe_filters, stack_delayed, wpe)
from spatial_frontend.errors import ConfigError, SingularSystemError
from spatial_frontend.spectral import Spectrogram, WaveformBuffer, istft, stft


def _spec(x):
    return stft(WaveformBuffer(x))


def test_config_validation():
    for bad in (dict(delay=0), dict(taps=0), dict(iterations=0), dict(regularization=0.0), dict(mode="x")):
        with pytest.raises(ConfigError):
            WpeConfig(**bad)
    with pytest.raises(ConfigError):
        WpeConfig.from_dict({"delay": 3, "bogus": 1})
    assert WpeConfig.from_dict(WpeConfig(delay=5).to_dict()) == WpeConfig(delay=5)
    assert WPE_PRESETS["default"].delay == 3


def test_stack_delayed_layout(rng):
    y = rng.standard_normal((2, 20, 3)) + 0j
    ctx = stack_delayed(y, delay=2, taps=4)
    for k in range(4):
        for m in range(3):
            col = ctx[:, :, k * 3 + m]
            np.testing.assert_array_equal(col[:, 2 + k:], y[:, :20 - 2 - k, m])
            assert not np.any(col[:, :2 + k])


def test_too_few_frames():
    spec = Spectrogram(np.ones((13, 1, 257), dtype=complex))
    with pytest.raises(ConfigError):
        estimate_wpe_filters(spec, WpeConfig(delay=3, taps=10))


def test_zero_filters_are_identity(rng):
    spec = _spec(rng.standard_normal((2, 8000)))
    cfg = WpeConfig()
    zero = WpeFilters(np.zeros((257, cfg.taps * 2, 2), dtype=complex), np.ones((spec.num_frames, 1, 257)), cfg)
    assert np.array_equal(apply_wpe(spec, zero).data, spec.data)


def test_one_tap_filter_formula(rng):
    T, F = 12, 257
    data = rng.standard_normal((T, 1, F)) + 1j * rng.standard_normal((T, 1, F))
    spec = Spectrogram(data)
    cfg = WpeConfig(delay=1, taps=1)
    g = np.zeros((F, 1, 1), dtype=complex)
    g[40, 0, 0] = 0.3 - 0.7j
    out = apply_wpe(spec, WpeFilters(g, np.ones((T, 1, F)), cfg)).data
    expected = data[:, 0, 40].copy()
    expected[1:] -= np.conj(0.3 - 0.7j) * data[:-1, 0, 40]
    np.testing.assert_allclose(out[:, 0, 40], expected, atol=1e-14)
    np.testing.assert_array_equal(np.delete(out, 40, axis=2), np.delete(data, 40, axis=2))


@given(st.floats(-10, 10).filter(lambda a: abs(a) > 1e-3), st.integers(0, 1000))
def test_apply_is_linear(alpha, seed):
    r = np.random.default_rng(seed)
    cfg = WpeConfig(delay=2, taps=3)
    data = r.standard_normal((20, 2, 257)) + 1j * r.standard_normal((20, 2, 257))
    G = r.standard_normal((257, 6, 2)) + 1j * r.standard_normal((257, 6, 2))
    filt = WpeFilters(G, np.ones((20, 1, 257)), cfg)
    a = apply_wpe(Spectrogram(alpha * data), filt).data
    b = alpha * apply_wpe(Spectrogram(data), filt).data
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)


def test_shape_mismatch(rng):
    spec = _spec(rng.standard_normal((2, 8000)))
    filt = estimate_wpe_filters(spec)
    with pytest.raises(ConfigError):
        apply_wpe(_spec(rng.standard_normal((3, 8000))), filt)


def test_white_noise_anechoic_is_left_alone(rng):
    """Delayed white noise cannot be predicted, so almost nothing is removed."""
    s = rng.standard_normal(16000 * 60 + 1)
    x = np.stack([s[1:], s[:-1]])  # two mics, one-sample offset
    spec = _spec(x)
    cfg = WpeConfig(delay=4, mode="mimo")
    out = wpe(spec, cfg).data
    e_in = np.sum(np.abs(spec.data) ** 2)
    predicted = np.sum(np.abs(spec.data - out) ** 2)
    assert predicted / e_in <= 1e-3
    assert abs(np.sum(np.abs(out) ** 2) / e_in - 1) <= 1e-3


def _echo_reduction(cfg, seconds, rng):
    tau = 3 * 128  # exactly Delta frames
    s = rng.standard_normal(16000 * seconds)
    h = np.zeros(tau + 1)
    h[0], h[tau] = 1.0, 0.5
    y = scipy.signal.lfilter(h, 1, s)
    out = istft(wpe(_spec(y), cfg), length=len(y)).samples[0]
    inner = slice(8192, len(y) - 8192)
    echo_in = y[inner] - s[inner]
    echo_out = out[inner] - s[inner]
    return 10 * np.log10(np.sum(echo_in ** 2) / np.sum(echo_out ** 2))


def test_single_echo_is_removed(rng):
    # per-frame variance of a one-channel Gaussian source biases the weighted
    # fit towards zero; a smoothed variance removes the bias
    assert _echo_reduction(WpeConfig(delay=3, taps=10, psd_context=4), 120, rng) >= 20


def test_variance_smoothing_helps_single_channel(rng):
    plain = _echo_reduction(WpeConfig(delay=3, taps=10), 20, rng)
    smooth = _echo_reduction(WpeConfig(delay=3, taps=10, psd_context=4), 20, rng)
    assert plain > 0 and smooth > plain + 6


def test_objective_non_increasing(rng):
    # needs T >> M * taps; on ~1 s inputs the weighted fit can lock onto a few frames
    x = scipy.signal.lfilter([1.0], [1, -0.9], rng.standard_normal((3, 64000)), axis=1)
    x += 0.5 * np.roll(x, 900, axis=1)
    filt = estimate_wpe_filters(_spec(x), WpeConfig(iterations=4))
    obj = filt.objective
    assert all(b <= a + 1e-9 * abs(a) for a, b in zip(obj, obj[1:]))


def test_siso_equals_mimo_single_channel(rng):
    x = scipy.signal.lfilter([1.0, 0, 0, 0.4], [1.0], rng.standard_normal(12000))
    spec = _spec(x)
    a = wpe(spec, WpeConfig(mode="siso")).data
    b = wpe(spec, WpeConfig(mode="mimo")).data
    np.testing.assert_allclose(a, b, atol=1e-9)


def test_siso_filters_have_no_cross_terms(rng):
    filt = estimate_wpe_filters(_spec(rng.standard_normal((3, 8000))), WpeConfig(mode="siso", taps=2))
    G = filt.filters
    for m in range(3):
        for mp in range(3):
            if m != mp:
                assert not np.any(G[:, mp::3, m])


def test_deterministic(rng):
    spec = _spec(rng.standard_normal((2, 8000)))
    a, b = estimate_wpe_filters(spec), estimate_wpe_filters(spec)
    assert np.array_equal(a.filters, b.filters)


def test_shape_preserved(rng):
    spec = _spec(rng.standard_normal((4, 8000)))
    assert wpe(spec).data.shape == spec.data.shape


def test_non_finite_system_names_bin():
    ctx = np.ones((3, 10, 2), dtype=complex)
    ctx[1, 0, 0] = np.inf
    y = np.ones((3, 10, 1), dtype=complex)
    with pytest.raises(SingularSystemError) as err:
        _solve_filters(ctx, y, np.ones((3, 10, 1)), 1e-6, bin_offset=32)
    assert err.value.index == 33
