import numpy as np
import pytest
from hypothesis import given, strategies as st

from spatial_frontend.errors import ConfigError
from spatial_frontend.spectral import (STFT_PRESETS, Spectrogram, StftConfig, WaveformBuffer, istft,
                                       log_power_normalize, read_wav, stft, window_envelope, write_wav)


def test_waveform_validation():
    assert WaveformBuffer(np.zeros(10)).samples.shape == (1, 10)
    with pytest.raises(ConfigError):
        WaveformBuffer(np.array([0.0, np.nan]))
    with pytest.raises(ConfigError):
        WaveformBuffer(np.zeros(4), sample_rate=0)


def test_non_cola_config_rejected():
    with pytest.raises(ConfigError):
        StftConfig(512, 300, "sqrt_hann")
    with pytest.raises(ConfigError):
        StftConfig(512, 200, "hann")
    StftConfig(512, 256, "sqrt_hann")


def test_shifted_squared_windows_sum_to_constant():
    for cfg in STFT_PRESETS.values():
        env = window_envelope(cfg, 40)
        interior = env[cfg.fft_size:-cfg.fft_size]
        assert np.ptp(interior) < 1e-12 * interior.mean()


def test_short_signal_rejected():
    with pytest.raises(ConfigError):
        stft(WaveformBuffer(np.zeros(100)))


def test_frame_count_zero_pads_tail():
    cfg = StftConfig()
    assert cfg.num_frames(512) == 1
    assert cfg.num_frames(513) == 2
    assert stft(WaveformBuffer(np.zeros(1000))).num_frames == 1 + int(np.ceil((1000 - 512) / 128))


def test_sinusoid_at_bin_is_orthogonal():
    cfg = StftConfig(512, 512, "rect")
    k = 37
    n = np.arange(512)
    spec = stft(WaveformBuffer(np.cos(2 * np.pi * k * n / 512)), cfg).data[0, 0]
    rel = np.abs(spec) / np.abs(spec[k])
    others = np.delete(rel, k)
    with np.errstate(divide="ignore"):
        assert np.all(20 * np.log10(others + 1e-300) <= -300 + 1e-9) or np.max(others) < 1e-14


def test_zero_in_zero_out():
    spec = stft(WaveformBuffer(np.zeros((2, 2048))))
    assert not np.any(spec.data)
    assert not np.any(istft(spec).samples)


def test_parseval_with_window_compensation(rng):
    cfg = StftConfig()
    x = rng.standard_normal(16000)
    spec = stft(WaveformBuffer(x), cfg).data[:, 0, :]
    weights = np.full(cfg.num_bins, 2.0)
    weights[[0, -1]] = 1.0
    spec_energy = np.sum(weights * np.abs(spec) ** 2) / cfg.fft_size
    env = window_envelope(cfg, spec.shape[0])
    time_energy = np.sum(x ** 2 * env[:len(x)])
    assert abs(spec_energy - time_energy) <= 1e-6 * time_energy
    # in the interior the envelope is fft_size / (2 hop) for sqrt-Hann
    assert np.isclose(env[1024], cfg.fft_size / (2 * cfg.hop_size))


@given(st.integers(16000, 80000), st.integers(0, 2 ** 31 - 1), st.sampled_from(sorted(STFT_PRESETS)))
def test_round_trip(n, seed, preset):
    cfg = STFT_PRESETS[preset]
    x = np.random.default_rng(seed).standard_normal((2, n))
    y = istft(stft(WaveformBuffer(x), cfg), length=n).samples
    inner = slice(cfg.fft_size, n - cfg.fft_size)
    err = np.linalg.norm(y[:, inner] - x[:, inner]) / np.linalg.norm(x[:, inner])
    assert err <= 1e-6


def test_single_frame_inverse_is_windowed_segment(rng):
    cfg = StftConfig()
    n = np.arange(cfg.fft_size)
    seg = np.sin(2 * np.pi * 440 * n / 16000)
    w = cfg.window_array()
    spec = Spectrogram(np.fft.rfft(seg * w)[None, None, :])
    out = istft(spec).samples[0]
    # synthesis applies the window again and divides by the single-frame envelope
    env = w ** 2
    mask = env > 1e-8 * env.max()
    np.testing.assert_allclose(out[mask], seg[mask], atol=1e-9)


def test_stft_deterministic(rng):
    x = WaveformBuffer(rng.standard_normal((3, 5000)))
    assert np.array_equal(stft(x).data, stft(x).data)


def test_log_power_constant_magnitude_is_zero():
    data = np.full((10, 2, 257), 3.0 + 4.0j)
    lp = log_power_normalize(data)
    assert not np.any(lp.data)
    assert np.all(lp.std == 1.0)


def test_log_power_identical_channels(rng):
    plane = rng.standard_normal((20, 1, 257)) + 1j * rng.standard_normal((20, 1, 257))
    lp = log_power_normalize(np.repeat(plane, 3, axis=1)).data
    assert np.array_equal(lp[:, 0], lp[:, 1]) and np.array_equal(lp[:, 1], lp[:, 2])


@given(st.integers(0, 2 ** 31 - 1))
def test_log_power_statistics(seed):
    r = np.random.default_rng(seed)
    data = r.standard_normal((30, 4, 257)) * r.uniform(0.1, 10, (1, 4, 1)) + 1j * r.standard_normal((30, 4, 257))
    lp = log_power_normalize(data)
    assert np.all(np.abs(lp.data.mean(axis=(0, 2))) <= 1e-9)
    assert np.all(np.abs(lp.data.var(axis=(0, 2)) - 1) <= 1e-6)
    np.testing.assert_allclose(lp.denormalize(), np.log(np.abs(data) ** 2 + 1e-10), rtol=1e-10, atol=1e-10)


def test_wav_round_trip(tmp_path, rng):
    x = WaveformBuffer(rng.uniform(-0.9, 0.9, (3, 1000)))
    write_wav(tmp_path / "f.wav", x)
    y = read_wav(tmp_path / "f.wav", sample_rate=16000)
    np.testing.assert_allclose(y.samples, x.samples, atol=1e-7)
    write_wav(tmp_path / "p.wav", x, fmt="pcm16")
    z = read_wav(tmp_path / "p.wav")
    np.testing.assert_allclose(z.samples, x.samples, atol=1 / 32767)
    with pytest.raises(ConfigError):
        read_wav(tmp_path / "f.wav", sample_rate=8000)


def test_pcm16_refuses_overrange(tmp_path):
    with pytest.raises(ConfigError):
        write_wav(tmp_path / "x.wav", WaveformBuffer(np.array([1.5, 0.0])), fmt="pcm16")
