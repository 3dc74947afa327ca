import math

import numpy as np
import pytest
import scipy.linalg
import scipy.signal
from hypothesis import given, strategies as st

from spatial_frontend.errors import ConfigError, SingularSystemError
from spatial_frontend.metrics import (MetricReport, c50, c50_from_rir, drr, early_reference, identify_channel,
                                      localization_error, reference_snr, truncate_early, write_reports_csv)
from spatial_frontend.scene import RoomScene, generate_rir, synthetic_utterance

FS = 16000


def test_c50_delta_is_capped():
    h = np.zeros(2000)
    h[10] = 1.0
    assert c50(h, FS) == 80.0


def test_c50_two_equal_taps():
    h = np.zeros(2000)
    h[0] = 1.0
    h[int(0.06 * FS)] = 1.0
    assert c50(h, FS) == pytest.approx(0.0, abs=1e-12)


def test_c50_exponential_tail_closed_form():
    k = 6 * math.log(10) / 0.5
    t = np.arange(int(2.0 * FS)) / FS
    h = np.exp(-k * t / 2)
    expected = 10 * math.log10(math.exp(k * 0.05) - 1)
    assert expected == pytest.approx(4.7437, abs=1e-4)
    assert abs(c50(h, FS) - expected) <= 0.1


def test_c50_errors():
    with pytest.raises(ConfigError):
        c50(np.zeros(2000), FS)
    with pytest.raises(ConfigError):
        c50(np.r_[np.zeros(10), 1.0, np.zeros(100)], FS)


@given(st.floats(1e-3, 1e3) | st.floats(-1e3, -1e-3))
def test_c50_scale_invariant(alpha):
    rir = generate_rir(RoomScene(t60=0.4, seed=2))
    np.testing.assert_allclose(c50_from_rir(rir), [c50(alpha * h, FS) for h in rir.taps], atol=1e-9)


def test_drr_of_delta():
    h = np.zeros(1000)
    h[5] = 1.0
    assert drr(h, FS) == 80.0


def test_truncate_early_and_reference():
    rir = generate_rir(RoomScene(t60=0.5, seed=3))
    early = truncate_early(rir)
    for m in range(8):
        cut = rir.direct_index[m] + 800 + 1
        np.testing.assert_array_equal(early[m, :cut], rir.taps[m, :cut])
        assert not np.any(early[m, cut:])
    clean = synthetic_utterance(0.5, seed=0)
    ref = early_reference(clean, rir)
    np.testing.assert_allclose(ref.samples[2], np.convolve(clean.samples[0], early[2])[:clean.num_samples],
                               atol=1e-10)


def test_reference_snr_identity_is_capped(rng):
    r = rng.standard_normal(8000)
    assert reference_snr(r, r) == 80.0


def test_reference_snr_equal_power_noise(rng):
    r = rng.standard_normal(160000)
    n = rng.standard_normal(160000)
    n *= np.linalg.norm(r) / np.linalg.norm(n)
    assert abs(reference_snr(r + n, r)) <= 0.1


@given(st.floats(1e-3, 1e3))
def test_reference_snr_gain_invariant(alpha):
    rng = np.random.default_rng(0)
    r = rng.standard_normal(4000)
    p = r + 0.3 * rng.standard_normal(4000)
    assert reference_snr(alpha * p, r) == pytest.approx(reference_snr(p, r), abs=1e-9)


def test_reference_snr_lag_compensated(rng):
    r = rng.standard_normal(8000)
    p = np.r_[np.zeros(37), r[:-37]] + 0.1 * rng.standard_normal(8000)
    assert reference_snr(p, r) == pytest.approx(20.0, abs=0.5)


def test_reference_snr_zero_reference():
    with pytest.raises(ConfigError):
        reference_snr(np.ones(100), np.zeros(100))


def test_identify_channel_noiseless_exact(rng):
    clean = rng.standard_normal(16000)
    h = rng.standard_normal(300) * np.exp(-np.arange(300) / 60)
    y = np.convolve(clean, h)[:16000]
    est = identify_channel(y, clean, 300)
    assert np.linalg.norm(est - h) / np.linalg.norm(h) <= 1e-6


def test_identify_channel_on_speech_like_source():
    clean = synthetic_utterance(4.0, seed=5).samples[0] + 1e-3 * np.random.default_rng(0).standard_normal(64000)
    h = generate_rir(RoomScene(t60=0.3, seed=1)).taps[0][:3000]
    y = np.convolve(clean, h)[:64000]
    est = identify_channel(y, clean, 3000)
    assert np.linalg.norm(est - h) / np.linalg.norm(h) <= 1e-6


@pytest.mark.parametrize("seed", range(10))
def test_identify_channel_noisy_c50(seed):
    rng = np.random.default_rng(seed)
    clean = rng.standard_normal(4 * FS)
    h = generate_rir(RoomScene(t60=0.4, seed=seed)).taps[0]
    y = np.convolve(clean, h)[:len(clean)]
    noise = rng.standard_normal(len(y))
    y = y + noise * np.linalg.norm(y) / np.linalg.norm(noise) * 10 ** (-20 / 20)
    est = identify_channel(y, clean, len(h))
    assert abs(c50(est, FS) - c50(h, FS)) <= 1.0


def test_identify_channel_ill_conditioned():
    # a pure tone excites one frequency; the reported condition is the exact
    # Toeplitz condition number
    x = np.sin(0.3 * np.arange(16000))
    with pytest.raises(SingularSystemError) as err:
        identify_channel(x, x, 400, max_condition=1e6)
    r = scipy.signal.fftconvolve(x, x[::-1])[15999:16399]
    assert err.value.condition == pytest.approx(np.linalg.cond(scipy.linalg.toeplitz(r)), rel=1e-2)
    with pytest.raises(SingularSystemError):
        identify_channel(np.ones(4000), np.zeros(4000), 100)
    with pytest.raises(ConfigError):
        identify_channel(np.ones(400), np.ones(400), 200)


def test_localization_error():
    assert localization_error(95.625, 95.0) == 0.625
    assert localization_error(30.0, 30.0) == 0.0
    est = np.array([10.0, 95.625, 170.0])
    ora = np.array([12.0, 95.0, 180.0])
    np.testing.assert_array_equal(localization_error(est, ora), [2.0, 0.625, 10.0])
    assert float(np.mean(localization_error(est, ora))) == pytest.approx((2 + 0.625 + 10) / 3)
    with pytest.raises(ConfigError):
        localization_error(-1.0, 5.0)


def test_report_serialisation(tmp_path):
    rep = MetricReport(c50_db=[80.0, 3.5], early_reference_snr_db=4.0,
                       realized_snr_db={"ambient": 20.0, "white": math.inf})
    doc = rep.to_dict()
    assert doc["realized_snr_db"]["white"] == "inf"
    rep.to_json(tmp_path / "r.json")
    write_reports_csv(tmp_path / "r.csv", [rep, rep], ["a", "b"])
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert len(lines) == 3 and lines[1].startswith("a,41.75")
