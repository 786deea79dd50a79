import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from amss.acoustics import (
    StevensLoudness,
    Waveform,
    apply_weighting,
    energetic_combine,
    energetic_mean,
    exceedance,
    fast_level_series,
    leq,
    loudness_series,
    metrics_report,
    read_wav,
    weighting_gain_db,
    write_wav,
)
from conftest import sine

FREQS = (31.5, 63, 100, 250, 1000, 4000, 8000)


def iec_oracle(f, curve):
    """Closed-form IEC 61672 magnitude with the textbook rounded constants."""
    f2 = np.asarray(f, dtype=float) ** 2
    if curve == "A":
        r = 12194.0**2 * f2**2 / (
            (f2 + 20.6**2) * np.sqrt((f2 + 107.7**2) * (f2 + 737.9**2)) * (f2 + 12194.0**2)
        )
        return 20 * np.log10(r) + 2.00
    r = 12194.0**2 * f2 / ((f2 + 20.6**2) * (f2 + 12194.0**2))
    return 20 * np.log10(r) + 0.06


@pytest.mark.parametrize("curve", ["A", "C"])
def test_weighting_gain_matches_closed_form(curve):
    f = np.array(FREQS + (20.0, 500.0, 2000.0, 12500.0))
    assert np.allclose(weighting_gain_db(f, curve), iec_oracle(f, curve), atol=0.02)


def test_weighting_gain_examples():
    assert weighting_gain_db(1000.0, "A") == pytest.approx(0.0, abs=0.01)
    assert weighting_gain_db(1000.0, "C") == pytest.approx(0.0, abs=0.01)
    assert weighting_gain_db(100.0, "A") == pytest.approx(-19.1, abs=0.2)
    assert weighting_gain_db(1000.0, "Z") == 0.0


def test_weighting_gain_rejects_unknown_curve():
    with pytest.raises(ValueError):
        weighting_gain_db(1000.0, "B")


@pytest.mark.parametrize("fs", [32000.0, 44100.0, 48000.0])
@pytest.mark.parametrize("curve", ["A", "C"])
def test_filter_tracks_analytic_curve(curve, fs):
    for f in FREQS:
        w = sine(f, duration=2.0, fs=fs)
        measured = leq(w, curve) - leq(w, "Z")
        assert measured == pytest.approx(weighting_gain_db(f, curve), abs=0.5), f


def test_apply_weighting_sines():
    w1k = sine(1000.0)
    out = apply_weighting(w1k, "A")
    assert out.samples.shape == w1k.samples.shape
    rms = lambda x: np.sqrt(np.mean(x[4800:-4800] ** 2))
    assert 20 * np.log10(rms(out.samples) / rms(w1k.samples)) == pytest.approx(0.0, abs=0.5)
    w100 = sine(100.0)
    g = 20 * np.log10(rms(apply_weighting(w100, "A").samples) / rms(w100.samples))
    assert g == pytest.approx(-19.1, abs=0.5)


def test_apply_weighting_removes_dc():
    w = Waveform(np.full(48000 * 2, 0.5), 48000.0)
    out = apply_weighting(w, "A").samples
    assert abs(np.mean(out[48000:])) < 1e-4


def test_weighting_needs_audio_rate():
    with pytest.raises(ValueError):
        leq(sine(100.0, fs=8000.0), "A")


def test_leq_calibration():
    assert leq(sine(1000.0)) == pytest.approx(94.0, abs=0.01)
    assert leq(sine(1000.0, amplitude=0.5)) == pytest.approx(94.0 - 20 * math.log10(2), abs=0.01)
    assert leq(sine(1000.0), "A") == pytest.approx(94.0, abs=0.05)


def test_leq_silence_floor():
    silent = Waveform(np.zeros(48000), 48000.0, 94.0)
    assert leq(silent) == pytest.approx(94.0 - 120.0)
    assert np.all(fast_level_series(silent).levels == pytest.approx(94.0 - 120.0))


def test_leq_of_concatenation_is_energetic_mean():
    rng = np.random.default_rng(1)
    a = rng.standard_normal(48000) * 0.1
    b = rng.standard_normal(48000) * 0.3
    whole = leq(Waveform(np.concatenate([a, b]), 48000.0))
    parts = energetic_mean([leq(Waveform(a, 48000.0)), leq(Waveform(b, 48000.0))])
    assert whole == pytest.approx(parts, abs=0.01)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.01, 100.0))
def test_scaling_shifts_levels(k):
    rng = np.random.default_rng(7)
    w = Waveform(rng.standard_normal(24000) * 0.01, 24000.0)
    shift = 20 * math.log10(k)
    ws = w.replace(w.samples * k)
    assert leq(ws) - leq(w) == pytest.approx(shift, abs=1e-9)
    assert leq(ws, "C") - leq(w, "C") == pytest.approx(shift, abs=1e-9)
    d = fast_level_series(ws).levels - fast_level_series(w).levels
    assert np.allclose(d, shift, atol=1e-6)


def test_laf_settles_on_sine():
    w = sine(1000.0, duration=3.0)
    s = fast_level_series(w, step=0.1)
    target = leq(w, "A")
    assert np.all(np.abs(s.levels[s.times >= 1.0] - target) < 0.1)
    assert np.all(np.diff(s.times) > 0)


def test_laf_step_response_monotone():
    x = np.zeros(48000 * 2)
    x[24000:] = np.sin(2 * np.pi * 1000 * np.arange(72000) / 48000)
    s = fast_level_series(Waveform(x, 48000.0), step=0.01, weighting="Z")
    after = s.levels[s.times >= 0.5]
    assert np.all(np.diff(after) >= -1e-9)
    assert after.max() <= 94.0 + 0.01  # allow squared-sine ripple


def test_exceedance_examples():
    assert exceedance(np.full(10, 3.5), 95) == 3.5
    x = np.arange(1, 101, dtype=float)
    assert exceedance(x, 95) == pytest.approx(5.95, abs=1e-9)
    assert exceedance(x, 50) == pytest.approx(np.median(x))
    assert exceedance(x, 0) == 100.0
    assert exceedance(x, 100) == 1.0


@given(st.lists(st.floats(-50, 150), min_size=1, max_size=50), st.floats(0, 100), st.floats(0, 100))
def test_exceedance_monotone(values, q1, q2):
    lo, hi = sorted((q1, q2))
    assert exceedance(values, lo) >= exceedance(values, hi) - 1e-9


def test_exceedance_rejects_bad_q():
    with pytest.raises(ValueError):
        exceedance([1.0, 2.0], 101)


def test_energetic_examples():
    assert energetic_combine([64.0, 64.0]) == pytest.approx(67.01, abs=0.01)
    assert energetic_combine([72.5]) == pytest.approx(72.5)
    assert energetic_combine([60.0] * 4) == pytest.approx(66.02, abs=0.01)
    assert energetic_mean([60.0, 60.0]) == pytest.approx(60.0)


def test_stevens_mapping():
    assert StevensLoudness.from_levels([40.0, 50.0, 63.0]) == pytest.approx([1.0, 2.0, 2**2.3])
    assert 2**2.3 == pytest.approx(4.925, abs=1e-3)


def test_n95_time_reversal_invariant_for_stationary_input():
    # Fast time weighting lags, so a ramp is not reversal-invariant; a
    # stationary signal is, up to sampling noise.
    rng = np.random.default_rng(5)
    x = rng.standard_normal(48000 * 10) * 0.05
    w = Waveform(x, 48000.0)
    a = exceedance(loudness_series(w), 95)
    b = exceedance(loudness_series(w.replace(x[::-1].copy())), 95)
    assert a == pytest.approx(b, rel=0.02)


def test_metrics_report_fields():
    w = sine(1000.0, duration=2.0)
    r = metrics_report(w)
    assert r.laeq == pytest.approx(94.0, abs=0.05)
    assert r.lceq == pytest.approx(94.0, abs=0.05)
    assert r.n95 >= 0
    assert r.laeq <= r.laf_series.levels.max() + 0.5
    d = r.to_dict()
    assert {"laeq", "lceq", "n95", "duration", "loudness_backend"} <= set(d)


def test_metrics_report_picks_louder_channel():
    a = sine(1000.0, amplitude=0.1).samples
    b = sine(1000.0, amplitude=0.5).samples
    r = metrics_report(Waveform(np.column_stack([a, b]), 48000.0))
    assert r.channel == 1
    assert r.laeq == pytest.approx(94.0 - 20 * math.log10(2), abs=0.05)


def test_level_series_csv():
    s = fast_level_series(sine(1000.0, duration=0.5), step=0.1)
    lines = s.to_csv().splitlines()
    assert lines[0] == "t_seconds,level_db"
    assert len(lines) == 1 + s.times.size


@pytest.mark.parametrize("dtype", ["float32", "int16"])
def test_wav_roundtrip(tmp_path, dtype):
    w = sine(440.0, duration=0.25, amplitude=0.5)
    path = tmp_path / "x.wav"
    write_wav(path, w, dtype=dtype)
    back = read_wav(path)
    assert back.sample_rate == w.sample_rate
    assert np.allclose(back.samples, w.samples, atol=1e-4)


def test_waveform_validation():
    with pytest.raises(ValueError):
        Waveform(np.zeros(10), 0.0)
    with pytest.raises(ValueError):
        Waveform(np.array([0.0, np.nan]), 48000.0)
