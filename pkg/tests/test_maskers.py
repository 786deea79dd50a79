import logging
import math
import shutil

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from amss.acoustics import Waveform, write_wav
from amss.maskers import (
    CalibrationError,
    CalibrationTable,
    ManifestError,
    SpeakerLayout,
    achieved_listener_spl,
    gain_for_target_spl,
    listener_spl,
    load_manifest,
    read_calibration,
    target_chain,
)

TWO_POINT = CalibrationTable("m", (0.10, 0.1413), (46.0, 49.0))
SYNTH = CalibrationTable.synthetic("m")


def test_gain_examples():
    assert gain_for_target_spl(TWO_POINT, 49.0) == pytest.approx(0.1413, abs=1e-12)
    assert gain_for_target_spl(TWO_POINT, 47.5) == pytest.approx(0.1189, abs=5e-5)


def test_gain_clamps_below_range(caplog):
    with caplog.at_level(logging.WARNING, logger="amss.maskers"):
        assert gain_for_target_spl(TWO_POINT, 40.0) == pytest.approx(0.10)
    assert "outside calibrated range" in caplog.text


def test_roundtrip_on_synthetic_table():
    for target in np.arange(46.0, 83.0 + 1e-9, 0.5):
        g = gain_for_target_spl(SYNTH, target)
        spl, clamped = SYNTH.spl_of_gain(g)
        assert not clamped
        assert abs(spl - target) < 0.05


@given(st.floats(46.0, 83.0), st.floats(46.0, 83.0))
def test_gain_monotone_in_target(a, b):
    lo, hi = sorted((a, b))
    assert gain_for_target_spl(SYNTH, lo) <= gain_for_target_spl(SYNTH, hi)


@given(st.floats(46.0, 83.0))
def test_roundtrip_property(target):
    g = gain_for_target_spl(SYNTH, target)
    assert abs(SYNTH.spl_of_gain(g)[0] - target) < 0.05


def test_synthetic_table_is_exact_square_law():
    g = gain_for_target_spl(SYNTH, 60.0)
    assert 65.0 + 20 * math.log10(g) == pytest.approx(60.0, abs=1e-9)


def test_spl_of_gain_clamps(caplog):
    with caplog.at_level(logging.WARNING, logger="amss.maskers"):
        spl, clamped = TWO_POINT.spl_of_gain(5.0)
    assert clamped and spl == pytest.approx(49.0)
    assert "clamped" in caplog.text


def test_table_validation():
    with pytest.raises(CalibrationError):
        CalibrationTable("m", (0.1, 0.2, 0.3), (50.0, 49.0, 52.0))
    with pytest.raises(CalibrationError):
        CalibrationTable("m", (0.1,), (50.0,))
    with pytest.raises(CalibrationError):
        CalibrationTable("m", (0.1, 0.1), (50.0, 51.0))
    # unsorted input is accepted and sorted by gain
    t = CalibrationTable("m", (0.2, 0.1), (52.0, 46.0))
    assert t.gains == (0.1, 0.2)


def test_calibration_csv_roundtrip(tmp_path):
    p = tmp_path / "c.csv"
    p.write_text(SYNTH.to_csv())
    t = read_calibration(p, "m")
    assert t == SYNTH


def test_listener_spl_examples():
    assert listener_spl(83.0, SpeakerLayout.at_distances([2.0])) == pytest.approx(76.98, abs=0.01)
    assert listener_spl(60.0, SpeakerLayout.at_distances([1.0] * 4)) == pytest.approx(66.02, abs=0.01)
    assert listener_spl(71.3, SpeakerLayout.at_distances([1.0])) == pytest.approx(71.3)


@given(st.integers(1, 8), st.floats(0.5, 10.0), st.floats(30.0, 100.0))
def test_listener_spl_equidistant_adds_10log_n(n, d, spl):
    one = listener_spl(spl, SpeakerLayout.at_distances([d]))
    many = listener_spl(spl, SpeakerLayout.at_distances([d] * n))
    assert many == pytest.approx(one + 10 * math.log10(n), abs=1e-9)


def test_target_chain_single_speaker_at_1m():
    layout = SpeakerLayout.at_distances([1.0])
    assert target_chain(SYNTH, layout, 60.0) == pytest.approx(gain_for_target_spl(SYNTH, 60.0))


def test_target_chain_four_speakers_at_2m():
    layout = SpeakerLayout.at_distances([2.0] * 4)
    g = target_chain(SYNTH, layout, 66.02)
    per_speaker = 66.02 - 10 * math.log10(4) + 20 * math.log10(2)
    assert g == pytest.approx(gain_for_target_spl(SYNTH, per_speaker))
    assert SYNTH.spl_of_gain(g)[0] == pytest.approx(66.02, abs=0.01)


def test_target_chain_clamps(caplog):
    with caplog.at_level(logging.WARNING, logger="amss.maskers"):
        g = target_chain(SYNTH, SpeakerLayout.at_distances([1.0]), 20.0)
    assert g == pytest.approx(SYNTH.gains[0])
    assert caplog.records


def test_default_layout_geometry():
    d = SpeakerLayout().distances()
    assert d.shape == (4,)
    assert np.allclose(d, math.sqrt(2 * 1.1**2 + 1.3**2))
    assert SpeakerLayout.from_dict(SpeakerLayout().to_dict()) == SpeakerLayout()


def test_achieved_listener_spl_inverts_target_chain():
    layout = SpeakerLayout()
    g = target_chain(SYNTH, layout, 58.0)
    spl, clamped = achieved_listener_spl(SYNTH, layout, g)
    assert not clamped and spl == pytest.approx(58.0, abs=0.05)


# -- manifest ---------------------------------------------------------------

def _manifest(tmp_path, rows):
    p = tmp_path / "manifest.csv"
    p.write_text("id,class,audio_path,calib_path\n" + "\n".join(rows) + "\n")
    return p


def _copy_bank(bank_dir, tmp_path):
    shutil.copytree(bank_dir, tmp_path, dirs_exist_ok=True)


def test_manifest_three_rows(bank_dir, tmp_path):
    _copy_bank(bank_dir, tmp_path)
    p = _manifest(tmp_path, [
        f"{i},{c},audio/{i}.wav,calib/{i}.csv"
        for i, c in (("bird_00069", "bird"), ("water_00001", "water"), ("traffic_00001", "traffic"))
    ])
    bank = load_manifest(p)
    assert len(bank) == 3
    assert [e.id for e in bank.eligible()] == ["bird_00069", "traffic_00001", "water_00001"]
    assert [e.id for e in bank.eligible(classes=["bird", "water"])] == ["bird_00069", "water_00001"]
    assert bank["bird_00069"].natural and not bank["traffic_00001"].natural


def test_manifest_duplicate_id(bank_dir, tmp_path):
    _copy_bank(bank_dir, tmp_path)
    row = "bird_00069,bird,audio/bird_00069.wav,calib/bird_00069.csv"
    with pytest.raises(ManifestError, match="duplicate"):
        load_manifest(_manifest(tmp_path, [row, row]))


def test_manifest_non_monotone_table(bank_dir, tmp_path):
    _copy_bank(bank_dir, tmp_path)
    (tmp_path / "calib" / "bad.csv").write_text("digital_gain,spl_dba_1m\n0.1,50\n0.2,48\n0.3,55\n")
    with pytest.raises(ManifestError, match="strictly increasing"):
        load_manifest(_manifest(tmp_path, ["bird_00069,bird,audio/bird_00069.wav,calib/bad.csv"]))


def test_manifest_missing_calibration_excludes(bank_dir, tmp_path, caplog):
    _copy_bank(bank_dir, tmp_path)
    p = _manifest(tmp_path, [
        "bird_00069,bird,audio/bird_00069.wav,calib/bird_00069.csv",
        "water_00001,water,audio/water_00001.wav,",
    ])
    with caplog.at_level(logging.WARNING, logger="amss.maskers"):
        bank = load_manifest(p)
    assert len(bank) == 2
    assert [e.id for e in bank.eligible()] == ["bird_00069"]
    assert "water_00001" in caplog.text


def test_manifest_rejects_stereo_and_short(tmp_path):
    (tmp_path / "a").mkdir()
    write_wav(tmp_path / "a" / "st.wav", Waveform(np.zeros((16000 * 30, 2)), 16000.0))
    write_wav(tmp_path / "a" / "sh.wav", Waveform(np.zeros(16000 * 10), 16000.0))
    with pytest.raises(ManifestError, match="mono"):
        load_manifest(_manifest(tmp_path, ["x,bird,a/st.wav,"]))
    with pytest.raises(ManifestError, match="duration"):
        load_manifest(_manifest(tmp_path, ["x,bird,a/sh.wav,"]))


def test_manifest_unknown_class(bank_dir, tmp_path):
    _copy_bank(bank_dir, tmp_path)
    with pytest.raises(ManifestError, match="class"):
        load_manifest(_manifest(tmp_path, ["x,dragon,audio/bird_00069.wav,"]))


def test_synthetic_bank_loads(bank):
    assert len(bank) == 6
    track = bank.track("bird_00069")
    assert track.audio.n_channels == 1
    assert track.audio.duration == pytest.approx(30.0)
