import math

import numpy as np
import pytest

from amss.acoustics import Waveform, energetic_combine, leq, write_wav
from amss.engine import SelectionLogEntry, SelectionPolicy, SessionLog
from amss.maskers import CalibrationTable, load_manifest
from amss.simulator import MixError, mix_session, session_report, synthetic_ambient, write_session_outputs

FS = 24000.0


def entry(k, masker="bird_00069", spl=54.0, gain=0.1, ok=True):
    return SelectionLogEntry(
        k, 30.0 * k, masker if ok else None, "bird", gain if ok else 0.0, -10.0,
        0.3, 0.1, 0.0, 0.1, "surrogate", spl if ok else None, 64.0, 30,
        status="ok" if ok else "failed",
    )


def make_log(entries):
    return SessionLog("t", SelectionPolicy(), entries=list(entries))


@pytest.fixture(scope="module")
def amb30():
    return synthetic_ambient(30.0, sample_rate=FS, laeq=64.0, seed=21)


@pytest.fixture(scope="module")
def amb90():
    return synthetic_ambient(90.0, sample_rate=FS, laeq=64.0, seed=22)


def test_all_off_is_identity(bank, amb90):
    log = make_log([entry(0, ok=False), entry(1, gain=0.0), entry(2, ok=False)])
    log.entries[1].digital_gain = 0.0
    out = mix_session(amb90, log, bank)
    assert np.array_equal(out.samples, amb90.samples)


@pytest.mark.parametrize("offset,expected", [(-10.0, 0.414), (0.0, 3.01), (-6.0, 0.97)])
def test_energy_accounting(bank, amb30, offset, expected):
    base = leq(amb30, "A")
    out = mix_session(amb30, make_log([entry(0, spl=base + offset)]), bank)
    assert leq(out, "A") - base == pytest.approx(expected, abs=0.05)
    assert leq(out, "A") == pytest.approx(energetic_combine([base, base + offset]), abs=0.05)


def test_silent_ambient_gives_masker_level(bank):
    silent = Waveform(np.zeros(int(30 * FS)), FS)
    out = mix_session(silent, make_log([entry(0, spl=57.3)]), bank)
    assert leq(out, "A") == pytest.approx(57.3, abs=0.01)


def test_mixing_is_linear(bank):
    silent = Waveform(np.zeros(int(30 * FS)), FS)
    a = mix_session(silent, make_log([entry(0, spl=50.0)]), bank)
    b = mix_session(silent, make_log([entry(0, spl=50.0 + 20 * math.log10(2))]), bank)
    assert np.allclose(b.samples, 2 * a.samples, rtol=1e-9, atol=1e-15)


def test_crossfaded_session_keeps_level(bank, amb90):
    silent = amb90.replace(np.zeros(amb90.n_samples))
    log = make_log([entry(0, spl=55.0), entry(1, "water_00001", spl=55.0), entry(2, spl=55.0)])
    out = mix_session(silent, log, bank)
    assert out.n_samples == amb90.n_samples
    assert leq(out, "A") == pytest.approx(55.0, abs=0.1)


@pytest.fixture(scope="module")
def noise_bank(tmp_path_factory):
    out = tmp_path_factory.mktemp("noise")
    rows = ["id,class,audio_path,calib_path"]
    rng = np.random.default_rng(0)
    for mid in ("noise_a", "noise_b"):
        write_wav(out / f"{mid}.wav", Waveform(0.1 * rng.standard_normal(int(30 * FS)), FS))
        (out / f"{mid}.csv").write_text(CalibrationTable.synthetic(mid).to_csv())
        rows.append(f"{mid},water,{mid}.wav,{mid}.csv")
    (out / "manifest.csv").write_text("\n".join(rows) + "\n")
    return load_manifest(out / "manifest.csv")


def test_equal_power_crossfade_between_maskers(noise_bank, amb90):
    silent = amb90.replace(np.zeros(amb90.n_samples))
    log = make_log([entry(0, "noise_a", 55.0), entry(1, "noise_b", 55.0), entry(2, ok=False)])
    out = mix_session(silent, log, noise_bank).samples
    i, h = int(30 * FS), int(0.25 * FS)
    seam = np.mean(out[i - h: i + h] ** 2)
    steady = np.mean(out[int(5 * FS): int(25 * FS)] ** 2)
    assert 10 * np.log10(seam / steady) == pytest.approx(0.0, abs=0.3)


def test_repeated_masker_plays_through(noise_bank, amb90):
    silent = amb90.replace(np.zeros(amb90.n_samples))
    log = make_log([entry(k, "noise_a", 55.0) for k in range(3)])
    faded = mix_session(silent, log, noise_bank, crossfade=0.5).samples
    hard = mix_session(silent, log, noise_bank, crossfade=0.0).samples
    assert np.allclose(faded, hard, rtol=0, atol=1e-12)


def test_repeated_masker_level_change_is_a_ramp(noise_bank, amb90):
    silent = amb90.replace(np.zeros(amb90.n_samples))
    log = make_log([entry(0, "noise_a", 55.0), entry(1, "noise_a", 61.0), entry(2, ok=False)])
    out = mix_session(silent, log, noise_bank).samples
    ref = mix_session(silent, make_log([entry(0, "noise_a", 55.0)] + [entry(k, ok=False) for k in (1, 2)]),
                      noise_bank, crossfade=0.0).samples
    i, h = int(30 * FS), int(0.25 * FS)
    ratio = out[i - h: i + h] / ref[np.arange(i - h, i + h) % int(30 * FS)]
    assert np.all(np.diff(ratio) >= -1e-9)
    assert ratio[0] == pytest.approx(1.0) and ratio[-1] == pytest.approx(10 ** (6 / 20), rel=1e-3)


def test_crossfade_zero_is_hard_switch(bank, amb90):
    silent = amb90.replace(np.zeros(amb90.n_samples))
    log = make_log([entry(0, spl=55.0), entry(1, ok=False), entry(2, ok=False)])
    out = mix_session(silent, log, bank, crossfade=0.0)
    assert np.all(out.samples[int(30 * FS):] == 0.0)
    faded = mix_session(silent, log, bank, crossfade=0.5)
    tail = faded.samples[int(30 * FS):]
    assert np.any(tail[: int(0.25 * FS) - 1] != 0) and np.all(tail[int(0.25 * FS) + 1:] == 0)


def test_multichannel_ambient(bank):
    amb = synthetic_ambient(30.0, sample_rate=FS, seed=4, channels=2)
    out = mix_session(amb, make_log([entry(0, spl=60.0)]), bank)
    assert out.samples.shape == amb.samples.shape
    added = out.samples - amb.samples
    assert np.allclose(added[:, 0], added[:, 1])


def test_log_longer_than_ambient(bank, amb30):
    with pytest.raises(MixError):
        mix_session(amb30, make_log([entry(0), entry(1)]), bank)


def test_unknown_masker(bank, amb30):
    with pytest.raises(MixError):
        mix_session(amb30, make_log([entry(0, masker="ghost")]), bank)


def test_report_identity(amb30):
    r = session_report(amb30, amb30)
    assert all(abs(v) < 0.01 for v in r.deltas.values())


def test_write_outputs(tmp_path, bank, amb30):
    log = make_log([entry(0, spl=55.0)])
    aug = mix_session(amb30, log, bank)
    rep = session_report(amb30, aug)
    paths = write_session_outputs(tmp_path, "s", amb30, aug, rep, log)
    names = sorted(p.name for p in tmp_path.iterdir())
    assert names == [
        "s.amb.csv", "s.amb.json", "s.amb.wav", "s.amss.csv", "s.amss.json", "s.amss.wav",
        "s.jsonl", "s.laf.png", "s.report.json",
    ]
    assert paths["figure"].stat().st_size > 1000


def test_synthetic_ambient_level():
    w = synthetic_ambient(10.0, sample_rate=FS, laeq=58.0, seed=1)
    assert leq(w, "A") == pytest.approx(58.0, abs=1e-6)
    assert w.duration == pytest.approx(10.0)
