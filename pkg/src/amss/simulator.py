"""Render augmented sessions and compare them against the ambient recording."""
from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy import signal

from .acoustics import LoudnessBackend, MetricsReport, Waveform, leq, metrics_report, write_wav
from .engine import SessionLog
from .fileio import write_text
from .maskers import MaskerBank, SpeakerLayout

__all__ = [
    "MixError", "mix_session", "SessionReport", "session_report", "write_session_outputs", "synthetic_ambient",
]


class MixError(RuntimeError):
    pass


def _resample(x: np.ndarray, src: float, dst: float) -> np.ndarray:
    if src == dst:
        return x
    ratio = Fraction(dst / src).limit_denominator(1000)
    if abs(float(ratio) - dst / src) > 1e-9 * dst / src:
        raise MixError(f"cannot resample {src:g} Hz -> {dst:g} Hz with a rational ratio")
    return signal.resample_poly(x, ratio.numerator, ratio.denominator)


def _is_off(entry) -> bool:
    return not entry.ok or entry.masker_id is None or not entry.digital_gain or entry.achieved_spl is None


def mix_session(
    ambient: Waveform,
    log: SessionLog,
    bank: MaskerBank,
    layout: SpeakerLayout | None = None,
    crossfade: float = 0.5,
) -> Waveform:
    """Add each interval's masker to ``ambient`` at its logged listener level.

    The masker is looped from its first sample at the interval start and
    scaled so its LAeq (under the ambient calibration) equals the entry's
    ``achieved_spl``. When the same masker is chosen for consecutive
    intervals it keeps playing without restarting. Adjacent intervals
    overlap by ``crossfade`` seconds. Different maskers meet with
    equal-power (sin/cos) fades. A repeated masker is coherent with itself,
    so it gets amplitude-complementary (sin²/cos²) fades, which amount to a
    plain gain ramp. Session edges are hard. Failed entries and zero-gain
    entries add nothing. The rendering is monophonic and is added to every
    ambient channel.

    ``layout`` is accepted for API symmetry; listener levels in the log
    already include speaker geometry.
    """
    if crossfade < 0:
        raise ValueError("crossfade must be non-negative")
    fs = ambient.sample_rate
    interval = log.policy.interval
    coverage = len(log.entries) * interval
    if coverage > ambient.duration + 1.0 / fs:
        raise MixError(f"log covers {coverage:g} s but ambient is {ambient.duration:g} s")
    n = ambient.n_samples
    add = np.zeros(n)
    half = crossfade / 2.0
    scaled: dict[tuple[str, float], np.ndarray] = {}
    cache: dict[str, tuple[np.ndarray, float]] = {}
    last = len(log.entries) - 1
    playing = [None if _is_off(e) else e.masker_id for e in log.entries]
    phase = 0.0
    for k, entry in enumerate(log.entries):
        if playing[k] is None:
            continue
        if entry.masker_id not in bank:
            raise MixError(f"masker {entry.masker_id!r} not in bank")
        if entry.masker_id not in cache:
            try:
                track = bank.track(entry.masker_id)
            except FileNotFoundError as exc:
                raise MixError(str(exc)) from None
            x = _resample(track.audio.samples, track.audio.sample_rate, fs)
            cache[entry.masker_id] = (x, leq(Waveform(x, fs, ambient.calibration), "A"))
        x, own_level = cache[entry.masker_id]
        key = (entry.masker_id, entry.achieved_spl)
        if key not in scaled:
            scaled[key] = x * 10.0 ** ((entry.achieved_spl - own_level) / 20.0)
        src = scaled[key]

        start = k * interval
        stop = (k + 1) * interval
        same_before = k > 0 and playing[k - 1] == playing[k]
        same_after = k < last and playing[k + 1] == playing[k]
        if not same_before:
            phase = start
        t0 = start - half if k > 0 else start
        t1 = stop + half if k < last else stop
        i0 = max(0, int(round(t0 * fs)))
        i1 = min(n, int(round(t1 * fs)))
        idx = np.arange(i0, i1)
        seg = src[(idx - int(round(phase * fs))) % src.size]
        t = idx / fs
        env = np.ones(idx.size)
        if crossfade > 0:
            if k > 0:
                rise = (t - (start - half)) / crossfade
                m = rise < 1.0
                env[m] = np.sin(0.5 * np.pi * np.clip(rise[m], 0.0, 1.0)) ** (2 if same_before else 1)
            if k < last:
                fall = (t - (stop - half)) / crossfade
                m = fall > 0.0
                env[m] *= np.cos(0.5 * np.pi * np.clip(fall[m], 0.0, 1.0)) ** (2 if same_after else 1)
        add[i0:i1] += env * seg

    out = ambient.samples.copy()
    touched = add != 0.0
    if out.ndim == 1:
        out[touched] += add[touched]
    else:
        out[touched] += add[touched, None]
    return ambient.replace(out)


@dataclass
class SessionReport:
    ambient: MetricsReport
    augmented: MetricsReport

    @property
    def deltas(self) -> dict:
        return {
            "delta_laeq": self.augmented.laeq - self.ambient.laeq,
            "delta_lceq": self.augmented.lceq - self.ambient.lceq,
            "delta_n95": self.augmented.n95 - self.ambient.n95,
        }

    def to_dict(self) -> dict:
        return {"amb": self.ambient.to_dict(), "amss": self.augmented.to_dict(), **self.deltas}


def session_report(
    ambient: Waveform,
    augmented: Waveform,
    step: float = 0.1,
    backend: LoudnessBackend | None = None,
) -> SessionReport:
    return SessionReport(metrics_report(ambient, step, backend), metrics_report(augmented, step, backend))


def write_session_outputs(
    out_dir,
    session_id: str,
    ambient: Waveform,
    augmented: Waveform,
    report: SessionReport,
    log: SessionLog | None = None,
    plots: bool = True,
) -> dict[str, Path]:
    """Write ``<session_id>.{amb,amss}.{wav,json,csv}`` plus the combined
    report, the session log and (optionally) the LAF figure."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {}
    for tag, wave, rep in (("amb", ambient, report.ambient), ("amss", augmented, report.augmented)):
        paths[f"{tag}.wav"] = out_dir / f"{session_id}.{tag}.wav"
        write_wav(paths[f"{tag}.wav"], wave)
        paths[f"{tag}.json"] = write_text(out_dir / f"{session_id}.{tag}.json", rep.to_json())
        paths[f"{tag}.csv"] = out_dir / f"{session_id}.{tag}.csv"
        rep.laf_series.write_csv(paths[f"{tag}.csv"])
    paths["report"] = write_text(
        out_dir / f"{session_id}.report.json",
        json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n",
    )
    if log is not None:
        paths["log"] = log.write(out_dir / f"{session_id}.jsonl")
    if plots:
        from .plotting import plot_laf_comparison

        paths["figure"] = plot_laf_comparison(
            report.ambient.laf_series, report.augmented.laf_series,
            out_dir / f"{session_id}.laf.png", title=session_id,
        )
    return paths


def synthetic_ambient(
    duration: float,
    sample_rate: float = 32000.0,
    laeq: float = 64.0,
    seed: int = 0,
    calibration: float = 94.0,
    channels: int = 1,
) -> Waveform:
    """Road-traffic-like noise (low-frequency weighted, slowly fluctuating)
    scaled to the requested LAeq."""
    rng = np.random.default_rng(seed)
    n = int(round(duration * sample_rate))
    t = np.arange(n) / sample_rate
    sos = signal.butter(2, 300, fs=sample_rate, output="sos")
    cols = []
    for _ in range(channels):
        noise = rng.standard_normal(n)
        x = signal.sosfilt(sos, noise) * 3.0 + 0.3 * noise
        swell = 1.0 + 0.3 * np.sin(2 * np.pi * t / rng.uniform(8.0, 20.0) + rng.uniform(0, 2 * np.pi))
        cols.append(x * swell)
    x = np.column_stack(cols) if channels > 1 else cols[0]
    w = Waveform(x, sample_rate, calibration)
    current = max(leq(ch, "A") for ch in w.channels())
    return w.replace(x * 10.0 ** ((laeq - current) / 20.0))
