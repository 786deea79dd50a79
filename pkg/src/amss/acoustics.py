"""Objective acoustic and psychoacoustic metrics over calibrated waveforms.

Levels follow the sound-level-meter convention: a full-scale sine reads
exactly the waveform's ``calibration`` level (dB SPL). Frequency
weightings are the IEC 61672 A and C curves, realized as bilinear-transform
IIR filters run at an internally oversampled rate so that the response
tracks the analytic curve up to 8 kHz even at 32 kHz input.

Loudness uses a Stevens-style sone mapping of the fast A-weighted level
(``N = 2 ** ((L - 40) / 10)``). This is an approximation, not ISO 532-1;
swap in another backend through :class:`LoudnessBackend`.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Protocol, Sequence

import numpy as np
from scipy import signal
from scipy.io import wavfile

from .fileio import atomic_path, write_text

__all__ = [
    "Waveform",
    "LevelSeries",
    "MetricsReport",
    "LoudnessBackend",
    "StevensLoudness",
    "SILENCE_FLOOR_DB",
    "read_wav",
    "write_wav",
    "weighting_gain_db",
    "apply_weighting",
    "leq",
    "fast_level_series",
    "exceedance",
    "loudness_series",
    "energetic_combine",
    "energetic_mean",
    "metrics_report",
]

# IEC 61672-1 pole frequencies (Hz)
F1, F2, F3, F4 = 20.598997, 107.65265, 737.86223, 12194.217

SILENCE_FLOOR_DB = -120.0
"""Levels are clamped to ``calibration + SILENCE_FLOOR_DB``."""

FAST_TIME_CONSTANT = 0.125
MIN_WEIGHTING_RATE = 20000.0
_OVERSAMPLED_RATE = 96000.0
_FULL_SCALE_SINE_MS = 0.5


@dataclass(frozen=True)
class Waveform:
    """Sampled pressure signal, full scale +-1.0.

    ``samples`` is ``(n,)`` for mono or ``(n, channels)``.
    ``calibration`` is the dB SPL of a full-scale sine.
    """

    samples: np.ndarray
    sample_rate: float
    calibration: float = 94.0

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=float)
        if x.ndim not in (1, 2):
            raise ValueError(f"samples must be 1-D or 2-D, got shape {x.shape}")
        if not self.sample_rate > 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(x)):
            raise ValueError("samples contain non-finite values")
        if not math.isfinite(self.calibration):
            raise ValueError("calibration must be finite")
        object.__setattr__(self, "samples", x)

    @property
    def n_channels(self) -> int:
        return 1 if self.samples.ndim == 1 else self.samples.shape[1]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return self.n_samples / self.sample_rate

    def channel(self, k: int) -> "Waveform":
        if self.samples.ndim == 1:
            if k != 0:
                raise IndexError(k)
            return self
        return self.replace(self.samples[:, k])

    def channels(self) -> list["Waveform"]:
        return [self.channel(k) for k in range(self.n_channels)]

    def mono(self) -> "Waveform":
        """Mean over channels."""
        if self.samples.ndim == 1:
            return self
        return self.replace(self.samples.mean(axis=1))

    def segment(self, start: float, stop: float) -> "Waveform":
        i0 = int(round(start * self.sample_rate))
        i1 = int(round(stop * self.sample_rate))
        return self.replace(self.samples[i0:i1])

    def replace(self, samples) -> "Waveform":
        return Waveform(samples, self.sample_rate, self.calibration)


def read_wav(path, calibration: float = 94.0) -> Waveform:
    """Read 8/16/24/32-bit integer or 32/64-bit float PCM WAV."""
    rate, data = wavfile.read(path)
    if data.dtype == np.uint8:
        x = (data.astype(float) - 128.0) / 128.0
    elif data.dtype == np.int16:
        x = data / 32768.0
    elif data.dtype == np.int32:
        # 24-bit files are returned left-justified in int32
        x = data / 2147483648.0
    elif np.issubdtype(data.dtype, np.floating):
        x = data.astype(float)
    else:
        raise ValueError(f"unsupported WAV sample type {data.dtype}")
    return Waveform(x, float(rate), calibration)


def write_wav(path, w: Waveform, dtype: str = "float32") -> None:
    """Write ``w`` atomically; ``dtype`` is ``"float32"`` or ``"int16"``."""
    if dtype == "float32":
        data = w.samples.astype(np.float32)
    elif dtype == "int16":
        data = np.clip(np.round(w.samples * 32768.0), -32768, 32767).astype(np.int16)
    else:
        raise ValueError(f"unsupported output dtype {dtype!r}")
    with atomic_path(path) as tmp:
        wavfile.write(tmp, int(round(w.sample_rate)), data)


# ---------------------------------------------------------------------------
# Frequency weighting
# ---------------------------------------------------------------------------

def _check_curve(curve: str) -> str:
    curve = curve.upper()
    if curve not in ("A", "C", "Z"):
        raise ValueError(f"unknown weighting curve {curve!r}")
    return curve


def _analog_magnitude(f, curve):
    f2 = np.square(np.asarray(f, dtype=float))
    if curve == "A":
        return (F4**2 * f2**2) / ((f2 + F1**2) * np.sqrt((f2 + F2**2) * (f2 + F3**2)) * (f2 + F4**2))
    return (F4**2 * f2) / ((f2 + F1**2) * (f2 + F4**2))


def weighting_gain_db(f, curve: str = "A"):
    """Analytic A or C weighting in dB, 0 dB at 1 kHz.

    Returns a float for scalar input and an array otherwise. The gain at
    0 Hz is ``-inf``.
    """
    curve = _check_curve(curve)
    if curve == "Z":
        return np.zeros_like(np.asarray(f, dtype=float))[()]
    with np.errstate(divide="ignore"):
        g = 20.0 * np.log10(_analog_magnitude(f, curve) / _analog_magnitude(1000.0, curve))
    return g[()] if isinstance(g, np.ndarray) else float(g)


def _oversampling_factor(sample_rate: float) -> int:
    return max(1, math.ceil(_OVERSAMPLED_RATE / sample_rate))


@lru_cache(maxsize=32)
def _weighting_sos(curve: str, sample_rate: float) -> np.ndarray:
    w = 2.0 * np.pi
    poles = [-w * F1, -w * F1, -w * F4, -w * F4]
    if curve == "A":
        poles += [-w * F2, -w * F3]
    zeros = [0.0] * (len(poles) - 2)
    # prewarp so the bilinear map is exact at 1 kHz
    fs_warp = np.pi * 1000.0 / np.tan(np.pi * 1000.0 / sample_rate)
    z, p, k = signal.bilinear_zpk(zeros, poles, 1.0, fs_warp)
    sos = signal.zpk2sos(z, p, k)
    _, h = signal.sosfreqz(sos, worN=[1000.0], fs=sample_rate)
    sos[0, :3] /= abs(h[0])
    return sos


def _check_rate(sample_rate: float) -> None:
    if sample_rate < MIN_WEIGHTING_RATE:
        raise ValueError(
            f"sample rate {sample_rate:g} Hz is too low for A/C weighting "
            f"(need >= {MIN_WEIGHTING_RATE:g} Hz)"
        )


@lru_cache(maxsize=8)
def _interpolation_fir(k: int) -> np.ndarray:
    # shorter than resample_poly's default; sine gains stay within 0.15 dB up to 8 kHz
    return signal.firwin(12 * k + 1, 1.0 / k, window=("kaiser", 5.0))


def _filter_oversampled(x: np.ndarray, sample_rate: float, curve: str):
    k = _oversampling_factor(sample_rate)
    y = signal.resample_poly(x, k, 1, axis=0, window=_interpolation_fir(k)) if k > 1 else x
    y = signal.sosfilt(_weighting_sos(curve, sample_rate * k), y, axis=0)
    return y, k


def apply_weighting(w: Waveform, curve: str = "A") -> Waveform:
    """Filter ``w`` with the A, C or Z (flat) weighting.

    Raises
    ------
    ValueError
        If the sample rate cannot represent the weighting passband.
    """
    curve = _check_curve(curve)
    if curve == "Z":
        return w
    _check_rate(w.sample_rate)
    y, k = _filter_oversampled(w.samples, w.sample_rate, curve)
    if k > 1:
        y = signal.resample_poly(y, 1, k, axis=0, window=_interpolation_fir(k))[: w.n_samples]
    return w.replace(y)


def _squared(w: Waveform, curve: str) -> np.ndarray:
    """Weighted squared pressure at the input rate (block-averaged from the
    oversampled filter output, which preserves energy)."""
    curve = _check_curve(curve)
    if w.samples.ndim != 1:
        raise ValueError("level computations need a mono waveform; select a channel")
    if curve == "Z":
        return np.square(w.samples)
    _check_rate(w.sample_rate)
    y, k = _filter_oversampled(w.samples, w.sample_rate, curve)
    y2 = np.square(y, out=y)
    if k > 1:
        y2 = y2[: w.n_samples * k].reshape(w.n_samples, k).sum(axis=1)
        y2 /= k
    return y2


def _ms_to_db(ms, calibration: float):
    floor = calibration + SILENCE_FLOOR_DB
    ms = np.asarray(ms, dtype=float)
    with np.errstate(divide="ignore"):
        db = 10.0 * np.log10(ms / _FULL_SCALE_SINE_MS) + calibration
    return np.maximum(db, floor)


# ---------------------------------------------------------------------------
# Levels
# ---------------------------------------------------------------------------

def leq(w: Waveform, weighting: str = "Z") -> float:
    """Equivalent continuous level of a mono waveform in dB.

    ``weighting`` applies a frequency weighting first, so
    ``leq(w, "A")`` is LAeq. Silence returns the floor level.
    """
    if w.n_samples == 0:
        raise ValueError("empty waveform")
    return float(_ms_to_db(np.mean(_squared(w, weighting)), w.calibration))


@dataclass
class LevelSeries:
    times: np.ndarray
    levels: np.ndarray
    weighting: str = "A"
    time_weighting: str = "Fast"

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.levels = np.asarray(self.levels, dtype=float)
        if self.times.shape != self.levels.shape:
            raise ValueError("times and levels differ in length")
        if self.times.size > 1 and not np.all(np.diff(self.times) > 0):
            raise ValueError("times must be strictly increasing")

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["t_seconds", "level_db"])
        for t, level in zip(self.times, self.levels):
            writer.writerow([f"{t:.6g}", f"{level:.4f}"])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        write_text(path, self.to_csv())


def _exp_average(x2: np.ndarray, sample_rate: float, tau: float) -> np.ndarray:
    a = math.exp(-1.0 / (tau * sample_rate))
    return signal.lfilter([1.0 - a], [1.0, -a], x2)


def fast_level_series(
    w: Waveform,
    step: float = 0.1,
    weighting: str = "A",
    tau: float = FAST_TIME_CONSTANT,
) -> LevelSeries:
    """Exponentially time-weighted level sampled every ``step`` seconds.

    The detector starts from zero energy, so a stationary input rises
    monotonically towards its Leq over the first few time constants.
    """
    return _fast_from_squares(_squared(w, weighting), w, step, _check_curve(weighting), tau)


def _fast_from_squares(x2, w: Waveform, step: float, weighting: str, tau: float = FAST_TIME_CONSTANT):
    if step <= 0:
        raise ValueError("step must be positive")
    ms = _exp_average(x2, w.sample_rate, tau)
    n_points = int(math.floor(w.n_samples / (step * w.sample_rate) + 1e-9))
    times = step * np.arange(1, n_points + 1)
    idx = np.clip(np.round(times * w.sample_rate).astype(int) - 1, 0, w.n_samples - 1)
    return LevelSeries(times, _ms_to_db(ms[idx], w.calibration), weighting, "Fast")


def exceedance(series, q: float) -> float:
    """Value exceeded ``q`` percent of the time.

    This is the ``(100 - q)``-th percentile with linear interpolation
    between order statistics, so ``exceedance(x, 95)`` is a low value
    (background convention, as for L95).
    """
    x = np.asarray(series, dtype=float)
    if x.size == 0:
        raise ValueError("empty series")
    if not 0.0 <= q <= 100.0:
        raise ValueError(f"q={q} outside [0, 100]")
    return float(np.percentile(x, 100.0 - q, method="linear"))


def energetic_combine(levels: Sequence[float]) -> float:
    """Incoherent sum of levels: ``10 log10(sum 10^(L/10))``."""
    levels = np.asarray(levels, dtype=float)
    if levels.size == 0:
        raise ValueError("no levels to combine")
    m = levels.max()
    return float(m + 10.0 * np.log10(np.sum(10.0 ** ((levels - m) / 10.0))))


def energetic_mean(levels: Sequence[float]) -> float:
    """Energy-domain average: ``10 log10(mean 10^(L/10))``."""
    levels = np.asarray(levels, dtype=float)
    return energetic_combine(levels) - 10.0 * math.log10(levels.size)


# ---------------------------------------------------------------------------
# Loudness
# ---------------------------------------------------------------------------

class LoudnessBackend(Protocol):
    name: str

    def __call__(self, w: Waveform) -> np.ndarray:
        """Loudness time series in sone for a mono waveform."""


@dataclass(frozen=True)
class StevensLoudness:
    """Sone approximation from the fast A-weighted level, one value per frame.

    Not ISO 532-1: ignores spectral content beyond A-weighting and all
    masking effects.
    """

    frame: float = 0.1
    name: str = "stevens-laf"

    def __call__(self, w: Waveform) -> np.ndarray:
        return self.from_levels(fast_level_series(w, step=self.frame, weighting="A").levels)

    @staticmethod
    def from_levels(levels) -> np.ndarray:
        return 2.0 ** ((np.asarray(levels) - 40.0) / 10.0)


def loudness_series(w: Waveform, backend: LoudnessBackend | None = None) -> np.ndarray:
    return (backend or StevensLoudness())(w)


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

@dataclass
class MetricsReport:
    laeq: float
    lceq: float
    n95: float
    laf_series: LevelSeries
    duration: float
    channel: int = 0
    loudness_backend: str = "stevens-laf"
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "laeq": self.laeq,
            "lceq": self.lceq,
            "n95": self.n95,
            "duration": self.duration,
            "channel": self.channel,
            "loudness_backend": self.loudness_backend,
            "laf_step": float(self.laf_series.times[0]) if self.laf_series.times.size else None,
            "laf_max": float(self.laf_series.levels.max()) if self.laf_series.levels.size else None,
            **self.extra,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _mono_report(w: Waveform, step: float, backend: LoudnessBackend) -> MetricsReport:
    if w.n_samples == 0:
        raise ValueError("empty waveform")
    sq_a = _squared(w, "A")
    laeq = float(_ms_to_db(np.mean(sq_a), w.calibration))
    series = _fast_from_squares(sq_a, w, step, "A")
    del sq_a
    if isinstance(backend, StevensLoudness) and backend.frame == step:
        loudness = backend.from_levels(series.levels)
    else:
        loudness = backend(w)
    return MetricsReport(
        laeq=laeq,
        lceq=leq(w, "C"),
        n95=exceedance(loudness, 95.0),
        laf_series=series,
        duration=w.duration,
        loudness_backend=getattr(backend, "name", type(backend).__name__),
    )


def metrics_report(
    w: Waveform, step: float = 0.1, backend: LoudnessBackend | None = None
) -> MetricsReport:
    """LAeq, LCeq, N95 and the LAF series.

    Multi-channel input is evaluated per channel and the channel with the
    highest LAeq is reported.
    """
    backend = backend or StevensLoudness(frame=step)
    reports = []
    for k, ch in enumerate(w.channels()):
        r = _mono_report(ch, step, backend)
        r.channel = k
        reports.append(r)
    return max(reports, key=lambda r: r.laeq)
