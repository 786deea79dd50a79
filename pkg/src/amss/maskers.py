"""Masker inventory and the digital-gain <-> SPL chain.

Each masker carries a calibration table of (digital gain, SPL at 1 m).
Interpolation is done in the (gain**2, energy) plane, which is exact for
a linear playback chain where energy scales with gain squared. Speaker
contributions at the listener follow the inverse-square law and add
incoherently.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.io import wavfile

from .acoustics import Waveform, energetic_combine, read_wav, write_wav
from .fileio import write_text

logger = logging.getLogger(__name__)

__all__ = [
    "MASKER_CLASSES",
    "NATURAL_CLASSES",
    "ManifestError",
    "CalibrationError",
    "CalibrationTable",
    "SpeakerLayout",
    "MaskerTrack",
    "MaskerEntry",
    "MaskerBank",
    "load_manifest",
    "read_calibration",
    "gain_for_target_spl",
    "listener_spl",
    "target_chain",
    "achieved_listener_spl",
    "write_synthetic_bank",
]

MASKER_CLASSES = ("bird", "water", "wind", "traffic", "construction")
NATURAL_CLASSES = frozenset({"bird", "water", "wind"})
NOMINAL_DURATION = 30.0
DURATION_TOLERANCE = 0.5


class ManifestError(ValueError):
    pass


class CalibrationError(ValueError):
    pass


@dataclass(frozen=True)
class CalibrationTable:
    """Measured SPL at 1 m against digital gain for one masker."""

    masker_id: str
    gains: tuple[float, ...]
    spls: tuple[float, ...]

    def __post_init__(self):
        if len(self.gains) != len(self.spls):
            raise CalibrationError(f"{self.masker_id}: gain/SPL columns differ in length")
        if len(self.gains) < 2:
            raise CalibrationError(f"{self.masker_id}: need at least 2 calibration points")
        order = sorted(range(len(self.gains)), key=lambda k: self.gains[k])
        gains = tuple(float(self.gains[k]) for k in order)
        spls = tuple(float(self.spls[k]) for k in order)
        if not all(math.isfinite(g) and g > 0 for g in gains):
            raise CalibrationError(f"{self.masker_id}: gains must be positive and finite")
        if not all(math.isfinite(s) for s in spls):
            raise CalibrationError(f"{self.masker_id}: SPL values must be finite")
        if any(b <= a for a, b in zip(gains, gains[1:])):
            raise CalibrationError(f"{self.masker_id}: duplicate gain values")
        if any(b <= a for a, b in zip(spls, spls[1:])):
            raise CalibrationError(f"{self.masker_id}: SPL is not strictly increasing with gain")
        object.__setattr__(self, "gains", gains)
        object.__setattr__(self, "spls", spls)

    @cached_property
    def _g2(self) -> np.ndarray:
        return np.square(np.array(self.gains))

    @cached_property
    def _energy(self) -> np.ndarray:
        return 10.0 ** (np.array(self.spls) / 10.0)

    @property
    def spl_range(self) -> tuple[float, float]:
        return self.spls[0], self.spls[-1]

    @property
    def gain_range(self) -> tuple[float, float]:
        return self.gains[0], self.gains[-1]

    def spl_of_gain(self, gain: float, warn: bool = True) -> tuple[float, bool]:
        """Forward interpolation; returns ``(spl_at_1m, clamped)``.

        Gains outside the table clamp to the nearest endpoint.
        """
        if not gain > 0:
            raise ValueError(f"gain must be positive, got {gain}")
        lo, hi = self.gain_range
        clamped = not lo <= gain <= hi
        if clamped and warn:
            logger.warning(
                "%s: gain %.4g outside calibrated range [%.4g, %.4g], clamped",
                self.masker_id, gain, lo, hi,
            )
        e = np.interp(gain * gain, self._g2, self._energy)
        return float(10.0 * np.log10(e)), clamped

    @classmethod
    def synthetic(
        cls,
        masker_id: str,
        spl_at_unit_gain: float = 65.0,
        lo: float = 46.0,
        hi: float = 83.0,
        step: float = 3.0,
    ) -> "CalibrationTable":
        """Ideal linear chain, ``SPL = spl_at_unit_gain + 20 log10(g)``, with
        points every ``step`` dB from ``lo``; ``hi`` is always included."""
        spls = np.append(np.arange(lo, hi - step / 2, step), hi)
        gains = 10.0 ** ((spls - spl_at_unit_gain) / 20.0)
        return cls(masker_id, tuple(gains), tuple(spls))

    def to_csv(self) -> str:
        lines = ["digital_gain,spl_dba_1m"]
        lines += [f"{g!r},{s!r}" for g, s in zip(self.gains, self.spls)]
        return "\n".join(lines) + "\n"


def gain_for_target_spl(table: CalibrationTable, target: float) -> float:
    """Digital gain that yields ``target`` dBA at 1 m.

    Linear interpolation of gain**2 against energy. Targets outside the
    table's SPL range clamp to the nearest endpoint with a logged warning.
    """
    lo, hi = table.spl_range
    if not lo <= target <= hi:
        logger.warning(
            "%s: target %.2f dBA outside calibrated range [%.2f, %.2f], clamped",
            table.masker_id, target, lo, hi,
        )
    e = 10.0 ** (target / 10.0)
    return float(math.sqrt(np.interp(e, table._energy, table._g2)))


def read_calibration(path, masker_id: str) -> CalibrationTable:
    gains, spls = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = {"digital_gain", "spl_dba_1m"} - set(reader.fieldnames or ())
        if missing:
            raise CalibrationError(f"{path}: missing columns {sorted(missing)}")
        for lineno, row in enumerate(reader, 2):
            try:
                gains.append(float(row["digital_gain"]))
                spls.append(float(row["spl_dba_1m"]))
            except (TypeError, ValueError) as exc:
                raise CalibrationError(f"{path}:{lineno}: {exc}") from None
    return CalibrationTable(masker_id, tuple(gains), tuple(spls))


@dataclass(frozen=True)
class SpeakerLayout:
    """Loudspeakers around a listener (metres).

    By default ``speaker_count`` speakers sit evenly on the circle through
    the corners of a square of side ``square_side`` at ``mount_height``;
    with 4 speakers these are the corners. Explicit ``positions`` override
    the geometry.
    """

    speaker_count: int = 4
    square_side: float = 2.2
    mount_height: float = 2.5
    listener: tuple[float, float, float] = (0.0, 0.0, 1.2)
    positions: tuple[tuple[float, float, float], ...] | None = None

    def __post_init__(self):
        if self.positions is not None:
            object.__setattr__(self, "positions", tuple(tuple(map(float, p)) for p in self.positions))
            object.__setattr__(self, "speaker_count", len(self.positions))
        if self.speaker_count < 1:
            raise ValueError("need at least one speaker")
        if self.square_side <= 0 or self.mount_height <= 0:
            raise ValueError("layout dimensions must be positive")
        if np.any(self.distances() <= 0):
            raise ValueError("a speaker coincides with the listener")

    @classmethod
    def at_distances(cls, distances: Sequence[float]) -> "SpeakerLayout":
        """Speakers on the x axis at the given listener distances."""
        return cls(positions=tuple((float(d), 0.0, 0.0) for d in distances), listener=(0.0, 0.0, 0.0))

    def speaker_positions(self) -> np.ndarray:
        if self.positions is not None:
            return np.array(self.positions)
        radius = self.square_side / math.sqrt(2.0)
        angles = np.pi / 4 + 2 * np.pi * np.arange(self.speaker_count) / self.speaker_count
        return np.column_stack(
            [radius * np.cos(angles), radius * np.sin(angles), np.full(self.speaker_count, self.mount_height)]
        )

    def distances(self) -> np.ndarray:
        return np.linalg.norm(self.speaker_positions() - np.asarray(self.listener), axis=1)

    def to_dict(self) -> dict:
        return {
            "speaker_count": self.speaker_count,
            "square_side": self.square_side,
            "mount_height": self.mount_height,
            "listener": list(self.listener),
            "positions": None if self.positions is None else [list(p) for p in self.positions],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SpeakerLayout":
        d = dict(d)
        if d.get("listener") is not None:
            d["listener"] = tuple(d["listener"])
        if d.get("positions") is not None:
            d["positions"] = tuple(tuple(p) for p in d["positions"])
        return cls(**d)


def listener_spl(spl_at_1m: float, layout: SpeakerLayout) -> float:
    """Level at the listener when every speaker plays ``spl_at_1m``."""
    return energetic_combine(spl_at_1m - 20.0 * np.log10(layout.distances()))


def target_chain(table: CalibrationTable, layout: SpeakerLayout, desired_listener_spl: float) -> float:
    """Per-speaker digital gain giving ``desired_listener_spl`` at the listener."""
    per_speaker = desired_listener_spl - listener_spl(0.0, layout)
    return gain_for_target_spl(table, per_speaker)


def achieved_listener_spl(
    table: CalibrationTable, layout: SpeakerLayout, gain: float, warn: bool = True
) -> tuple[float, bool]:
    """Listener level produced by playing ``gain`` on every speaker.

    Returns ``(spl, clamped)``; out-of-table gains clamp.
    """
    spl1m, clamped = table.spl_of_gain(gain, warn=warn)
    return listener_spl(spl1m, layout), clamped


@dataclass(frozen=True)
class MaskerTrack:
    id: str
    cls: str
    audio: Waveform


@dataclass
class MaskerEntry:
    id: str
    cls: str
    audio_path: Path
    table: CalibrationTable | None

    @property
    def natural(self) -> bool:
        return self.cls in NATURAL_CLASSES


@dataclass
class MaskerBank:
    """Validated masker inventory. Treat as read-only once loaded."""

    entries: dict[str, MaskerEntry]
    _audio: dict = field(default_factory=dict, repr=False)

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, masker_id) -> bool:
        return masker_id in self.entries

    def __getitem__(self, masker_id) -> MaskerEntry:
        return self.entries[masker_id]

    def eligible(
        self, classes: Iterable[str] | None = None, ids: Iterable[str] | None = None
    ) -> list[MaskerEntry]:
        """Calibrated maskers passing the allowlists, sorted by id."""
        classes = None if classes is None else set(classes)
        ids = None if ids is None else set(ids)
        out = [
            e for e in self.entries.values()
            if e.table is not None
            and (classes is None or e.cls in classes)
            and (ids is None or e.id in ids)
        ]
        return sorted(out, key=lambda e: e.id)

    def track(self, masker_id: str) -> MaskerTrack:
        entry = self.entries[masker_id]
        if masker_id not in self._audio:
            if not entry.audio_path.exists():
                raise FileNotFoundError(f"masker audio missing: {entry.audio_path}")
            w = read_wav(entry.audio_path)
            if w.n_channels != 1:
                raise ManifestError(f"{masker_id}: masker audio must be mono")
            self._audio[masker_id] = w
        return MaskerTrack(entry.id, entry.cls, self._audio[masker_id])


def _wav_shape(path: Path) -> tuple[int, float]:
    rate, data = wavfile.read(path, mmap=True)
    channels = 1 if data.ndim == 1 else data.shape[1]
    return channels, data.shape[0] / rate


def load_manifest(path, duration_tolerance: float = DURATION_TOLERANCE) -> MaskerBank:
    """Load a masker manifest CSV (``id,class,audio_path,calib_path``).

    Relative paths resolve against the manifest's directory. A masker with
    an empty or missing calibration file is kept but excluded from
    selection, with a warning.

    Raises
    ------
    ManifestError
        Malformed rows, duplicate ids, bad audio, or invalid calibration
        tables. The message names the offending row.
    """
    path = Path(path)
    base = path.parent
    entries: dict[str, MaskerEntry] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        required = {"id", "class", "audio_path", "calib_path"}
        missing = required - set(reader.fieldnames or ())
        if missing:
            raise ManifestError(f"{path}: missing columns {sorted(missing)}")
        for lineno, row in enumerate(reader, 2):
            where = f"{path}:{lineno}"
            masker_id = (row["id"] or "").strip()
            cls = (row["class"] or "").strip().lower()
            if not masker_id:
                raise ManifestError(f"{where}: empty id")
            if masker_id in entries:
                raise ManifestError(f"{where}: duplicate id {masker_id!r}")
            if cls not in MASKER_CLASSES:
                raise ManifestError(f"{where}: unknown class {cls!r}")
            audio_path = base / (row["audio_path"] or "").strip()
            if not audio_path.is_file():
                raise ManifestError(f"{where}: audio file not found: {audio_path}")
            try:
                channels, duration = _wav_shape(audio_path)
            except ValueError as exc:
                raise ManifestError(f"{where}: unreadable audio: {exc}") from None
            if channels != 1:
                raise ManifestError(f"{where}: masker audio must be mono, has {channels} channels")
            if abs(duration - NOMINAL_DURATION) > duration_tolerance:
                raise ManifestError(
                    f"{where}: duration {duration:.2f} s not within "
                    f"{NOMINAL_DURATION:g} +- {duration_tolerance:g} s"
                )
            calib = (row["calib_path"] or "").strip()
            table = None
            if calib and (base / calib).is_file():
                try:
                    table = read_calibration(base / calib, masker_id)
                except CalibrationError as exc:
                    raise ManifestError(f"{where}: {exc}") from None
            else:
                logger.warning("%s: no calibration for %s, excluded from selection", where, masker_id)
            entries[masker_id] = MaskerEntry(masker_id, cls, audio_path, table)
    return MaskerBank(entries)


# ---------------------------------------------------------------------------
# Synthetic bank for demos and tests
# ---------------------------------------------------------------------------

def _synth_audio(cls: str, rng: np.random.Generator, fs: float, duration: float) -> np.ndarray:
    from scipy import signal

    n = int(round(fs * duration))
    t = np.arange(n) / fs
    noise = rng.standard_normal(n)
    if cls == "bird":
        x = np.zeros(n)
        for start in rng.uniform(0, duration - 0.3, size=int(duration * 3)):
            length = rng.uniform(0.05, 0.25)
            i0, i1 = int(start * fs), int((start + length) * fs)
            tt = t[i0:i1] - start
            f0 = rng.uniform(2500, 5000)
            sweep = f0 + rng.uniform(-1500, 1500) * tt / length
            x[i0:i1] += np.sin(2 * np.pi * np.cumsum(sweep) / fs) * np.hanning(i1 - i0)
        x += 0.01 * noise
    elif cls == "water":
        x = signal.sosfilt(signal.butter(2, [400, 4000], "bandpass", fs=fs, output="sos"), noise)
    elif cls == "wind":
        x = signal.sosfilt(signal.butter(2, 500, fs=fs, output="sos"), noise)
        x *= 1.0 + 0.5 * np.sin(2 * np.pi * 0.2 * t + rng.uniform(0, 2 * np.pi))
    elif cls == "traffic":
        x = signal.sosfilt(signal.butter(2, 250, fs=fs, output="sos"), noise) + 0.2 * noise
    else:
        x = 0.05 * noise
        for start in rng.uniform(0, duration - 0.1, size=int(duration * 2)):
            i0 = int(start * fs)
            x[i0:i0 + int(0.02 * fs)] += rng.standard_normal(min(int(0.02 * fs), n - i0))
    return 0.25 * x / np.sqrt(np.mean(x * x))


def write_synthetic_bank(
    out_dir,
    maskers: Sequence[tuple[str, str]] | None = None,
    sample_rate: float = 16000.0,
    seed: int = 0,
    spl_at_unit_gain: float = 65.0,
) -> Path:
    """Write synthetic 30 s maskers, ideal calibration tables and a manifest.

    ``maskers`` is a list of ``(id, class)``; the default is one of each
    class plus a second bird. Returns the manifest path.
    """
    out_dir = Path(out_dir)
    (out_dir / "audio").mkdir(parents=True, exist_ok=True)
    (out_dir / "calib").mkdir(parents=True, exist_ok=True)
    if maskers is None:
        maskers = [
            ("bird_00069", "bird"), ("bird_00075", "bird"), ("water_00001", "water"),
            ("wind_00001", "wind"), ("traffic_00001", "traffic"), ("construction_00001", "construction"),
        ]
    rng = np.random.default_rng(seed)
    rows = ["id,class,audio_path,calib_path"]
    for masker_id, cls in maskers:
        audio = _synth_audio(cls, rng, sample_rate, NOMINAL_DURATION)
        write_wav(out_dir / "audio" / f"{masker_id}.wav", Waveform(audio, sample_rate))
        table = CalibrationTable.synthetic(masker_id, spl_at_unit_gain)
        write_text(out_dir / "calib" / f"{masker_id}.csv", table.to_csv())
        rows.append(f"{masker_id},{cls},audio/{masker_id}.wav,calib/{masker_id}.csv")
    manifest = out_dir / "manifest.csv"
    write_text(manifest, "\n".join(rows) + "\n")
    return manifest
