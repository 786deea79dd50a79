"""The masker selection loop.

Every ``interval`` seconds: draw log-normal gains for each eligible
masker, convert each (masker, gain) pair to a soundscape-to-masker ratio
through the calibration chain, predict ISOPL for every candidate, and
keep the top-ranked one. Interval 0 bootstraps from its own window; later
intervals use the preceding window.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .acoustics import Waveform, _ms_to_db, _squared
from .fileio import write_text
from .maskers import MaskerBank, SpeakerLayout, achieved_listener_spl
from .predictor import (
    AmbientFeatures,
    CandidateAugmentation,
    Predictor,
    PredictorError,
    extract_features,
    predict,
    rank_candidates,
)

logger = logging.getLogger(__name__)

__all__ = [
    "SelectionError",
    "SelectionPolicy",
    "SelectionLogEntry",
    "SessionLog",
    "make_rng",
    "sample_gains",
    "run_interval",
    "run_session",
    "selection_frequency_report",
]

LOG_FORMAT_VERSION = 1


class SelectionError(RuntimeError):
    pass


@dataclass(frozen=True)
class SelectionPolicy:
    interval: float = 30.0
    gains_per_masker: int = 5
    log_gain_mean: float = -2.0
    log_gain_std: float = 1.5
    classes: tuple[str, ...] | None = None
    ids: tuple[str, ...] | None = None
    rng_seed: int = 0
    criterion: str = "mean"

    def __post_init__(self):
        if not self.interval > 0:
            raise ValueError("interval must be positive")
        if self.gains_per_masker < 1:
            raise ValueError("gains_per_masker must be at least 1")
        if self.log_gain_std < 0:
            raise ValueError("log_gain_std must be non-negative")
        if self.criterion not in ("mean", "prob"):
            raise ValueError(f"unknown criterion {self.criterion!r}")
        for name in ("classes", "ids"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, tuple(v))

    def to_dict(self) -> dict:
        d = asdict(self)
        for name in ("classes", "ids"):
            if d[name] is not None:
                d[name] = list(d[name])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SelectionPolicy":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown policy fields: {sorted(unknown)}")
        return cls(**d)


def make_rng(seed: int) -> np.random.Generator:
    """PCG64 generator; streams are identical across platforms for a seed."""
    return np.random.Generator(np.random.PCG64(seed))


def sample_gains(policy: SelectionPolicy, rng: np.random.Generator) -> np.ndarray:
    """``gains_per_masker`` draws of ``exp(z)``, ``z ~ N(log_gain_mean, log_gain_std)``."""
    z = rng.normal(policy.log_gain_mean, policy.log_gain_std, size=policy.gains_per_masker)
    return np.exp(z)


@dataclass
class SelectionLogEntry:
    interval_index: int
    window_start: float
    masker_id: str | None
    masker_class: str | None
    digital_gain: float
    smr: float | None
    predicted_mean: float | None
    predicted_std: float | None
    baseline_mean: float | None
    baseline_std: float | None
    backend: str | None
    achieved_spl: float | None
    ambient_laeq: float | None
    n_candidates: int
    status: str = "ok"
    error: str | None = None

    def __post_init__(self):
        if self.interval_index < 0:
            raise ValueError("interval_index must be non-negative")

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def to_dict(self) -> dict:
        return {"type": "entry", **asdict(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "SelectionLogEntry":
        d = {k: v for k, v in d.items() if k != "type"}
        return cls(**d)


@dataclass
class SessionLog:
    session_id: str
    policy: SelectionPolicy
    layout: SpeakerLayout = field(default_factory=SpeakerLayout)
    site: str | None = None
    condition: str | None = None
    entries: list[SelectionLogEntry] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def header(self) -> dict:
        return {
            "type": "session",
            "format_version": LOG_FORMAT_VERSION,
            "session_id": self.session_id,
            "site": self.site,
            "condition": self.condition,
            "policy": self.policy.to_dict(),
            "layout": self.layout.to_dict(),
            "meta": self.meta,
        }

    def backends(self) -> set[str]:
        return {e.backend for e in self.entries if e.backend}

    def to_jsonl(self) -> str:
        lines = [json.dumps(self.header(), sort_keys=False)]
        lines += [json.dumps(e.to_dict(), sort_keys=False) for e in self.entries]
        return "\n".join(lines) + "\n"

    def write(self, path) -> Path:
        return write_text(path, self.to_jsonl())

    @classmethod
    def from_jsonl(cls, text: str) -> "SessionLog":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines:
            raise ValueError("empty session log")
        head = json.loads(lines[0])
        if head.get("type") != "session":
            raise ValueError("first line of a session log must be the session header")
        log = cls(
            session_id=head["session_id"],
            policy=SelectionPolicy.from_dict(head["policy"]),
            layout=SpeakerLayout.from_dict(head["layout"]),
            site=head.get("site"),
            condition=head.get("condition"),
            meta=head.get("meta") or {},
        )
        for ln in lines[1:]:
            log.entries.append(SelectionLogEntry.from_dict(json.loads(ln)))
        return log

    @classmethod
    def read(cls, path) -> "SessionLog":
        return cls.from_jsonl(Path(path).read_text(encoding="utf-8"))


def _candidates(bank, policy, layout, ambient_laeq, rng):
    eligible = bank.eligible(policy.classes, policy.ids)
    if not eligible:
        raise SelectionError("no eligible calibrated maskers in the bank")
    candidates, levels = [], []
    n_clamped = 0
    for entry in eligible:
        for g in sample_gains(policy, rng):
            g = float(g)
            level, clamped = achieved_listener_spl(entry.table, layout, g, warn=False)
            n_clamped += clamped
            candidates.append(CandidateAugmentation(entry.id, entry.cls, g, level - ambient_laeq))
            levels.append(level)
    if n_clamped:
        logger.warning("%d of %d candidate gains outside calibrated range, clamped",
                       n_clamped, len(candidates))
    return candidates, levels


def run_interval(
    bank: MaskerBank,
    policy: SelectionPolicy,
    predictor: Predictor,
    ambient: AmbientFeatures,
    rng: np.random.Generator,
    layout: SpeakerLayout | None = None,
    interval_index: int = 0,
    window_start: float = 0.0,
) -> SelectionLogEntry:
    """Select one masker-gain pair for an interval.

    Raises
    ------
    SelectionError
        No eligible masker. A failing predictor does not raise; the entry
        comes back with ``status="failed"``.
    """
    layout = layout or SpeakerLayout()
    candidates, levels = _candidates(bank, policy, layout, ambient.laeq, rng)
    try:
        result = predict(predictor, ambient, candidates)
    except PredictorError as exc:
        logger.error("interval %d: predictor failed: %s", interval_index, exc)
        return SelectionLogEntry(
            interval_index, window_start, None, None, 0.0, None, None, None, None, None,
            exc.backend, None, ambient.laeq, len(candidates), status="failed", error=str(exc),
        )
    best = rank_candidates(result.candidates, result.baseline, candidates, policy.criterion)[0]
    cand, dist = candidates[best], result.candidates[best]
    return SelectionLogEntry(
        interval_index=interval_index,
        window_start=window_start,
        masker_id=cand.masker_id,
        masker_class=cand.masker_class,
        digital_gain=cand.gain,
        smr=cand.smr,
        predicted_mean=dist.mean,
        predicted_std=dist.std,
        baseline_mean=result.baseline.mean,
        baseline_std=result.baseline.std,
        backend=result.backend,
        achieved_spl=levels[best],
        ambient_laeq=ambient.laeq,
        n_candidates=len(candidates),
    )


def _window_features(ambient: Waveform, interval: float, n_windows: int, n_bands: int):
    """Features per window from the channel with the highest LAeq."""
    step = int(round(interval * ambient.sample_rate))
    sq = [_squared(ch, "A") for ch in ambient.channels()]
    out = []
    for k in range(n_windows):
        sl = slice(k * step, (k + 1) * step)
        levels = [float(_ms_to_db(np.mean(s[sl]), ambient.calibration)) for s in sq]
        ch = int(np.argmax(levels))
        window = ambient.channel(ch).replace(ambient.channel(ch).samples[sl])
        out.append(extract_features(window, n_bands=n_bands, laeq=levels[ch]))
    return out


def run_session(
    bank: MaskerBank,
    policy: SelectionPolicy,
    predictor: Predictor,
    ambient: Waveform,
    duration: float | None = None,
    layout: SpeakerLayout | None = None,
    session_id: str = "session",
    site: str | None = None,
    condition: str | None = None,
    n_bands: int = 64,
    on_interval: Callable[[SelectionLogEntry], None] | None = None,
) -> SessionLog:
    """Run ``floor(duration / interval)`` intervals over ``ambient``.

    A partial trailing window is dropped. ``on_interval`` is called after
    each entry is appended.
    """
    layout = layout or SpeakerLayout()
    duration = ambient.duration if duration is None else float(duration)
    if duration > ambient.duration + 1.0 / ambient.sample_rate:
        raise ValueError(f"duration {duration:g} s exceeds ambient recording ({ambient.duration:g} s)")
    n = int(math.floor(duration / policy.interval + 1e-9))
    rng = make_rng(policy.rng_seed)
    features = _window_features(ambient, policy.interval, n, n_bands)
    log = SessionLog(
        session_id, policy, layout, site, condition,
        meta={"duration": duration, "predictor": getattr(predictor, "name", type(predictor).__name__)},
    )
    for k in range(n):
        # selection for interval k listens to the window before it
        feats = features[max(k - 1, 0)]
        entry = run_interval(bank, policy, predictor, feats, rng, layout, k, k * policy.interval)
        log.entries.append(entry)
        if on_interval is not None:
            on_interval(entry)
    return log


def selection_frequency_report(logs: Iterable[SessionLog]) -> dict[str, float]:
    """Percent of completed intervals in which each masker was chosen,
    most frequent first."""
    counts: dict[str, int] = {}
    for log in logs:
        for e in log.entries:
            if e.ok and e.masker_id is not None:
                counts[e.masker_id] = counts.get(e.masker_id, 0) + 1
    total = sum(counts.values())
    if not total:
        return {}
    ordered = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return {k: 100.0 * v / total for k, v in ordered}
