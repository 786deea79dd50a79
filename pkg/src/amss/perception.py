"""Perceptual indices for soundscape ratings.

ISO 12913-3 Pleasantness/Eventfulness from the eight circumplex (PAQ)
ratings, affine scale normalization to [-1, 1], I-PANAS-SF affect
scores, PRSS restorativeness dimensions, and percent-of-scale changes.

All functions are pure. Ratings are validated, never clamped.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Mapping, Sequence

__all__ = [
    "ValidationError",
    "PaqRatings",
    "PanasResponses",
    "PrssResponses",
    "PRSS_DIMENSIONS",
    "compute_isopl",
    "compute_isoev",
    "normalize_scale",
    "panas_scores",
    "prss_dimensions",
    "percent_scale_change",
]

_SQRT2 = math.sqrt(2.0)
_PAQ_DENOM = 8.0 + 8.0 * _SQRT2

PRSS_DIMENSIONS = ("fas", "ba", "com", "ec", "es")
"""Fascination, Being-Away, Compatibility, Extent-Coherence, Extent-Scope."""


class ValidationError(ValueError):
    """A rating or response lies outside its admissible scale."""


def _check_item(name: str, value, lo: int, hi: int) -> None:
    if isinstance(value, bool) or not float(value).is_integer():
        raise ValidationError(f"{name}={value!r} is not an integer rating")
    if not lo <= value <= hi:
        raise ValidationError(f"{name}={value!r} outside [{lo}, {hi}]")


@dataclass(frozen=True)
class PaqRatings:
    """Eight 1-5 ratings: pleasant, eventful, chaotic, vibrant,
    uneventful, calm, annoying, monotonous."""

    r_pl: int
    r_ev: int
    r_ch: int
    r_vi: int
    r_un: int
    r_ca: int
    r_an: int
    r_mo: int

    def __post_init__(self):
        for f in fields(self):
            _check_item(f.name, getattr(self, f.name), 1, 5)

    @classmethod
    def from_mapping(cls, row: Mapping) -> "PaqRatings":
        return cls(**{f.name: int(float(row[f.name])) for f in fields(cls)})


def compute_isopl(r: PaqRatings) -> float:
    """ISO Pleasantness in [-1, 1]."""
    num = 2.0 * (r.r_pl - r.r_an) + _SQRT2 * (r.r_ca - r.r_ch + r.r_vi - r.r_mo)
    return num / _PAQ_DENOM


def compute_isoev(r: PaqRatings) -> float:
    """ISO Eventfulness in [-1, 1]."""
    num = 2.0 * (r.r_ev - r.r_un) + _SQRT2 * (r.r_ch - r.r_ca + r.r_vi - r.r_mo)
    return num / _PAQ_DENOM


def normalize_scale(x: float, lo: float, hi: float) -> float:
    """Map ``x`` in ``[lo, hi]`` affinely onto ``[-1, 1]``.

    Raises
    ------
    ValueError
        If ``lo >= hi``.
    ValidationError
        If ``x`` is outside ``[lo, hi]``.
    """
    if not lo < hi:
        raise ValueError(f"empty scale: lo={lo} must be below hi={hi}")
    if not lo <= x <= hi:
        raise ValidationError(f"{x} outside scale [{lo}, {hi}]")
    return 2.0 * (x - lo) / (hi - lo) - 1.0


@dataclass(frozen=True)
class PanasResponses:
    positive_items: tuple[int, ...]
    negative_items: tuple[int, ...]

    def __post_init__(self):
        for label, items in (("positive", self.positive_items), ("negative", self.negative_items)):
            if len(items) != 5:
                raise ValidationError(f"expected 5 {label} items, got {len(items)}")
            for k, v in enumerate(items, 1):
                _check_item(f"panas_{label[0]}{k}", v, 1, 5)


def panas_scores(p: PanasResponses, aggregate: str = "sum") -> tuple[float, float]:
    """Positive and negative affect, each normalized to [-1, 1].

    ``aggregate`` may be ``"sum"`` (scale 5..25) or ``"mean"`` (scale 1..5);
    both give the same normalized value.
    """
    if aggregate == "sum":
        pa, na = sum(p.positive_items), sum(p.negative_items)
        lo, hi = 5, 25
    elif aggregate == "mean":
        pa, na = sum(p.positive_items) / 5, sum(p.negative_items) / 5
        lo, hi = 1, 5
    else:
        raise ValueError(f"unknown aggregate {aggregate!r}")
    return normalize_scale(pa, lo, hi), normalize_scale(na, lo, hi)


@dataclass(frozen=True)
class PrssResponses:
    """PRSS items (1-7) grouped by dimension key from ``PRSS_DIMENSIONS``."""

    items: Mapping[str, Sequence[int]]

    def __post_init__(self):
        for dim, values in self.items.items():
            if dim not in PRSS_DIMENSIONS:
                raise ValidationError(f"unknown PRSS dimension {dim!r}")
            if len(values) == 0:
                raise ValidationError(f"PRSS dimension {dim!r} has no items")
            for k, v in enumerate(values, 1):
                _check_item(f"prss_{dim}_{k}", v, 1, 7)


def prss_dimensions(p: PrssResponses) -> dict[str, float]:
    """Per-dimension mean of member items, normalized from [1, 7]."""
    return {
        dim: normalize_scale(sum(values) / len(values), 1, 7)
        for dim, values in p.items.items()
    }


def percent_scale_change(mu_before: float, mu_after: float) -> float:
    """Change between two normalized means as a percentage of the
    full [-1, 1] scale width."""
    return 100.0 * (mu_after - mu_before) / 2.0
