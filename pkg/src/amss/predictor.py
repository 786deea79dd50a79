"""ISO Pleasantness prediction for candidate augmentations.

Backends return a :class:`Prediction`: one distribution per candidate
plus the unaugmented baseline. Two backends ship here:

* :class:`SurrogatePredictor`, a transparent closed-form model (no
  training). Mean pleasantness rises as the mixed level drops below a
  reference, for natural masker classes, and as the SMR approaches a
  preferred value::

      mean = tanh(a0 + a1 (L_ref - L_mix)/10 + a2 naturalness - a3 |smr - smr_pref|/10)

* :class:`RemotePredictor`, an HTTP client for the wire protocol in
  :mod:`amss.protocol` that falls back to the surrogate on any failure.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Protocol, Sequence

import numpy as np
import requests
from scipy import signal
from scipy.special import ndtr

from . import protocol
from .acoustics import Waveform, energetic_combine, leq
from .maskers import NATURAL_CLASSES

logger = logging.getLogger(__name__)

__all__ = [
    "AmbientFeatures",
    "CandidateAugmentation",
    "IsoplDistribution",
    "Prediction",
    "PredictorError",
    "SurrogateConfig",
    "SurrogatePredictor",
    "RemotePredictor",
    "extract_features",
    "predict",
    "rank_candidates",
    "improvement_scores",
]


@dataclass
class AmbientFeatures:
    """Log band energies (frames x bands, dB) of a 30 s ambient window."""

    band_energies: np.ndarray
    frame_hop: float
    laeq: float

    def __post_init__(self):
        self.band_energies = np.asarray(self.band_energies, dtype=float)
        if self.band_energies.ndim != 2 and self.band_energies.size:
            raise ValueError("band_energies must be a 2-D array")
        if self.band_energies.size == 0:
            self.band_energies = self.band_energies.reshape(0, 0)
        if not np.all(np.isfinite(self.band_energies)):
            raise ValueError("band_energies contain non-finite values")
        if not (self.frame_hop > 0 and math.isfinite(self.laeq)):
            raise ValueError("frame_hop must be positive and laeq finite")


def _mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def _mel_filterbank(n_bands: int, n_fft: int, sample_rate: float, fmin: float, fmax: float) -> np.ndarray:
    freqs = np.fft.rfftfreq(n_fft, 1.0 / sample_rate)
    edges_mel = np.linspace(_mel(fmin), _mel(fmax), n_bands + 2)
    edges = 700.0 * (10.0 ** (edges_mel / 2595.0) - 1.0)
    fb = np.zeros((n_bands, freqs.size))
    for b in range(n_bands):
        lo, mid, hi = edges[b:b + 3]
        rise = (freqs - lo) / (mid - lo)
        fall = (hi - freqs) / (hi - mid)
        fb[b] = np.clip(np.minimum(rise, fall), 0.0, None)
    return fb


def extract_features(
    window: Waveform,
    n_bands: int = 64,
    frame_hop: float = 0.1,
    fmin: float = 20.0,
    fmax: float | None = None,
    laeq: float | None = None,
) -> AmbientFeatures:
    """Log-mel band energies (dB re calibration) and LAeq of a mono window.

    ``laeq`` may be passed in when already known. Energies are rounded to
    1e-4 dB to keep wire payloads compact and deterministic.
    """
    if window.n_channels != 1:
        raise ValueError("feature extraction needs a mono window")
    fs = window.sample_rate
    hop = max(1, int(round(frame_hop * fs)))
    nperseg = 2 * hop
    _, _, spec = signal.stft(
        window.samples, fs=fs, nperseg=nperseg, noverlap=nperseg - hop,
        boundary=None, padded=False,
    )
    fb = _mel_filterbank(n_bands, nperseg, fs, fmin, fmax or fs / 2)
    power = fb @ np.square(np.abs(spec))
    energies = 10.0 * np.log10(power.T + 1e-12) + window.calibration
    if laeq is None:
        laeq = leq(window, "A")
    return AmbientFeatures(np.round(energies, 4), hop / fs, float(laeq))


@dataclass(frozen=True)
class CandidateAugmentation:
    masker_id: str
    masker_class: str
    gain: float
    smr: float

    def __post_init__(self):
        if not self.gain > 0 or not math.isfinite(self.gain):
            raise ValueError(f"gain must be positive and finite, got {self.gain}")
        if not math.isfinite(self.smr):
            raise ValueError("smr must be finite")


@dataclass(frozen=True)
class IsoplDistribution:
    """Normal distribution over ISOPL; the mean is clamped into [-1, 1]."""

    mean: float
    std: float

    def __post_init__(self):
        if not (math.isfinite(self.mean) and math.isfinite(self.std)):
            raise ValueError("distribution parameters must be finite")
        if self.std < 0:
            raise ValueError(f"std must be non-negative, got {self.std}")
        object.__setattr__(self, "mean", min(1.0, max(-1.0, float(self.mean))))
        object.__setattr__(self, "std", float(self.std))


@dataclass
class Prediction:
    baseline: IsoplDistribution
    candidates: list[IsoplDistribution]
    backend: str


class PredictorError(RuntimeError):
    def __init__(self, backend: str, message: str):
        super().__init__(f"[{backend}] {message}")
        self.backend = backend


class Predictor(Protocol):
    name: str

    def predict(self, ambient: AmbientFeatures, candidates: Sequence[CandidateAugmentation]) -> Prediction:
        ...


@dataclass(frozen=True)
class SurrogateConfig:
    a0: float = 0.0
    a1: float = 0.5
    a2: float = 0.4
    a3: float = 0.6
    s0: float = 0.1
    reference_level: float = 65.0
    preferred_smr: float = -3.0
    natural_classes: frozenset = field(default=NATURAL_CLASSES)

    def __post_init__(self):
        object.__setattr__(self, "natural_classes", frozenset(self.natural_classes))

    @classmethod
    def from_dict(cls, d: dict | None) -> "SurrogateConfig":
        d = dict(d or {})
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown surrogate parameters: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["natural_classes"] = sorted(self.natural_classes)
        return d


class SurrogatePredictor:
    """Deterministic closed-form ISOPL model; stateless and thread-safe."""

    name = "surrogate"

    def __init__(self, config: SurrogateConfig | None = None):
        self.config = config or SurrogateConfig()

    def baseline(self, laeq: float) -> IsoplDistribution:
        """Unaugmented ambient: level term only."""
        c = self.config
        return IsoplDistribution(math.tanh(c.a0 + c.a1 * (c.reference_level - laeq) / 10.0), c.s0)

    def distribution(self, laeq: float, candidate: CandidateAugmentation) -> IsoplDistribution:
        c = self.config
        masker_level = laeq + candidate.smr
        l_mix = energetic_combine([laeq, masker_level])
        natural = 1.0 if candidate.masker_class in c.natural_classes else 0.0
        z = (
            c.a0
            + c.a1 * (c.reference_level - l_mix) / 10.0
            + c.a2 * natural
            - c.a3 * abs(candidate.smr - c.preferred_smr) / 10.0
        )
        return IsoplDistribution(math.tanh(z), c.s0)

    def predict(self, ambient: AmbientFeatures, candidates) -> Prediction:
        return Prediction(
            baseline=self.baseline(ambient.laeq),
            candidates=[self.distribution(ambient.laeq, cand) for cand in candidates],
            backend=self.name,
        )


class RemotePredictor:
    """HTTP client for a prediction service with surrogate fallback.

    Any timeout, connection error, non-200 status or malformed/partial
    response discards the whole batch and serves it from ``fallback``;
    the returned :class:`Prediction` is then tagged ``remote-fallback``.
    """

    name = "remote"

    def __init__(self, endpoint: str, timeout: float = 5.0, fallback: SurrogatePredictor | None = None):
        self.endpoint = endpoint.rstrip("/")
        self.timeout = timeout
        self.fallback = fallback or SurrogatePredictor()
        self.fallback_count = 0
        self._session = requests.Session()

    def health(self) -> bool:
        try:
            r = self._session.get(self.endpoint + protocol.HEALTH_PATH, timeout=self.timeout)
        except requests.RequestException:
            return False
        return r.status_code == 200

    def predict(self, ambient: AmbientFeatures, candidates) -> Prediction:
        candidates = list(candidates)
        try:
            r = self._session.post(
                self.endpoint + protocol.PREDICT_PATH,
                data=protocol.encode_request(ambient, candidates),
                headers={"Content-Type": "application/json"},
                timeout=self.timeout,
            )
            if r.status_code != 200:
                raise protocol.ProtocolError(f"HTTP {r.status_code}: {r.text[:200]}")
            baseline, dists = protocol.decode_response(r.content, candidates)
        except (requests.RequestException, protocol.ProtocolError) as exc:
            self.fallback_count += 1
            logger.warning("remote predictor %s failed (%s); using %s fallback",
                           self.endpoint, exc, self.fallback.name)
            result = self.fallback.predict(ambient, candidates)
            result.backend = "remote-fallback"
            return result
        return Prediction(baseline, dists, self.name)

    def close(self):
        self._session.close()


def predict(backend: Predictor, ambient: AmbientFeatures, candidates: Sequence[CandidateAugmentation]) -> Prediction:
    """Run ``backend`` on a non-empty candidate list.

    Raises
    ------
    ValueError
        Empty candidate list.
    PredictorError
        The backend raised or returned the wrong number of distributions.
    """
    if not candidates:
        raise ValueError("no candidates to predict")
    name = getattr(backend, "name", type(backend).__name__)
    try:
        result = backend.predict(ambient, candidates)
    except PredictorError:
        raise
    except Exception as exc:
        raise PredictorError(name, f"{type(exc).__name__}: {exc}") from exc
    if len(result.candidates) != len(candidates):
        raise PredictorError(name, f"returned {len(result.candidates)} distributions for {len(candidates)} candidates")
    return result


def _prob_z(d: IsoplDistribution, baseline: IsoplDistribution) -> float:
    diff = d.mean - baseline.mean
    scale = math.hypot(d.std, baseline.std)
    if scale == 0.0:
        return math.copysign(math.inf, diff) if diff else 0.0
    return diff / scale


def improvement_scores(dists, baseline: IsoplDistribution, criterion: str = "mean") -> list[float]:
    """Predicted improvement over ``baseline`` per candidate.

    ``"mean"``: difference of means. ``"prob"``: P(candidate > baseline)
    for independent normals.
    """
    if criterion == "mean":
        return [d.mean - baseline.mean for d in dists]
    if criterion == "prob":
        return [float(ndtr(_prob_z(d, baseline))) for d in dists]
    raise ValueError(f"unknown ranking criterion {criterion!r}")


def rank_candidates(
    dists: Sequence[IsoplDistribution],
    baseline: IsoplDistribution,
    candidates: Sequence[CandidateAugmentation],
    criterion: str = "mean",
) -> list[int]:
    """Candidate indices, best first.

    Ties break by lower gain, then masker id, then input position, so the
    order is a deterministic total order.
    """
    if len(dists) != len(candidates):
        raise ValueError("dists and candidates differ in length")
    if criterion == "mean":
        # baseline is common to all candidates, so ordering by the raw mean is equivalent
        primary = [-d.mean for d in dists]
    elif criterion == "prob":
        primary = [-_prob_z(d, baseline) for d in dists]
    else:
        raise ValueError(f"unknown ranking criterion {criterion!r}")
    return sorted(
        range(len(dists)),
        key=lambda k: (primary[k], candidates[k].gain, candidates[k].masker_id, k),
    )
