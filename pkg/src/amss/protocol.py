"""JSON wire format shared by the remote predictor client and the service.

``POST /v1/predict``::

    request  {"ambient": {"laeq", "band_energies", "frame_hop"},
              "candidates": [{"masker_id", "class", "gain", "smr"}, ...]}
    response {"baseline": {"mean", "std"},
              "candidates": [{"masker_id", "gain", "mean", "std"}, ...]}

``GET /v1/health`` answers 200 with body ``ok``.

Serialization is canonical: sorted keys, no whitespace, shortest
round-trip float repr. Identical payloads therefore encode to identical
bytes, and floats survive the round trip exactly.
"""
from __future__ import annotations

import json
import math

PREDICT_PATH = "/v1/predict"
HEALTH_PATH = "/v1/health"


class ProtocolError(ValueError):
    pass


def canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False).encode("utf-8")


def _number(d: dict, key: str, where: str) -> float:
    try:
        v = d[key]
    except (KeyError, TypeError):
        raise ProtocolError(f"{where}: missing {key!r}") from None
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ProtocolError(f"{where}: {key!r} must be a finite number")
    return float(v)


def _string(d: dict, key: str, where: str) -> str:
    v = d.get(key) if isinstance(d, dict) else None
    if not isinstance(v, str):
        raise ProtocolError(f"{where}: {key!r} must be a string")
    return v


def encode_request(ambient, candidates) -> bytes:
    return canonical_json({
        "ambient": {
            "laeq": ambient.laeq,
            "band_energies": ambient.band_energies.tolist(),
            "frame_hop": ambient.frame_hop,
        },
        "candidates": [
            {"masker_id": c.masker_id, "class": c.masker_class, "gain": c.gain, "smr": c.smr}
            for c in candidates
        ],
    })


def decode_request(body: bytes):
    """Parse a predict request into ``(AmbientFeatures, [CandidateAugmentation])``."""
    from .predictor import AmbientFeatures, CandidateAugmentation

    try:
        obj = json.loads(body)
    except (ValueError, UnicodeDecodeError) as exc:
        raise ProtocolError(f"malformed JSON: {exc}") from None
    if not isinstance(obj, dict) or not isinstance(obj.get("ambient"), dict):
        raise ProtocolError("request must contain an 'ambient' object")
    amb = obj["ambient"]
    bands = amb.get("band_energies", [])
    if not isinstance(bands, list):
        raise ProtocolError("ambient: 'band_energies' must be a list of rows")
    try:
        ambient = AmbientFeatures(
            band_energies=bands,
            frame_hop=_number(amb, "frame_hop", "ambient"),
            laeq=_number(amb, "laeq", "ambient"),
        )
    except (TypeError, ValueError) as exc:
        raise ProtocolError(f"ambient: {exc}") from None
    cands = obj.get("candidates")
    if not isinstance(cands, list) or not cands:
        raise ProtocolError("'candidates' must be a non-empty list")
    out = []
    for k, c in enumerate(cands):
        where = f"candidates[{k}]"
        try:
            out.append(CandidateAugmentation(
                masker_id=_string(c, "masker_id", where),
                masker_class=_string(c, "class", where),
                gain=_number(c, "gain", where),
                smr=_number(c, "smr", where),
            ))
        except ValueError as exc:
            raise ProtocolError(str(exc)) from None
    return ambient, out


def encode_response(prediction, candidates) -> bytes:
    return canonical_json({
        "baseline": {"mean": prediction.baseline.mean, "std": prediction.baseline.std},
        "candidates": [
            {"masker_id": c.masker_id, "gain": c.gain, "mean": d.mean, "std": d.std}
            for c, d in zip(candidates, prediction.candidates)
        ],
    })


def decode_response(body: bytes, candidates):
    """Parse a predict response; all candidates must be answered in order.

    Returns ``(baseline, [IsoplDistribution])``.
    """
    from .predictor import IsoplDistribution

    try:
        obj = json.loads(body)
    except (ValueError, UnicodeDecodeError) as exc:
        raise ProtocolError(f"malformed JSON: {exc}") from None
    if not isinstance(obj, dict):
        raise ProtocolError("response must be an object")
    base = obj.get("baseline")
    if not isinstance(base, dict):
        raise ProtocolError("response lacks 'baseline'")
    items = obj.get("candidates")
    if not isinstance(items, list):
        raise ProtocolError("response lacks 'candidates'")
    if len(items) != len(candidates):
        raise ProtocolError(f"response has {len(items)} candidates, expected {len(candidates)}")
    dists = []
    for k, (item, cand) in enumerate(zip(items, candidates)):
        where = f"candidates[{k}]"
        if _string(item, "masker_id", where) != cand.masker_id or _number(item, "gain", where) != cand.gain:
            raise ProtocolError(f"{where}: does not match request candidate {cand.masker_id}@{cand.gain}")
        dists.append(_distribution(item, where, IsoplDistribution))
    return _distribution(base, "baseline", IsoplDistribution), dists


def _distribution(d, where, factory):
    try:
        return factory(_number(d, "mean", where), _number(d, "std", where))
    except ValueError as exc:
        raise ProtocolError(f"{where}: {exc}") from None
