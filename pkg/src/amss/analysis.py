"""Statistics over survey responses and session logs.

Descriptive contrasts by site and condition, the two-sample
Kolmogorov-Smirnov test (exact with ties, asymptotic for large samples),
Benjamini-Hochberg and Holm p-value adjustment, and Kendall's tau-b.

Mixed-effects ANOVA is deliberately not provided: the contrast table is
the descriptive layer only.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.special import ndtr
from scipy.stats import kstwo

from .perception import (
    PRSS_DIMENSIONS,
    PaqRatings,
    PanasResponses,
    PrssResponses,
    ValidationError,
    compute_isoev,
    compute_isopl,
    normalize_scale,
    panas_scores,
    percent_scale_change,
    prss_dimensions,
)

__all__ = [
    "SITES",
    "CONDITIONS",
    "ATTRIBUTES",
    "SurveyError",
    "SurveyRecord",
    "read_survey",
    "parse_survey",
    "ks_two_sample",
    "bh_adjust",
    "holm_adjust",
    "kendall_tau_b",
    "kendall_matrix",
    "contrast_table",
    "ContrastTable",
    "rows_to_csv",
]

SITES = ("GFP", "RTGP")
CONDITIONS = ("AMB", "AMSS")
SITE_EVALUATION_ITEMS = ("noi", "nat", "hum", "osq", "appr", "pln")
ATTRIBUTES = ("isopl", "isoev", *SITE_EVALUATION_ITEMS, "pa", "na", *PRSS_DIMENSIONS)

KS_EXACT_MAX_NM = 10_000


class SurveyError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Kolmogorov-Smirnov
# ---------------------------------------------------------------------------

def _ks_lattice(x: np.ndarray, y: np.ndarray):
    """Integer statistic ``max |i m - j n|`` over tie-block ends, plus the
    set of pooled positions (i + j) at which the ECDFs are compared."""
    n, m = x.size, y.size
    values = np.unique(np.concatenate([x, y]))
    i = np.searchsorted(np.sort(x), values, side="right")
    j = np.searchsorted(np.sort(y), values, side="right")
    d_num = int(np.max(np.abs(i * m - j * n)))
    return d_num, set((i + j).tolist())


def _ks_exact_p(n: int, m: int, d_num: int, checkpoints: set) -> float:
    """P(D >= d) under random relabelling, by counting lattice paths that
    stay strictly inside the band at every checkpoint."""
    inside = np.zeros((n + 1, m + 1))
    inside[0, 0] = 1.0
    for i in range(n + 1):
        for j in range(m + 1):
            if i == 0 and j == 0:
                continue
            v = (inside[i - 1, j] if i else 0.0) + (inside[i, j - 1] if j else 0.0)
            if (i + j) in checkpoints and abs(i * m - j * n) >= d_num:
                v = 0.0
            inside[i, j] = v
    total = math.comb(n + m, n)
    return min(1.0, max(0.0, 1.0 - inside[n, m] / total))


def ks_two_sample(x, y, exact: bool | None = None, exact_max_nm: int = KS_EXACT_MAX_NM):
    """Two-sided two-sample KS test; returns ``(D, p)``.

    The exact p-value enumerates the permutation distribution (ties
    included) and is used when ``n * m <= exact_max_nm`` unless ``exact``
    forces a choice. Otherwise the one-sample KS distribution at the
    effective size ``round(n m / (n + m))`` is used.
    """
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.size == 0 or y.size == 0:
        raise ValueError("both samples must be non-empty")
    n, m = x.size, y.size
    d_num, checkpoints = _ks_lattice(x, y)
    d = d_num / (n * m)
    if exact is None:
        exact = n * m <= exact_max_nm
    if exact:
        p = _ks_exact_p(n, m, d_num, checkpoints)
    else:
        # one-sample KS law at the effective size nm/(n+m); closer to the
        # exact value than the limiting Kolmogorov law at moderate n
        p = float(np.clip(kstwo.sf(d, max(1, round(n * m / (n + m)))), 0.0, 1.0))
    return d, p


# ---------------------------------------------------------------------------
# Multiple comparisons
# ---------------------------------------------------------------------------

def _check_p(p) -> np.ndarray:
    p = np.asarray(p, dtype=float).ravel()
    if np.any((p < 0) | (p > 1)) or not np.all(np.isfinite(p)):
        raise ValueError("p-values must lie in [0, 1]")
    return p


def bh_adjust(p) -> np.ndarray:
    """Benjamini-Hochberg step-up adjustment, in the input order."""
    p = _check_p(p)
    m = p.size
    if m == 0:
        return p
    order = np.argsort(p, kind="stable")
    scaled = p[order] * m / np.arange(1, m + 1)
    adj = np.minimum.accumulate(scaled[::-1])[::-1]
    out = np.empty(m)
    out[order] = np.minimum(adj, 1.0)
    return out


def holm_adjust(p) -> np.ndarray:
    """Holm step-down adjustment, in the input order."""
    p = _check_p(p)
    m = p.size
    if m == 0:
        return p
    order = np.argsort(p, kind="stable")
    scaled = p[order] * (m - np.arange(m))
    adj = np.maximum.accumulate(np.minimum(scaled, 1.0))
    out = np.empty(m)
    out[order] = adj
    return out


# ---------------------------------------------------------------------------
# Kendall
# ---------------------------------------------------------------------------

def _tie_sums(a: np.ndarray):
    _, counts = np.unique(a, return_counts=True)
    t = counts[counts > 1].astype(float)
    return (t * (t - 1)).sum(), (t * (t - 1) * (t - 2)).sum(), (t * (t - 1) * (2 * t + 5)).sum()


def kendall_tau_b(x, y):
    """Kendall's tau-b with tie correction; returns ``(tau, p)``.

    The two-sided p-value uses the normal approximation with the
    tie-corrected variance of ``S = concordant - discordant``. If either
    variable is constant, both values are NaN.
    """
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.size != y.size:
        raise ValueError("x and y differ in length")
    n = x.size
    if n < 2:
        return math.nan, math.nan
    s = 0.0
    n_x = n_y = 0.0  # pairs untied in x / untied in y
    for k in range(n - 1):
        dx = np.sign(x[k + 1:] - x[k])
        dy = np.sign(y[k + 1:] - y[k])
        s += float(np.sum(dx * dy))
        n_x += float(np.count_nonzero(dx))
        n_y += float(np.count_nonzero(dy))
    if n_x == 0 or n_y == 0:
        return math.nan, math.nan
    tau = s / math.sqrt(n_x * n_y)

    tx1, tx2, tx3 = _tie_sums(x)
    ty1, ty2, ty3 = _tie_sums(y)
    var = (
        (n * (n - 1) * (2 * n + 5) - tx3 - ty3) / 18.0
        + tx1 * ty1 / (2.0 * n * (n - 1))
        + (tx2 * ty2 / (9.0 * n * (n - 1) * (n - 2)) if n > 2 else 0.0)
    )
    p = 1.0 if var <= 0 else float(min(1.0, 2.0 * ndtr(-abs(s) / math.sqrt(var))))
    return max(-1.0, min(1.0, tau)), p


def kendall_matrix(columns: dict[str, Sequence[float]]) -> list[dict]:
    """Pairwise tau-b with Holm-adjusted p over all upper-triangle pairs.

    Rows with a missing value in either column are dropped pairwise.
    """
    rows = []
    for a, b in combinations(columns, 2):
        xa = np.asarray(columns[a], dtype=float)
        xb = np.asarray(columns[b], dtype=float)
        ok = np.isfinite(xa) & np.isfinite(xb)
        tau, p = kendall_tau_b(xa[ok], xb[ok])
        rows.append({"a": a, "b": b, "n": int(ok.sum()), "tau": tau, "p": p})
    valid = [r for r in rows if math.isfinite(r["p"])]
    for r, adj in zip(valid, holm_adjust([r["p"] for r in valid])):
        r["p_holm"] = float(adj)
    for r in rows:
        r.setdefault("p_holm", math.nan)
    return rows


# ---------------------------------------------------------------------------
# Survey ingestion and contrasts
# ---------------------------------------------------------------------------

@dataclass
class SurveyRecord:
    participant_id: str
    site: str
    condition: str
    values: dict[str, float] = field(default_factory=dict)


def _int_cell(row: dict, key: str, where: str) -> int:
    raw = (row.get(key) or "").strip()
    try:
        v = float(raw)
    except ValueError:
        raise SurveyError(f"{where}: column {key!r} is not a number: {raw!r}") from None
    if not v.is_integer():
        raise SurveyError(f"{where}: column {key!r} is not an integer rating: {raw!r}")
    return int(v)


def _record(row: dict, header: Sequence[str], where: str) -> SurveyRecord:
    site = (row.get("site") or "").strip().upper()
    condition = (row.get("condition") or "").strip().upper()
    if site not in SITES:
        raise SurveyError(f"{where}: site {site!r} not in {SITES}")
    if condition not in CONDITIONS:
        raise SurveyError(f"{where}: condition {condition!r} not in {CONDITIONS}")
    values: dict[str, float] = {}
    try:
        paq = PaqRatings(**{k: _int_cell(row, k, where) for k in
                            ("r_pl", "r_ev", "r_ch", "r_vi", "r_un", "r_ca", "r_an", "r_mo")})
        values["isopl"] = compute_isopl(paq)
        values["isoev"] = compute_isoev(paq)
        for item in SITE_EVALUATION_ITEMS:
            if item in header:
                v = _int_cell(row, item, where)
                values[item] = normalize_scale(v, 1, 5)
        pos = [f"panas_p{k}" for k in range(1, 6)]
        neg = [f"panas_n{k}" for k in range(1, 6)]
        if all(c in header for c in pos + neg):
            pa, na = panas_scores(PanasResponses(
                tuple(_int_cell(row, c, where) for c in pos),
                tuple(_int_cell(row, c, where) for c in neg),
            ))
            values["pa"], values["na"] = pa, na
        prss: dict[str, list[int]] = {}
        for col in header:
            if col.startswith("prss_"):
                dim = col[len("prss_"):].rsplit("_", 1)[0]
                prss.setdefault(dim, []).append(_int_cell(row, col, where))
        if prss:
            values.update(prss_dimensions(PrssResponses(prss)))
    except KeyError as exc:
        raise SurveyError(f"{where}: missing column {exc}") from None
    except ValidationError as exc:
        raise SurveyError(f"{where}: {exc}") from None
    return SurveyRecord((row.get("participant_id") or "").strip(), site, condition, values)


def parse_survey(text: str) -> list[SurveyRecord]:
    """Parse survey CSV text. Any invalid cell rejects the file, naming the row."""
    reader = csv.DictReader(io.StringIO(text))
    header = reader.fieldnames or []
    required = {"participant_id", "site", "condition"}
    missing = required - set(header)
    if missing:
        raise SurveyError(f"missing columns {sorted(missing)}")
    return [_record(row, header, f"row {lineno}") for lineno, row in enumerate(reader, 2)]


def read_survey(path) -> list[SurveyRecord]:
    return parse_survey(Path(path).read_text(encoding="utf-8-sig"))


@dataclass
class ContrastTable:
    cells: list[dict]
    contrasts: list[dict]

    def cell(self, site: str, condition: str, attribute: str) -> dict | None:
        for c in self.cells:
            if (c["site"], c["condition"], c["attribute"]) == (site, condition, attribute):
                return c
        return None

    def contrast(self, kind: str, at: str, attribute: str) -> dict | None:
        for c in self.contrasts:
            if (c["kind"], c["at"], c["attribute"]) == (kind, at, attribute):
                return c
        return None

    def long_format(self) -> list[dict]:
        """One row per (site, condition, attribute) for plotting."""
        return [{k: c[k] for k in ("site", "condition", "attribute", "mean", "sd", "n")} for c in self.cells]


def contrast_table(records: Iterable[SurveyRecord], attributes: Sequence[str] = ATTRIBUTES) -> ContrastTable:
    """Normalized means/SDs per (site, condition) and percent-scale changes.

    Condition contrasts go AMB -> AMSS at each site; site contrasts go
    GFP -> RTGP within each condition. Cells with no data are absent and
    contrasts touching them are skipped. SD uses ``ddof=1`` and is 0 for a
    single record.
    """
    records = list(records)
    cells = []
    means: dict[tuple[str, str, str], float] = {}
    for site in SITES:
        for cond in CONDITIONS:
            group = [r for r in records if r.site == site and r.condition == cond]
            for attr in attributes:
                vals = np.array([r.values[attr] for r in group if attr in r.values])
                if vals.size == 0:
                    continue
                sd = float(np.std(vals, ddof=1)) if vals.size > 1 else 0.0
                mean = float(np.mean(vals))
                means[(site, cond, attr)] = mean
                cells.append({"site": site, "condition": cond, "attribute": attr,
                              "n": int(vals.size), "mean": mean, "sd": sd})
    contrasts = []

    def add(kind, at, attr, a, b, key_a, key_b):
        if key_a in means and key_b in means:
            contrasts.append({
                "kind": kind, "at": at, "attribute": attr, "from": a, "to": b,
                "mean_from": means[key_a], "mean_to": means[key_b],
                "percent_change": percent_scale_change(means[key_a], means[key_b]),
            })

    for site in SITES:
        for attr in attributes:
            add("condition", site, attr, "AMB", "AMSS", (site, "AMB", attr), (site, "AMSS", attr))
    for cond in CONDITIONS:
        for attr in attributes:
            add("site", cond, attr, "GFP", "RTGP", ("GFP", cond, attr), ("RTGP", cond, attr))
    return ContrastTable(cells, contrasts)


def rows_to_csv(rows: Sequence[dict], columns: Sequence[str] | None = None) -> str:
    if not rows:
        return ""
    columns = list(columns or rows[0].keys())
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n", extrasaction="ignore")
    writer.writeheader()
    for r in rows:
        writer.writerow({k: (f"{v:.6g}" if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()
