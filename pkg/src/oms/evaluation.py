"""Offline keyword-set quality metrics and normalized comparison tables."""

from __future__ import annotations

import csv
import io
import json
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

from .clustering import EmbeddingProvider, tokenize
from .domain import Orientation

# column -> orientation; None means "already in [0, 1], report raw"
DEFAULT_COLUMNS: dict[str, Orientation | None] = {
    "clicks": Orientation.BENEFIT,
    "cpc": Orientation.COST,
    "search_volume": Orientation.BENEFIT,
    "competitor_score": Orientation.BENEFIT,
    "rouge1": None,
    "embed_sim": None,
}


def _f1(p: float, r: float) -> float:
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


def _rouge_tokens(cand: list[str], ref: list[str]) -> float:
    if not cand or not ref:
        return 0.0
    overlap = sum((Counter(cand) & Counter(ref)).values())
    return _f1(overlap / len(cand), overlap / len(ref))


def rouge1(keywords: Sequence[str], reference: str, mode: str = "bag") -> float:
    """Unigram F1 with clipped counts.

    ``mode="bag"`` scores all keyword tokens as one multiset; ``"mean"``
    averages the per-keyword scores.
    """
    ref = tokenize(reference)
    if not ref:
        raise ValueError("reference text has no tokens")
    if not keywords:
        return 0.0
    if mode == "bag":
        return _rouge_tokens([t for k in keywords for t in tokenize(k)], ref)
    if mode == "mean":
        return float(np.mean([_rouge_tokens(tokenize(k), ref) for k in keywords]))
    raise ValueError(f"unknown mode {mode!r}")


def _unit_rows(m: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(m, axis=1, keepdims=True)
    return np.divide(m, n, out=np.zeros_like(m), where=n > 0)


def embed_similarity(keywords: Sequence[str] | str, reference: str, provider: EmbeddingProvider) -> float:
    """Greedy-matching F1 over token embeddings (no IDF weighting).

    Each candidate token takes its best cosine against the reference tokens
    (precision side) and vice versa (recall side). Equal tokens match with
    similarity exactly 1.
    """
    cand = tokenize(keywords) if isinstance(keywords, str) else [t for k in keywords for t in tokenize(k)]
    ref = tokenize(reference)
    if not cand or not ref:
        return 0.0
    vocab = sorted(set(cand) | set(ref))
    vecs = _unit_rows(np.asarray(provider.embed(vocab), dtype=float))
    row = {t: i for i, t in enumerate(vocab)}
    ci = [row[t] for t in cand]
    ri = [row[t] for t in ref]
    sim = np.clip(vecs[ci] @ vecs[ri].T, -1.0, 1.0)
    sim[np.equal.outer(np.array(cand, dtype=object), np.array(ref, dtype=object))] = 1.0
    p = float(sim.max(axis=1).mean())
    r = float(sim.max(axis=0).mean())
    return _f1(p, r)


@dataclass
class EvalReport:
    methods: list[str]
    columns: list[str]
    raw: dict[str, dict[str, float]]
    normalized: dict[str, dict[str, float]]
    provenance: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {"methods": self.methods, "columns": self.columns, "raw": self.raw,
                "normalized": self.normalized, "provenance": self.provenance}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["method", *self.columns])
        for m in self.methods:
            w.writerow([m, *[f"{self.normalized[m][c]:.6f}" for c in self.columns]])
        return buf.getvalue()


def _minmax(vals: Sequence[float], orient: Orientation | None) -> list[float]:
    if orient is None:
        return [float(v) for v in vals]
    lo, hi = min(vals), max(vals)
    if hi == lo:
        return [0.5] * len(vals)
    if orient is Orientation.COST:
        return [(hi - v) / (hi - lo) for v in vals]
    return [(v - lo) / (hi - lo) for v in vals]


def normalize_table(per_method_raw: Mapping[str, Mapping[str, float]],
                    orientations: Mapping[str, Orientation | None] | None = None) -> EvalReport:
    """Min-max every column across methods (cost columns flipped).

    Columns with orientation None (ROUGE-1, embedding similarity by default)
    pass through unchanged. Unknown columns are treated as benefits.
    """
    if len(per_method_raw) < 2:
        raise ValueError("nothing to normalize: need at least 2 methods")
    orient = {**DEFAULT_COLUMNS, **(orientations or {})}
    methods = sorted(per_method_raw)
    columns = sorted({c for m in methods for c in per_method_raw[m]})
    for m in methods:
        missing = [c for c in columns if c not in per_method_raw[m]]
        if missing:
            raise ValueError(f"method {m!r} lacks columns {missing}")
    norm: dict[str, dict[str, float]] = {m: {} for m in methods}
    for c in columns:
        vals = _minmax([float(per_method_raw[m][c]) for m in methods], orient.get(c, Orientation.BENEFIT))
        for m, v in zip(methods, vals):
            norm[m][c] = v
    raw = {m: {c: float(per_method_raw[m][c]) for c in columns} for m in methods}
    prov = {"protocol": "min-max across methods",
            "orientation": {c: (orient.get(c, Orientation.BENEFIT).value if orient.get(c, Orientation.BENEFIT)
                                else "raw") for c in columns}}
    return EvalReport(methods, columns, raw, norm, prov)


def normalize_products(per_product: Mapping[str, Mapping[str, Mapping[str, float]]],
                       orientations: Mapping[str, Orientation | None] | None = None) -> EvalReport:
    """Normalize each product's table separately, then average across products."""
    if not per_product:
        raise ValueError("no products")
    reports = [normalize_table(per_product[p], orientations) for p in sorted(per_product)]
    methods, columns = reports[0].methods, reports[0].columns
    for r in reports[1:]:
        if r.methods != methods or r.columns != columns:
            raise ValueError("products must share methods and columns")
    norm = {m: {c: float(np.mean([r.normalized[m][c] for r in reports])) for c in columns} for m in methods}
    raw = {m: {c: float(np.mean([r.raw[m][c] for r in reports])) for c in columns} for m in methods}
    prov = dict(reports[0].provenance)
    prov.update(protocol="per-product min-max, then mean across products", products=sorted(per_product))
    return EvalReport(methods, columns, raw, norm, prov)


def score_methods(methods: Mapping[str, Sequence[str]], reference: str, provider: EmbeddingProvider,
                  extra: Mapping[str, Mapping[str, float]] | None = None) -> dict[str, dict[str, float]]:
    """Raw table rows: ROUGE-1 and embedding similarity per method, plus any supplied metric columns."""
    out = {}
    for name, kws in methods.items():
        row = {"rouge1": rouge1(kws, reference), "embed_sim": embed_similarity(kws, reference, provider)}
        row.update({k: float(v) for k, v in (extra or {}).get(name, {}).items()})
        out[name] = row
    return out
