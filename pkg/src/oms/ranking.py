"""Multi-objective keyword scoring: min-max normalization, entropy weights, TOPSIS.

TOPSIS here uses the fixed ideal (all ones) and anti-ideal (all zeros) points
of the normalized space rather than the per-column best/worst of the classic
formulation; after min-max scaling the two coincide for non-constant columns.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .domain import Cluster, MetricSchema, Orientation, WeightMode, canonical

DEGENERATE_VALUE = 0.5


@dataclass
class NormalizedMatrix:
    values: np.ndarray  # I x m, cells in [0, 1]
    keyword_ids: list[str]
    metric_names: list[str]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass
class WeightVector:
    w: np.ndarray
    source: WeightMode
    fallback: bool = False  # uniform weights used because entropy carried no signal

    def __post_init__(self) -> None:
        if abs(float(self.w.sum()) - 1.0) > 1e-9:
            raise ValueError(f"weights sum to {self.w.sum()!r}, expected 1")


def normalize(records, schema: MetricSchema, keyword_ids: Sequence[str] | None = None) -> NormalizedMatrix:
    """Min-max scale each column; cost columns are flipped so 1 is always best.

    ``records`` is either a mapping keyword -> raw vector or an I x m array
    (then ``keyword_ids`` names the rows). A constant column maps to 0.5.
    """
    if isinstance(records, Mapping):
        keyword_ids = list(records)
        raw = np.array([records[k] for k in keyword_ids], dtype=float)
    else:
        raw = np.asarray(records, dtype=float)
        if keyword_ids is None:
            keyword_ids = [str(i) for i in range(len(raw))]
        keyword_ids = list(keyword_ids)
    if raw.size == 0 or len(keyword_ids) == 0:
        raise ValueError("no keywords")
    if raw.ndim != 2 or raw.shape[1] != schema.m or raw.shape[0] != len(keyword_ids):
        raise ValueError(f"raw matrix shape {raw.shape} does not match {len(keyword_ids)} keywords x {schema.m} metrics")
    if not np.all(np.isfinite(raw)) or np.any(raw < 0):
        raise ValueError("raw metric values must be finite and non-negative")

    out = np.empty_like(raw)
    for d, orientation in enumerate(schema.orientations):
        col = raw[:, d]
        lo, hi = col.min(), col.max()
        if hi == lo:
            out[:, d] = DEGENERATE_VALUE
        elif orientation is Orientation.BENEFIT:
            out[:, d] = (col - lo) / (hi - lo)
        else:
            out[:, d] = (hi - col) / (hi - lo)
    return NormalizedMatrix(out, keyword_ids, schema.names)


def entropy_weights(nm: NormalizedMatrix) -> WeightVector:
    """Entropy weight method: low-entropy (more dispersed) metrics weigh more.

    e_d = -(1/ln I) * sum_i s_id ln s_id with s_id = v_id / sum_i v_id, and
    w_d proportional to 1 - e_d. Columns whose contributions are all equal
    get exactly zero weight.
    """
    v = np.asarray(nm.values, dtype=float)
    n, m = v.shape
    if n < 2:
        raise ValueError("entropy undefined for fewer than 2 keywords")
    if m == 1:
        return WeightVector(np.array([1.0]), WeightMode.ENTROPY)
    sums = v.sum(axis=0)
    if np.all(sums == 0):
        raise ValueError("every metric column sums to zero")

    ln_n = math.log(n)
    divergence = np.zeros(m)
    for d in range(m):
        col = v[:, d]
        if sums[d] == 0 or np.all(col == col[0]):
            continue  # no information in this column
        s = col / sums[d]
        nz = s[s > 0]
        e = -float(np.sum(nz * np.log(nz))) / ln_n
        divergence[d] = max(0.0, 1.0 - e)

    total = divergence.sum()
    if total == 0:
        return WeightVector(np.full(m, 1.0 / m), WeightMode.ENTROPY, fallback=True)
    return WeightVector(divergence / total, WeightMode.ENTROPY)


def fixed_weights(schema: MetricSchema) -> WeightVector:
    if schema.weights is None:
        raise ValueError("schema has no fixed weights")
    w = np.asarray(schema.weights, dtype=float)
    return WeightVector(w / w.sum(), WeightMode.FIXED)


def topsis_scores(nm: NormalizedMatrix, w: WeightVector) -> dict[str, float]:
    """Relative closeness S = D- / (D+ + D-) to the all-ones ideal."""
    v = np.asarray(nm.values, dtype=float)
    weights = np.asarray(w.w, dtype=float)
    if v.ndim != 2 or v.shape[1] != weights.shape[0]:
        raise ValueError(f"dimension mismatch: matrix {v.shape}, weights {weights.shape}")
    d_minus = np.sqrt((weights * v**2).sum(axis=1))
    d_plus = np.sqrt((weights * (v - 1.0) ** 2).sum(axis=1))
    denom = d_plus + d_minus
    scores = np.where(denom > 0, d_minus / np.where(denom > 0, denom, 1.0), 0.5)
    return {k: float(s) for k, s in zip(nm.keyword_ids, scores)}


@dataclass
class ScoreResult:
    scores: dict[str, float]
    weights: WeightVector
    matrix: NormalizedMatrix


def score_keywords(records: Mapping[str, Sequence[float]], schema: MetricSchema) -> ScoreResult:
    """normalize -> weights (fixed or entropy) -> TOPSIS in one call."""
    nm = normalize(records, schema)
    if schema.weight_mode is WeightMode.FIXED:
        w = fixed_weights(schema)
    elif len(nm.keyword_ids) < 2:
        w = WeightVector(np.full(schema.m, 1.0 / schema.m), WeightMode.ENTROPY, fallback=True)
    else:
        w = entropy_weights(nm)
    return ScoreResult(topsis_scores(nm, w), w, nm)


def _desc_key(item: tuple[str, float]) -> tuple[float, str]:
    return (-item[1], item[0])


def rank_intra(cluster: Cluster, scores: Mapping[str, float]) -> list[tuple[str, float]]:
    """Members by descending score; ties broken by canonical keyword text."""
    ranked = []
    for kid in cluster.keyword_ids:
        if kid not in scores:
            raise KeyError(f"no score for keyword {kid!r} in cluster {cluster.id}")
        ranked.append((kid, float(scores[kid])))
    return sorted(ranked, key=lambda it: (-it[1], canonical(it[0])))


def cluster_score(cluster: Cluster, scores: Mapping[str, float]) -> float:
    if not cluster.keyword_ids:
        raise ValueError(f"cluster {cluster.id} is empty")
    return sum(float(scores[k]) for k in cluster.keyword_ids) / len(cluster.keyword_ids)


def rank_inter(clusters: Sequence[Cluster], scores: Mapping[str, float]) -> list[tuple[str, float]]:
    """Clusters by descending mean member score; ties broken by cluster id."""
    if not clusters:
        raise ValueError("no clusters to rank")
    return sorted(((c.id, cluster_score(c, scores)) for c in clusters), key=_desc_key)
