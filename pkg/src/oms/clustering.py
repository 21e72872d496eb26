"""Embedding-space clustering (affinity propagation) and LLM-assisted assignment."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Protocol, Sequence

import numpy as np

from .domain import Cluster, canonical
from .llm import AssignChoice, Gateway, ParseError, TemplateId, parse_assign, render

log = logging.getLogger(__name__)

_TOKEN = re.compile(r"[0-9a-z]+")


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


class EmbeddingProvider(Protocol):
    provider_id: str
    dimension: int
    deterministic: bool

    def embed(self, texts: Sequence[str]) -> np.ndarray: ...


def _seeded_unit_vector(seed_text: str, dim: int) -> np.ndarray:
    digest = hashlib.sha256(seed_text.encode("utf-8")).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


class HashEmbedding:
    """Deterministic bag-of-tokens embedding.

    Every token gets a hash-seeded random unit vector; a text embeds to the
    mean of its token vectors, so texts sharing words land close together.
    """

    deterministic = True

    def __init__(self, dimension: int = 32, seed: int = 0):
        if dimension < 2:
            raise ValueError("embedding dimension must be >= 2")
        self.dimension = dimension
        self.seed = seed
        self.provider_id = f"hash-{dimension}-{seed}"
        self._cache: dict[str, np.ndarray] = {}

    def token_vector(self, token: str) -> np.ndarray:
        v = self._cache.get(token)
        if v is None:
            v = self._cache[token] = _seeded_unit_vector(f"{self.seed}:{token}", self.dimension)
        return v

    def embed_one(self, text: str) -> np.ndarray:
        toks = tokenize(text)
        if not toks:
            return _seeded_unit_vector(f"{self.seed}::{canonical(text)}", self.dimension)
        return np.mean([self.token_vector(t) for t in toks], axis=0)

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        if len(texts) == 0:
            return np.zeros((0, self.dimension))
        return np.vstack([self.embed_one(t) for t in texts])


class TableEmbedding:
    """Fixture provider: explicit text -> vector table."""

    deterministic = True

    def __init__(self, table: Mapping[str, Sequence[float]], provider_id: str = "table"):
        self.table = {k: np.asarray(v, dtype=float) for k, v in table.items()}
        dims = {v.shape[0] for v in self.table.values()}
        if len(dims) != 1:
            raise ValueError("all fixture vectors must share one dimension")
        self.dimension = dims.pop()
        self.provider_id = provider_id

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        try:
            return np.vstack([self.table[t] for t in texts]) if texts else np.zeros((0, self.dimension))
        except KeyError as exc:
            raise KeyError(f"no fixture vector for {exc.args[0]!r}") from None


class CachedEmbedding:
    """Wraps a provider with a JSON file cache keyed by (provider id, sha256(text))."""

    def __init__(self, inner: EmbeddingProvider, path: str | os.PathLike):
        self.inner = inner
        self.path = Path(path)
        self.provider_id = inner.provider_id
        self.dimension = inner.dimension
        self.deterministic = inner.deterministic
        self._store: dict[str, list[float]] = {}
        if self.path.exists():
            self._store = json.loads(self.path.read_text(encoding="utf-8"))

    def _key(self, text: str) -> str:
        return f"{self.provider_id}:{hashlib.sha256(text.encode('utf-8')).hexdigest()}"

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        missing = [t for t in dict.fromkeys(texts) if self._key(t) not in self._store]
        if missing:
            for t, v in zip(missing, self.inner.embed(missing)):
                self._store[self._key(t)] = [float(x) for x in v]
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text(json.dumps(self._store, sort_keys=True), encoding="utf-8")
        if not texts:
            return np.zeros((0, self.dimension))
        return np.array([self._store[self._key(t)] for t in texts])


# --------------------------------------------------------------------------
# affinity propagation

@dataclass
class SimilarityMatrix:
    values: np.ndarray
    preference: float

    @property
    def n(self) -> int:
        return self.values.shape[0]


def build_similarity(embeddings, preference: str | float = "median") -> SimilarityMatrix:
    """Negative squared Euclidean distances; the diagonal holds the preference.

    ``preference`` is ``"median"`` (median of the off-diagonal entries) or a number.
    """
    x = np.asarray(embeddings, dtype=float)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ValueError("need at least one embedding")
    if x.shape[1] == 0:
        raise ValueError("zero-dimension embeddings")
    sq = np.sum(x * x, axis=1)
    s = -(sq[:, None] + sq[None, :] - 2.0 * x @ x.T)
    s = np.minimum(s, 0.0)
    s = (s + s.T) / 2.0
    n = x.shape[0]
    off = s[~np.eye(n, dtype=bool)]
    if isinstance(preference, str):
        if preference != "median":
            raise ValueError(f"unknown preference policy {preference!r}")
        pref = float(np.median(off)) if off.size else 0.0
    else:
        pref = float(preference)
    np.fill_diagonal(s, pref)
    return SimilarityMatrix(s, pref)


@dataclass
class APResult:
    labels: np.ndarray  # index of each point's exemplar
    exemplars: np.ndarray
    converged: bool
    n_iter: int

    def partition(self) -> list[list[int]]:
        groups: dict[int, list[int]] = {}
        for i, e in enumerate(self.labels):
            groups.setdefault(int(e), []).append(i)
        return [groups[e] for e in sorted(groups)]


def affinity_propagation(sim: SimilarityMatrix | np.ndarray, damping: float = 0.5, max_iter: int = 200,
                         conv_iter: int = 15, jitter_seed: int | None = 0) -> APResult:
    """Frey-Dueck responsibility/availability message passing.

    Converged once the exemplar set has been stable for ``conv_iter`` sweeps.
    A tiny seeded jitter breaks exact ties (e.g. duplicate points), which
    otherwise make the messages oscillate.
    """
    if not 0.5 <= damping < 1.0:
        raise ValueError("damping must be in [0.5, 1)")
    s = np.array(sim.values if isinstance(sim, SimilarityMatrix) else sim, dtype=float)
    n = s.shape[0]
    if n == 1:
        return APResult(np.array([0]), np.array([0]), True, 0)
    if jitter_seed is not None:
        rng = np.random.default_rng(jitter_seed)
        tiny = np.finfo(float).tiny * 100
        s = s + (np.finfo(float).eps * s + tiny) * rng.standard_normal((n, n))

    r = np.zeros((n, n))
    a = np.zeros((n, n))
    rows = np.arange(n)
    history = np.zeros((n, conv_iter), dtype=bool)
    converged = False
    it = 0
    for it in range(max_iter):
        # r(i,k) = s(i,k) - max_{k' != k} [a(i,k') + s(i,k')]
        as_ = a + s
        best = np.argmax(as_, axis=1)
        first = as_[rows, best]
        as_[rows, best] = -np.inf
        second = np.max(as_, axis=1)
        r_new = s - first[:, None]
        r_new[rows, best] = s[rows, best] - second
        r = damping * r + (1 - damping) * r_new

        # a(i,k) = min(0, r(k,k) + sum_{i' not in {i,k}} max(0, r(i',k)));  a(k,k) = sum_{i' != k} max(0, r(i',k))
        rp = np.maximum(r, 0)
        np.fill_diagonal(rp, np.diag(r))
        col = rp.sum(axis=0)
        a_new = col[None, :] - rp
        self_avail = np.diag(a_new).copy()
        a_new = np.minimum(a_new, 0)
        np.fill_diagonal(a_new, self_avail)
        a = damping * a + (1 - damping) * a_new

        is_exemplar = (np.diag(a) + np.diag(r)) > 0
        history[:, it % conv_iter] = is_exemplar
        if it >= conv_iter:
            stable = history.sum(axis=1)
            if np.all((stable == conv_iter) | (stable == 0)) and is_exemplar.any():
                converged = True
                break

    exemplars = np.flatnonzero((np.diag(a) + np.diag(r)) > 0)
    if exemplars.size == 0:
        exemplars = np.array([int(np.argmax(np.diag(a) + np.diag(r)))])
    labels = _assign_to_exemplars(s, exemplars)
    return APResult(labels, np.unique(labels), converged, it + 1)


def _assign_to_exemplars(s: np.ndarray, exemplars: np.ndarray) -> np.ndarray:
    exemplars = exemplars.copy()
    k = exemplars.size
    c = np.argmax(s[:, exemplars], axis=1)
    c[exemplars] = np.arange(k)
    # move each exemplar to the member maximizing within-cluster similarity
    for j in range(k):
        members = np.flatnonzero(c == j)
        inner = s[np.ix_(members, members)].sum(axis=0)
        exemplars[j] = members[int(np.argmax(inner))]
    c = np.argmax(s[:, exemplars], axis=1)
    c[exemplars] = np.arange(k)
    return exemplars[c]


# --------------------------------------------------------------------------
# assignment of new keywords

def centroid(cluster: Cluster, vectors: Mapping[str, np.ndarray]) -> np.ndarray:
    return np.mean([vectors[k] for k in cluster.keyword_ids], axis=0)


def top_k_clusters(keyword_vec, clusters: Sequence[Cluster], vectors: Mapping[str, np.ndarray],
                   k: int = 3) -> list[tuple[Cluster, float]]:
    """Nearest clusters by Euclidean distance to the member centroid; ties by cluster id."""
    q = np.asarray(keyword_vec, dtype=float)
    dists = [(cl, float(np.linalg.norm(q - centroid(cl, vectors)))) for cl in clusters]
    dists.sort(key=lambda t: (t[1], t[0].id))
    return dists[:k]


@dataclass
class AssignmentLog:
    keyword: str
    candidates: list[str]
    choice: str
    fallback: bool = False

    def to_dict(self) -> dict:
        return {"keyword": self.keyword, "candidates": self.candidates, "choice": self.choice,
                "fallback": self.fallback}


def _members_text(cluster: Cluster | None) -> str:
    return ", ".join(cluster.keyword_ids) if cluster else "(no cluster)"


def llm_assign(keyword: str, candidates: Sequence[Cluster], product_info: str, gateway: Gateway) -> AssignChoice:
    padded = list(candidates) + [None] * (3 - len(candidates))
    bundle = render(TemplateId.ASSIGN, {
        "keyword_tobe_decided": keyword,
        "product_information": product_info,
        "cluster_1_keywords": _members_text(padded[0]),
        "cluster_2_keywords": _members_text(padded[1]),
        "cluster_3_keywords": _members_text(padded[2]),
    })

    def parse(reply: str) -> AssignChoice:
        choice = parse_assign(reply)
        if choice.index is not None and choice.index >= len(candidates):
            raise ParseError(f"{choice.value} does not exist", reply)
        return choice

    return gateway.ask(TemplateId.ASSIGN, "", bundle.rendered_text, parse)


@dataclass
class ReclusterResult:
    clusters: list[Cluster]
    assignments: list[AssignmentLog] = field(default_factory=list)
    ap_converged: bool = True
    ap_iterations: int = 0


def assign_new_keywords(new_keys: Sequence[str], clusters: list[Cluster], vectors: Mapping[str, np.ndarray],
                        product_info: str, gateway: Gateway, new_id, k: int = 3) -> list[AssignmentLog]:
    """Place each new keyword via top-k nearest clusters and the Assign prompt.

    Mutates ``clusters`` in place. ``new_id()`` mints ids for new clusters.
    An unparseable reply (after the gateway's retries) falls back to the
    nearest centroid.
    """
    logs = []
    for key in new_keys:
        if not clusters:
            clusters.append(Cluster(new_id(), [key]))
            logs.append(AssignmentLog(key, [], AssignChoice.NEW.value))
            continue
        top = top_k_clusters(vectors[key], clusters, vectors, k)
        cands = [c for c, _ in top]
        fallback = False
        try:
            choice = llm_assign(key, cands, product_info, gateway)
        except ParseError:
            log.warning("Assign reply for %r unparseable; using nearest centroid", key)
            choice, fallback = AssignChoice.CLUSTER1, True
        if choice is AssignChoice.NEW:
            clusters.append(Cluster(new_id(), [key]))
        else:
            cands[choice.index].keyword_ids.append(key)
        logs.append(AssignmentLog(key, [c.id for c in cands], choice.value, fallback))
    return logs


def _relabel(groups: list[list[str]], previous: Sequence[Cluster], new_id) -> list[Cluster]:
    """Give AP groups the id of the previous cluster they overlap most (greedy, largest first)."""
    prev_sets = {c.id: set(c.keyword_ids) for c in previous}
    taken: set[str] = set()
    order = sorted(range(len(groups)), key=lambda i: (-len(groups[i]), sorted(groups[i])[0]))
    ids: dict[int, str] = {}
    for i in order:
        g = set(groups[i])
        best, best_overlap = None, 0
        for cid in sorted(prev_sets):
            if cid in taken:
                continue
            ov = len(g & prev_sets[cid])
            if ov > best_overlap:
                best, best_overlap = cid, ov
        if best is None:
            best = new_id()
        taken.add(best)
        ids[i] = best
    out = [Cluster(ids[i], sorted(groups[i])) for i in range(len(groups))]
    prev_intent = {c.id: c.intent_summary for c in previous}
    for c in out:
        c.intent_summary = prev_intent.get(c.id)
    return sorted(out, key=lambda c: c.id)


def recluster(old_keys: Sequence[str], new_keys: Sequence[str], previous: Sequence[Cluster],
              provider: EmbeddingProvider, product_info: str, gateway: Gateway, new_id,
              damping: float = 0.5, max_iter: int = 200, conv_iter: int = 15,
              preference: str | float = "median") -> ReclusterResult:
    """Embed everything, run AP over old+new, then let the Assign prompt place the new keywords.

    AP decides membership of the old keywords; each new keyword is placed by
    :func:`assign_new_keywords` against the clusters formed by the old ones.
    With no old keywords the AP partition is used as-is.
    """
    old_keys = list(dict.fromkeys(old_keys))
    new_keys = [k for k in dict.fromkeys(new_keys) if k not in set(old_keys)]
    all_keys = old_keys + new_keys
    if not all_keys:
        return ReclusterResult([])
    vecs = provider.embed(all_keys)
    vectors = {k: vecs[i] for i, k in enumerate(all_keys)}
    ap = affinity_propagation(build_similarity(vecs, preference), damping, max_iter, conv_iter)
    groups = [[all_keys[i] for i in g] for g in ap.partition()]

    if not old_keys:
        return ReclusterResult(_relabel(groups, previous, new_id), [], ap.converged, ap.n_iter)

    new_set = set(new_keys)
    old_groups = [[k for k in g if k not in new_set] for g in groups]
    clusters = _relabel([g for g in old_groups if g], previous, new_id)
    logs = assign_new_keywords(new_keys, clusters, vectors, product_info, gateway, new_id)
    for c in clusters:
        c.keyword_ids = sorted(c.keyword_ids)
    return ReclusterResult(clusters, logs, ap.converged, ap.n_iter)
