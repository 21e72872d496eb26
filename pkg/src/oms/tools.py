"""The tool suite consulted by the generation loop.

Each tool returns a :class:`~oms.domain.ToolVerdict`; none of them mutates the
campaign state. Search is the only tool with a side effect, and only on the
append-only :class:`InfoStore`.
"""

from __future__ import annotations

import csv
import json
import logging
import os
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Protocol

from .domain import Outcome, ToolVerdict, canonical

log = logging.getLogger(__name__)


class SourceUnavailable(RuntimeError):
    pass


class VolumeUnavailable(RuntimeError):
    pass


@dataclass
class InfoStore:
    snippets: list[tuple[str, str]] = field(default_factory=list)  # (source tag, text)
    queries: list[str] = field(default_factory=list)
    sufficient: bool = False

    def append(self, tag: str, text: str) -> None:
        self.snippets.append((tag, text))

    def text(self) -> str:
        return "\n".join(t for _, t in self.snippets)


class SearchSource(Protocol):
    name: str

    def lookup(self, query: str) -> list[str]: ...


class FixtureSearch:
    """Offline search: query -> snippets from a JSON-able mapping."""

    name = "fixture"

    def __init__(self, corpus: Mapping[str, list[str]]):
        self.corpus = {canonical(q): list(v) for q, v in corpus.items()}

    @classmethod
    def from_json(cls, path: str | os.PathLike) -> "FixtureSearch":
        with open(path, encoding="utf-8") as fh:
            return cls(json.load(fh))

    def lookup(self, query: str) -> list[str]:
        return list(self.corpus.get(canonical(query), []))


def search(query: str, source: SearchSource, store: InfoStore) -> ToolVerdict:
    if not query or not query.strip():
        raise ValueError("search query must be non-empty")
    store.queries.append(query)
    try:
        snippets = source.lookup(query)
    except SourceUnavailable as exc:
        log.warning("search source %s unavailable: %s", getattr(source, "name", "?"), exc)
        return ToolVerdict("search", query, Outcome.ANALYSIS, "source unavailable", {"added": 0, "hit": False})
    for s in snippets:
        store.append(f"{getattr(source, 'name', 'search')}:{query}", s)
    return ToolVerdict("search", query, Outcome.ANALYSIS, "" if snippets else "no results",
                       {"added": len(snippets), "hit": bool(snippets)})


def reject_reflection(keyword: str, rejected: Iterable[str], substring: bool = False) -> ToolVerdict:
    """Reject a keyword already judged poor; ``substring`` also rejects keywords containing one."""
    key = canonical(keyword)
    rejected = {canonical(r) for r in rejected}
    if key in rejected:
        return ToolVerdict("reject_reflection", keyword, Outcome.REJECT, "in rejected set")
    if substring:
        for r in sorted(rejected):
            if r and f" {r} " in f" {key} ":
                return ToolVerdict("reject_reflection", keyword, Outcome.REJECT, f"contains rejected keyword {r!r}")
    return ToolVerdict("reject_reflection", keyword, Outcome.ACCEPT)


def repeated_filter(keyword: str, history: Iterable[str]) -> ToolVerdict:
    if canonical(keyword) in {canonical(h) for h in history}:
        return ToolVerdict("repeated_filter", keyword, Outcome.REJECT, "already deployed")
    return ToolVerdict("repeated_filter", keyword, Outcome.ACCEPT)


class VolumeProvider(Protocol):
    def volume(self, keyword: str) -> int: ...


class FixtureVolume:
    """keyword -> monthly search volume table (CSV ``keyword,volume``)."""

    def __init__(self, table: Mapping[str, int], default: int | None = None):
        self.table = {canonical(k): int(v) for k, v in table.items()}
        self.default = default

    @classmethod
    def from_csv(cls, path: str | os.PathLike, default: int | None = None) -> "FixtureVolume":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        return cls({r["keyword"]: int(r["volume"]) for r in rows}, default)

    def volume(self, keyword: str) -> int:
        key = canonical(keyword)
        if key in self.table:
            return self.table[key]
        if self.default is None:
            raise VolumeUnavailable(f"no volume for {keyword!r}")
        return self.default


def volume_check(keyword: str, provider: VolumeProvider, tau: int, strict: bool = True,
                 retries: int = 1) -> ToolVerdict:
    """Accept iff search volume >= tau.

    When the provider fails ``retries + 1`` times the verdict is Analysis with
    ``payload["accepted"]`` telling the caller what to do (False in strict mode).
    """
    if tau < 0:
        raise ValueError("tau must be >= 0")
    for attempt in range(retries + 1):
        try:
            vol = int(provider.volume(keyword))
            break
        except VolumeUnavailable as exc:
            log.warning("volume lookup for %r failed (attempt %d): %s", keyword, attempt + 1, exc)
    else:
        return ToolVerdict("volume_check", keyword, Outcome.ANALYSIS, "unknown volume",
                           {"volume": None, "accepted": not strict})
    if vol >= tau:
        return ToolVerdict("volume_check", keyword, Outcome.ACCEPT, payload={"volume": vol})
    return ToolVerdict("volume_check", keyword, Outcome.REJECT, f"volume {vol} < {tau}", {"volume": vol})


@dataclass
class LexicalReport:
    unigrams: dict[str, int] = field(default_factory=dict)
    bigrams: dict[str, int] = field(default_factory=dict)
    prefixes: dict[str, int] = field(default_factory=dict)
    suffixes: dict[str, int] = field(default_factory=dict)
    threshold: int = 2

    @property
    def empty(self) -> bool:
        return not (self.unigrams or self.bigrams or self.prefixes or self.suffixes)

    def patterns(self) -> list[str]:
        return sorted(set(self.unigrams) | set(self.bigrams) | set(self.prefixes) | set(self.suffixes))

    def to_dict(self) -> dict:
        return {"unigrams": self.unigrams, "bigrams": self.bigrams, "prefixes": self.prefixes,
                "suffixes": self.suffixes, "threshold": self.threshold}

    def as_constraint(self) -> str:
        """Generator rule text listing the patterns to avoid."""
        if self.empty:
            return ""
        parts = []
        for label, d in (("words", self.unigrams), ("word pairs", self.bigrams),
                         ("prefixes", self.prefixes), ("suffixes", self.suffixes)):
            if d:
                parts.append(f"{label}: " + ", ".join(f"'{p}' ({c})" for p, c in d.items()))
        return ("Keywords with these lexical patterns were rejected for low search volume; "
                "avoid them. " + "; ".join(parts) + ".")


def _sorted_counts(c: Counter, threshold: int) -> dict[str, int]:
    return {k: v for k, v in sorted(c.items(), key=lambda kv: (-kv[1], kv[0])) if v >= threshold}


def _maximal(counts: dict[str, int], kind: str) -> dict[str, int]:
    """Drop an affix when a longer affix of the same kind has the same count (it is implied)."""
    out = {}
    for p, c in counts.items():
        implied = any(
            len(q) > len(p) and cq == c and (q.startswith(p) if kind == "prefix" else q.endswith(p))
            for q, cq in counts.items()
        )
        if not implied:
            out[p] = c
    return out


def lexical_analysis(keywords: Iterable[str], min_count: int = 2, affix_range: tuple[int, int] = (3, 8)) -> LexicalReport:
    """Count shared token 1-/2-grams and character prefixes/suffixes across keywords.

    Counts are per keyword (a pattern occurring twice in one keyword counts
    once). Affixes must not start or end with whitespace, and only the
    longest affix among equally frequent nested ones is reported.
    """
    keys = sorted({canonical(k) for k in keywords})
    uni, bi, pre, suf = Counter(), Counter(), Counter(), Counter()
    lo, hi = affix_range
    for k in keys:
        toks = k.split()
        uni.update(set(toks))
        bi.update({f"{a} {b}" for a, b in zip(toks, toks[1:])})
        pres, sufs = set(), set()
        for n in range(lo, min(hi, len(k)) + 1):
            p, s = k[:n], k[-n:]
            if not p[-1].isspace():
                pres.add(p)
            if not s[0].isspace():
                sufs.add(s)
        pre.update(pres)
        suf.update(sufs)
    return LexicalReport(
        unigrams=_sorted_counts(uni, min_count),
        bigrams=_sorted_counts(bi, min_count),
        prefixes=_maximal(_sorted_counts(pre, min_count), "prefix"),
        suffixes=_maximal(_sorted_counts(suf, min_count), "suffix"),
        threshold=min_count,
    )


def category_reject(stats: Mapping[str, tuple[int, int] | list[int]], theta: float,
                    categories: Iterable[str] | None = None) -> set[str]:
    """Categories whose rejected/generated ratio strictly exceeds ``theta``.

    ``stats`` maps category -> (generated, rejected), accumulated across rounds.
    Categories with no generations are never rejected.
    """
    if not 0.0 <= theta <= 1.0:
        raise ValueError("theta must be in [0, 1]")
    allowed = None if categories is None else set(categories)
    out = set()
    for cat, (generated, rejected) in stats.items():
        if allowed is not None and cat not in allowed:
            continue
        if generated > 0 and rejected / generated > theta:
            out.add(cat)
    return out
