"""Core data model: keywords, metric schemas, clusters and the campaign state.

Everything here is a plain dataclass. Invariants that involve more than one
object (uniqueness, partition, caps) are reported by :func:`validate_state`
rather than enforced at construction time, so a broken state file can still
be loaded and inspected.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

STATE_VERSION = 1


def canonical(text: str) -> str:
    """Case-insensitive, whitespace-normalized keyword identity."""
    return " ".join(text.split()).casefold()


class BrandClass(str, Enum):
    BRANDED = "Branded"
    NON_BRANDED = "NonBranded"


class KeywordStatus(str, Enum):
    CANDIDATE = "Candidate"
    DEPLOYED = "Deployed"
    RETIRED = "Retired"
    REJECTED = "Rejected"


_TRANSITIONS = {
    KeywordStatus.CANDIDATE: {KeywordStatus.DEPLOYED, KeywordStatus.REJECTED},
    KeywordStatus.DEPLOYED: {KeywordStatus.RETIRED},
    KeywordStatus.RETIRED: set(),
    KeywordStatus.REJECTED: set(),
}


class Orientation(str, Enum):
    BENEFIT = "Benefit"
    COST = "Cost"


class WeightMode(str, Enum):
    FIXED = "Fixed"
    ENTROPY = "Entropy"


class Outcome(str, Enum):
    ACCEPT = "Accept"
    REJECT = "Reject"
    ANALYSIS = "Analysis"


@dataclass
class Keyword:
    text: str
    brand_class: BrandClass = BrandClass.NON_BRANDED
    status: KeywordStatus = KeywordStatus.CANDIDATE
    created_round: int = 1
    cluster_id: str | None = None
    category: str | None = None

    def __post_init__(self) -> None:
        if not self.text or not self.text.strip():
            raise ValueError("keyword text must be non-empty")
        self.brand_class = BrandClass(self.brand_class)
        self.status = KeywordStatus(self.status)

    @property
    def key(self) -> str:
        return canonical(self.text)

    def transition(self, new: KeywordStatus) -> None:
        new = KeywordStatus(new)
        if new not in _TRANSITIONS[self.status]:
            raise ValueError(f"illegal status transition {self.status.value} -> {new.value} for {self.text!r}")
        self.status = new

    def to_dict(self) -> dict[str, Any]:
        return {
            "text": self.text,
            "brand_class": self.brand_class.value,
            "status": self.status.value,
            "created_round": self.created_round,
            "cluster_id": self.cluster_id,
            "category": self.category,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Keyword":
        return cls(**d)


@dataclass
class MetricSchema:
    """Ordered metric names with orientation, plus optional fixed weights."""

    metrics: list[tuple[str, Orientation]]
    weights: list[float] | None = None
    weight_mode: WeightMode = WeightMode.ENTROPY

    def __post_init__(self) -> None:
        self.metrics = [(str(n), Orientation(o)) for n, o in self.metrics]
        self.weight_mode = WeightMode(self.weight_mode)
        names = self.names
        if len(set(names)) != len(names):
            raise ValueError(f"metric names must be unique: {names}")
        if not names:
            raise ValueError("schema needs at least one metric")
        if self.weight_mode is WeightMode.FIXED:
            if self.weights is None or len(self.weights) != len(names):
                raise ValueError("fixed weight mode needs one weight per metric")
            if any(w < 0 or not math.isfinite(w) for w in self.weights):
                raise ValueError("weights must be finite and non-negative")
            if abs(sum(self.weights) - 1.0) > 1e-9:
                raise ValueError(f"weights must sum to 1, got {sum(self.weights)!r}")
        if self.weights is not None:
            self.weights = [float(w) for w in self.weights]

    @property
    def names(self) -> list[str]:
        return [n for n, _ in self.metrics]

    @property
    def orientations(self) -> list[Orientation]:
        return [o for _, o in self.metrics]

    @property
    def m(self) -> int:
        return len(self.metrics)

    def index(self, name: str) -> int:
        return self.names.index(name)

    def to_dict(self) -> dict[str, Any]:
        return {
            "metrics": [[n, o.value] for n, o in self.metrics],
            "weights": self.weights,
            "weight_mode": self.weight_mode.value,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "MetricSchema":
        return cls(metrics=[tuple(x) for x in d["metrics"]], weights=d.get("weights"),
                   weight_mode=d.get("weight_mode", WeightMode.ENTROPY))


def default_schema() -> MetricSchema:
    return MetricSchema(
        metrics=[
            ("Click", Orientation.BENEFIT),
            ("Conversion", Orientation.BENEFIT),
            ("Cost", Orientation.COST),
            ("Impression", Orientation.BENEFIT),
        ]
    )


@dataclass
class PerformanceRecord:
    keyword_id: str
    values: list[float]
    as_of_round: int

    def to_dict(self) -> dict[str, Any]:
        return {"keyword_id": self.keyword_id, "values": list(self.values), "as_of_round": self.as_of_round}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "PerformanceRecord":
        return cls(keyword_id=d["keyword_id"], values=[float(v) for v in d["values"]],
                   as_of_round=int(d["as_of_round"]))


@dataclass
class Cluster:
    id: str
    keyword_ids: list[str]
    intent_summary: str | None = None
    score: float | None = None

    def to_dict(self) -> dict[str, Any]:
        return {"id": self.id, "keyword_ids": list(self.keyword_ids),
                "intent_summary": self.intent_summary, "score": self.score}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Cluster":
        return cls(**d)


@dataclass
class ToolVerdict:
    tool_name: str
    subject: str
    outcome: Outcome
    reason: str = ""
    payload: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.outcome = Outcome(self.outcome)
        if self.outcome is Outcome.REJECT and not self.reason:
            raise ValueError(f"{self.tool_name}: Reject verdict needs a reason")

    @property
    def accepted(self) -> bool:
        return self.outcome is Outcome.ACCEPT

    def to_dict(self) -> dict[str, Any]:
        return {"tool": self.tool_name, "subject": self.subject, "outcome": self.outcome.value,
                "reason": self.reason, "payload": self.payload}


@dataclass
class CampaignState:
    """Everything that persists between rounds of one campaign.

    ``round`` is the index of the next round to run (1-based). Money is kept
    in integer minor currency units.
    """

    product_info: str
    product_name: str = ""
    round: int = 1
    horizon: int = 5
    per_round_cap: int = 50
    budget_cap: int = 0
    budget_spent: int = 0
    schema: MetricSchema = field(default_factory=default_schema)
    keywords: list[Keyword] = field(default_factory=list)
    clusters: list[Cluster] = field(default_factory=list)
    performance: list[PerformanceRecord] = field(default_factory=list)
    rejected: list[str] = field(default_factory=list)
    # category -> [generated, rejected] across all rounds
    category_stats: dict[str, list[int]] = field(default_factory=dict)
    rejected_categories: list[str] = field(default_factory=list)
    next_cluster_seq: int = 1
    reports: list[dict[str, Any]] = field(default_factory=list)

    # --- lookups -------------------------------------------------------
    def keyword(self, key: str) -> Keyword | None:
        key = canonical(key)
        for kw in self.keywords:
            if kw.key == key:
                return kw
        return None

    def by_status(self, *statuses: KeywordStatus) -> list[Keyword]:
        return [k for k in self.keywords if k.status in statuses]

    @property
    def deployed(self) -> list[Keyword]:
        return self.by_status(KeywordStatus.DEPLOYED)

    @property
    def history(self) -> set[str]:
        """Canonical keys of deployed-or-retired keywords."""
        return {k.key for k in self.by_status(KeywordStatus.DEPLOYED, KeywordStatus.RETIRED)}

    @property
    def rejected_set(self) -> set[str]:
        return set(self.rejected)

    def add_rejected(self, text: str) -> None:
        key = canonical(text)
        if key not in self.rejected:
            self.rejected.append(key)

    def new_cluster_id(self) -> str:
        cid = f"C{self.next_cluster_seq:03d}"
        self.next_cluster_seq += 1
        return cid

    def cumulative_performance(self, keys: Iterable[str] | None = None) -> dict[str, list[float]]:
        """Sum of recorded metric vectors per keyword across all rounds."""
        wanted = None if keys is None else {canonical(k) for k in keys}
        out: dict[str, list[float]] = {}
        for rec in self.performance:
            if wanted is not None and rec.keyword_id not in wanted:
                continue
            acc = out.setdefault(rec.keyword_id, [0.0] * self.schema.m)
            for d, v in enumerate(rec.values):
                acc[d] += v
        return out

    # --- serialization -------------------------------------------------
    def to_dict(self) -> dict[str, Any]:
        return {
            "version": STATE_VERSION,
            "product_info": self.product_info,
            "product_name": self.product_name,
            "round": self.round,
            "horizon": self.horizon,
            "per_round_cap": self.per_round_cap,
            "budget_cap": self.budget_cap,
            "budget_spent": self.budget_spent,
            "schema": self.schema.to_dict(),
            "keywords": [k.to_dict() for k in self.keywords],
            "clusters": [c.to_dict() for c in self.clusters],
            "performance": [p.to_dict() for p in self.performance],
            "rejected": list(self.rejected),
            "category_stats": {k: list(v) for k, v in self.category_stats.items()},
            "rejected_categories": list(self.rejected_categories),
            "next_cluster_seq": self.next_cluster_seq,
            "reports": self.reports,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "CampaignState":
        d = dict(d)
        version = d.pop("version", STATE_VERSION)
        if version != STATE_VERSION:
            raise ValueError(f"unsupported state version {version}")
        d["schema"] = MetricSchema.from_dict(d["schema"])
        d["keywords"] = [Keyword.from_dict(k) for k in d.get("keywords", [])]
        d["clusters"] = [Cluster.from_dict(c) for c in d.get("clusters", [])]
        d["performance"] = [PerformanceRecord.from_dict(p) for p in d.get("performance", [])]
        d["category_stats"] = {k: list(v) for k, v in d.get("category_stats", {}).items()}
        return cls(**d)


def dumps_state(state: CampaignState) -> str:
    return json.dumps(state.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def loads_state(text: str) -> CampaignState:
    return CampaignState.from_dict(json.loads(text))


def save_state(state: CampaignState, path: str | os.PathLike) -> None:
    """Write the state file atomically (temp file in the same dir + rename)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=path.name + ".", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(dumps_state(state))
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_state(path: str | os.PathLike) -> CampaignState:
    return loads_state(Path(path).read_text(encoding="utf-8"))


def validate_state(state: CampaignState) -> list[str]:
    """Return a list of invariant violations; empty means the state is valid."""
    violations: list[str] = []
    seen: dict[str, str] = {}
    for kw in state.keywords:
        if kw.key in seen:
            violations.append(f"duplicate keyword {kw.text!r} (collides with {seen[kw.key]!r})")
        else:
            seen[kw.key] = kw.text
        if kw.created_round < 1:
            violations.append(f"keyword {kw.text!r} has created_round {kw.created_round} < 1")

    n_deployed = len(state.deployed)
    if n_deployed > state.per_round_cap:
        violations.append(f"{n_deployed} keywords deployed, cap is {state.per_round_cap}")
    if state.budget_spent > state.budget_cap:
        violations.append(f"budget spent {state.budget_spent} exceeds cap {state.budget_cap}")

    rejected = state.rejected_set
    for kw in state.deployed:
        if kw.key in rejected:
            violations.append(f"deployed keyword {kw.text!r} is in the rejected set")

    owner: dict[str, str] = {}
    for cl in state.clusters:
        if not cl.keyword_ids:
            violations.append(f"cluster {cl.id} is empty")
        if cl.score is not None and not 0.0 <= cl.score <= 1.0:
            violations.append(f"cluster {cl.id} score {cl.score} outside [0,1]")
        for kid in cl.keyword_ids:
            if kid in owner:
                violations.append(f"keyword {kid!r} in clusters {owner[kid]} and {cl.id}")
            else:
                owner[kid] = cl.id
            if kid not in seen:
                violations.append(f"cluster {cl.id} references unknown keyword {kid!r}")
    if len({c.id for c in state.clusters}) != len(state.clusters):
        violations.append("cluster ids are not unique")

    m = state.schema.m
    for rec in state.performance:
        if len(rec.values) != m:
            violations.append(f"performance record for {rec.keyword_id!r} has {len(rec.values)} values, schema has {m}")
        elif any(not math.isfinite(v) or v < 0 for v in rec.values):
            violations.append(f"performance record for {rec.keyword_id!r} has negative or non-finite values")
    return violations


class PlatformUnavailable(RuntimeError):
    """An ad platform (or its simulator) could not deliver performance data."""


class CSVFormatError(ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


def read_performance_csv(source: str | os.PathLike | io.TextIOBase, schema: MetricSchema,
                         as_of_round: int = 1) -> list[PerformanceRecord]:
    """Parse ``keyword,<metric names in schema order>`` rows."""
    if isinstance(source, (str, os.PathLike)):
        with open(source, newline="", encoding="utf-8") as fh:
            return read_performance_csv(fh, schema, as_of_round)
    reader = csv.reader(source)
    try:
        header = next(reader)
    except StopIteration:
        raise CSVFormatError(1, "empty file") from None
    expected = ["keyword", *schema.names]
    if [h.strip() for h in header] != expected:
        raise CSVFormatError(1, f"header must be {','.join(expected)}")
    records = []
    for row in reader:
        line = reader.line_num
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(expected):
            raise CSVFormatError(line, f"expected {len(expected)} fields, got {len(row)}")
        try:
            values = [float(c) for c in row[1:]]
        except ValueError as exc:
            raise CSVFormatError(line, str(exc)) from None
        if any(not math.isfinite(v) or v < 0 for v in values):
            raise CSVFormatError(line, "metric values must be finite and non-negative")
        if not row[0].strip():
            raise CSVFormatError(line, "empty keyword")
        records.append(PerformanceRecord(canonical(row[0]), values, as_of_round))
    return records


def write_performance_csv(records: Sequence[PerformanceRecord], schema: MetricSchema) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["keyword", *schema.names])
    for rec in records:
        w.writerow([rec.keyword_id, *[_fmt_num(v) for v in rec.values]])
    return buf.getvalue()


def _fmt_num(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))
