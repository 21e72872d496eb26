"""Synthetic sponsored-search platform.

Keyword attributes (relevance, search volume, competition) are pure
functions of ``(market seed, keyword text)``; only the per-step traffic
draws consume the market's random stream. Two markets built from the same
seed therefore produce identical trajectories for identical deployments.

Relevance is the cosine between a keyword's bag-of-words embedding and the
product topic (mean of the core feature words), scaled by ``rho_ref`` and
clipped to [0, 1]. CTR and CVR grow as powers of relevance, so an
irrelevant keyword can never convert.
"""

from __future__ import annotations

import csv
import hashlib
import io
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

from .clustering import HashEmbedding, tokenize
from .domain import MetricSchema, PerformanceRecord, canonical

# A default product world: a mirrorless camera. Word classes drive the
# synthetic volume model; the product text mentions the core words and a
# couple of niche ones.
CORE_WORDS = ["mirrorless", "camera", "autofocus", "fullframe", "sensor", "lens", "4k", "burst"]
GENERIC_WORDS = ["best", "buy", "cheap", "review", "new", "professional", "deal", "online", "top", "price"]
OFFTOPIC_WORDS = ["recipe", "garden", "travel", "shoes", "insurance", "mortgage", "yoga", "pizza",
                  "furniture", "guitar", "coffee", "laptop", "bicycle", "perfume", "tent", "wallpaper"]
NICHE_WORDS = ["stacked", "bionz", "c2pa", "shutterless", "xr"]
BRAND = "alpha"

PRODUCT_INFO = (
    "The Alpha mirrorless camera pairs a fullframe stacked sensor with fast autofocus. This fullframe "
    "mirrorless camera records 4k video and fires 120 fps burst shots, and its autofocus tracks people "
    "and animals across the frame. The BIONZ XR engine keeps the sensor clean at high ISO. A wide range "
    "of lens mounts makes the camera suitable for sports, wildlife and travel, and every lens keeps full "
    "autofocus speed in 4k and burst modes."
)

_CLASS_VOLUME = {"core": 5000.0, "generic": 20000.0, "offtopic": 8000.0, "niche": 60.0, "brand": 3000.0}


def _hash_rng(*parts: Any) -> np.random.Generator:
    digest = hashlib.sha256("\x1f".join(map(str, parts)).encode("utf-8")).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


@dataclass
class MarketConfig:
    seed: int = 42
    dim: int = 64
    core_words: list[str] = field(default_factory=lambda: list(CORE_WORDS))
    generic_words: list[str] = field(default_factory=lambda: list(GENERIC_WORDS))
    offtopic_words: list[str] = field(default_factory=lambda: list(OFFTOPIC_WORDS))
    niche_words: list[str] = field(default_factory=lambda: list(NICHE_WORDS))
    brand: str = BRAND
    product_info: str = PRODUCT_INFO
    rho_ref: float = 0.6
    ctr_max: float = 0.08
    cvr_max: float = 0.06
    ctr_gamma: float = 2.0
    cvr_delta: float = 2.0
    volume_sigma: float = 0.5
    token_decay: float = 0.5  # volume multiplier per extra token
    base_cpc: int = 60  # minor currency units
    max_share: float = 0.8

    @property
    def vocabulary(self) -> list[str]:
        return self.core_words + self.generic_words + self.offtopic_words + self.niche_words


@dataclass(frozen=True)
class KeywordProfile:
    relevance: float
    volume: int  # monthly searches
    competition: float  # in [0.2, 1.0]
    cpc: int

    @property
    def competitor_score(self) -> float:
        """Percentile of the competition factor within its U(0.2, 1) reference law."""
        return round(100.0 * (self.competition - 0.2) / 0.8, 4)


class MarketModel:
    def __init__(self, config: MarketConfig | None = None, *, seed: int | None = None,
                 overrides: Mapping[str, KeywordProfile] | None = None):
        self.config = config or MarketConfig()
        if seed is not None:
            self.config = MarketConfig(**{**asdict(self.config), "seed": seed})
        self.seed = self.config.seed
        self.embedding = HashEmbedding(self.config.dim, seed=self.seed)
        core = self.embedding.embed(self.config.core_words)
        topic = core.mean(axis=0)
        self.topic = topic / np.linalg.norm(topic)
        self.overrides = {canonical(k): v for k, v in (overrides or {}).items()}
        self._profiles: dict[str, KeywordProfile] = {}
        self.rng = np.random.default_rng([self.seed, 7919])
        classes = {}
        for cls, words in (("core", self.config.core_words), ("generic", self.config.generic_words),
                           ("offtopic", self.config.offtopic_words), ("niche", self.config.niche_words),
                           ("brand", [self.config.brand])):
            for w in words:
                classes[w] = cls
        self._word_class = classes

    # --- keyword attributes ------------------------------------------
    def word_class(self, token: str) -> str:
        return self._word_class.get(token, "offtopic")

    def relevance(self, keyword: str) -> float:
        toks = [t for t in tokenize(keyword) if t != self.config.brand]
        if not toks:
            return 0.0
        v = self.embedding.embed_one(" ".join(toks))
        cos = float(v @ self.topic / np.linalg.norm(v))
        return float(min(1.0, max(0.0, cos / self.config.rho_ref)))

    def word_volume(self, token: str) -> float:
        base = _CLASS_VOLUME[self.word_class(token)]
        z = _hash_rng(self.seed, "word", token).standard_normal()
        return base * math.exp(self.config.volume_sigma * z)

    def profile(self, keyword: str) -> KeywordProfile:
        key = canonical(keyword)
        if key in self.overrides:
            return self.overrides[key]
        prof = self._profiles.get(key)
        if prof is None:
            toks = tokenize(key) or [key]
            rng = _hash_rng(self.seed, "kw", key)
            noise = math.exp(0.3 * rng.standard_normal())
            vol = min(self.word_volume(t) for t in toks) * self.config.token_decay ** (len(toks) - 1) * noise
            competition = 0.2 + 0.8 * float(rng.random())
            cpc = max(1, int(round(self.config.base_cpc * (0.5 + competition))))
            prof = self._profiles[key] = KeywordProfile(self.relevance(key), int(vol), competition, cpc)
        return prof

    def volume(self, keyword: str) -> int:
        """VolumeProvider interface."""
        return self.profile(keyword).volume

    def ctr(self, rho: float) -> float:
        return self.config.ctr_max * rho ** self.config.ctr_gamma

    def cvr(self, rho: float) -> float:
        return self.config.cvr_max * rho ** self.config.cvr_delta

    def keyword_pool(self, size: int, seed: int = 0, max_tokens: int = 3) -> list[str]:
        """Random keywords drawn uniformly from the whole vocabulary (baseline pool)."""
        rng = _hash_rng(self.seed, "pool", seed)
        vocab = self.config.vocabulary
        out: list[str] = []
        seen = set()
        while len(out) < size:
            n = int(rng.integers(1, max_tokens + 1))
            words = [vocab[int(i)] for i in rng.choice(len(vocab), size=n, replace=False)]
            kw = " ".join(words)
            if kw not in seen:
                seen.add(kw)
                out.append(kw)
        return out


@dataclass
class KeywordStats:
    impressions: int = 0
    clicks: int = 0
    cost: int = 0
    conversions: int = 0
    search_volume: int = 0
    competitor_score: float = 0.0

    def metric(self, name: str) -> float:
        return float(getattr(self, METRIC_FIELDS[name]))


METRIC_FIELDS = {
    "Click": "clicks",
    "Conversion": "conversions",
    "Cost": "cost",
    "Impression": "impressions",
    "SearchVolume": "search_volume",
    "CompetitorScore": "competitor_score",
}


def _ratio(a: float, b: float) -> float:
    return a / b if b else 0.0


@dataclass
class StepReport:
    keywords: dict[str, KeywordStats] = field(default_factory=dict)
    budget: int = 0  # spend ceiling that applied to this step

    @property
    def impressions(self) -> int:
        return sum(s.impressions for s in self.keywords.values())

    @property
    def clicks(self) -> int:
        return sum(s.clicks for s in self.keywords.values())

    @property
    def conversions(self) -> int:
        return sum(s.conversions for s in self.keywords.values())

    @property
    def cost(self) -> int:
        return sum(s.cost for s in self.keywords.values())

    @property
    def ctr(self) -> float:
        return _ratio(self.clicks, self.impressions)

    @property
    def cpc(self) -> float:
        return _ratio(self.cost, self.clicks)

    @property
    def cpa(self) -> float:
        return _ratio(self.cost, self.conversions)

    @property
    def conversion_rate(self) -> float:
        return _ratio(self.conversions, self.clicks)

    def totals(self) -> dict[str, float]:
        return {"impressions": self.impressions, "clicks": self.clicks, "conversions": self.conversions,
                "cost": self.cost, "ctr": self.ctr, "cpc": self.cpc, "cpa": self.cpa,
                "conversion_rate": self.conversion_rate}

    def to_dict(self) -> dict[str, Any]:
        return {"budget": self.budget, "totals": self.totals(),
                "keywords": {k: asdict(v) for k, v in sorted(self.keywords.items())}}

    def to_records(self, schema: MetricSchema, as_of_round: int) -> list[PerformanceRecord]:
        return [PerformanceRecord(k, [s.metric(n) for n in schema.names], as_of_round)
                for k, s in sorted(self.keywords.items())]

    def to_csv(self, schema: MetricSchema) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["keyword", *schema.names])
        for k, s in sorted(self.keywords.items()):
            w.writerow([k, *[_num(s.metric(n)) for n in schema.names]])
        return buf.getvalue()


def _num(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(v)


def simulate_step(market: MarketModel, deployed: Sequence[str], daily_budget: int, days: int = 1,
                  total_cap: int | None = None) -> StepReport:
    """Serve the deployed keywords for ``days`` days.

    Each day keywords are visited in a seeded random order; impressions are
    Poisson around volume/30 times an impression share that shrinks with
    competition, clicks and conversions are binomial. Serving stops once the
    day's budget cannot pay for another click.
    """
    keys = sorted({canonical(k) for k in deployed})
    ceiling = daily_budget * days if total_cap is None else min(daily_budget * days, max(0, total_cap))
    report = StepReport(budget=int(ceiling))
    if not keys:
        return report
    profiles = {k: market.profile(k) for k in keys}
    for k in keys:
        report.keywords[k] = KeywordStats(search_volume=profiles[k].volume,
                                          competitor_score=profiles[k].competitor_score)
    left_total = ceiling
    cfg = market.config
    for _ in range(days):
        budget = min(daily_budget, left_total)
        spent_today = 0
        for idx in market.rng.permutation(len(keys)):
            key = keys[int(idx)]
            prof = profiles[key]
            share = cfg.max_share * (1.0 - 0.6 * prof.competition)
            impressions = int(market.rng.poisson(prof.volume / 30.0 * share))
            clicks = int(market.rng.binomial(impressions, market.ctr(prof.relevance)))
            affordable = (budget - spent_today) // prof.cpc
            if affordable <= 0:
                impressions, clicks = 0, 0
            elif clicks > affordable:
                impressions = max(affordable, impressions * affordable // clicks)
                clicks = affordable
            conversions = int(market.rng.binomial(clicks, market.cvr(prof.relevance)))
            cost = clicks * prof.cpc
            spent_today += cost
            st = report.keywords[key]
            st.impressions += impressions
            st.clicks += clicks
            st.conversions += conversions
            st.cost += cost
        left_total -= spent_today
    return report


class SimulatedPlatform:
    """Platform adapter: one observation = one period of ``days`` days."""

    def __init__(self, market: MarketModel, daily_budget: int = 4000, days: int = 3):
        self.market = market
        self.daily_budget = daily_budget
        self.days = days
        self.reports: list[StepReport] = []

    def observe(self, deployed: Sequence[str], round_index: int, budget_remaining: int | None) -> StepReport:
        # traffic for period t depends only on (seed, t), so resumed campaigns replay identically
        self.market.rng = np.random.default_rng([self.market.seed, 7919, round_index])
        report = simulate_step(self.market, deployed, self.daily_budget, self.days, budget_remaining)
        self.reports.append(report)
        return report

    def volume(self, keyword: str) -> int:
        return self.market.volume(keyword)


# --------------------------------------------------------------------------
# A/B harness

TABLE_METRICS = [
    ("Conversion", "conversions", True),
    ("Clicks", "clicks", True),
    ("Impression", "impressions", True),
    ("CTR", "ctr", True),
    ("C.V Rate", "conversion_rate", True),
    ("CPA", "cpa", False),
    ("CPC", "cpc", False),
    ("Cost", "cost", False),
]


@dataclass
class ArmResult:
    name: str
    reports: list[StepReport] = field(default_factory=list)
    failed: bool = False
    error: str = ""

    def totals(self) -> dict[str, float]:
        imp = sum(r.impressions for r in self.reports)
        clk = sum(r.clicks for r in self.reports)
        conv = sum(r.conversions for r in self.reports)
        cost = sum(r.cost for r in self.reports)
        return {"conversions": conv, "clicks": clk, "impressions": imp, "cost": cost,
                "ctr": _ratio(clk, imp), "conversion_rate": _ratio(conv, clk),
                "cpa": _ratio(cost, conv), "cpc": _ratio(cost, clk)}


@dataclass
class ABResult:
    a: ArmResult
    b: ArmResult
    seed: int

    def rows(self) -> list[dict[str, Any]]:
        ta, tb = self.a.totals(), self.b.totals()
        rows = []
        for label, key, higher_better in TABLE_METRICS:
            va, vb = ta[key], tb[key]
            gain = 0.0 if va == vb else (None if vb == 0 else 100.0 * (va - vb) / vb)
            rows.append({"metric": label, "a": va, "b": vb, "relative_gain_pct": gain,
                         "higher_is_better": higher_better})
        return rows

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", self.a.name, self.b.name, "relative_gain_pct"])
        for r in self.rows():
            g = "" if r["relative_gain_pct"] is None else f"{r['relative_gain_pct']:.2f}"
            w.writerow([r["metric"], _fmt_metric(r["metric"], r["a"]), _fmt_metric(r["metric"], r["b"]), g])
        return buf.getvalue()

    def format_table(self) -> str:
        lines = [f"{'Metric':<12}{self.a.name:>14}{self.b.name:>14}{'Relative Gain':>16}"]
        for r in self.rows():
            g = "n/a" if r["relative_gain_pct"] is None else f"{r['relative_gain_pct']:+.1f}%"
            lines.append(f"{r['metric']:<12}{_fmt_metric(r['metric'], r['a']):>14}"
                         f"{_fmt_metric(r['metric'], r['b']):>14}{g:>16}")
        return "\n".join(lines)


def _fmt_metric(label: str, v: float) -> str:
    if label in ("CTR", "C.V Rate"):
        return f"{100 * v:.2f}%"
    if label in ("CPA", "CPC"):
        return f"{v:.2f}"
    return str(int(v))


def run_arm(policy, market: MarketModel, rounds: int, daily_budget: int, days: int) -> ArmResult:
    arm = ArmResult(getattr(policy, "name", type(policy).__name__))
    last: StepReport | None = None
    try:
        for t in range(1, rounds + 1):
            deployed = policy.act(t, last)
            last = simulate_step(market, deployed, daily_budget, days)
            arm.reports.append(last)
    except Exception as exc:  # a failing arm must not take the other one down
        arm.failed = True
        arm.error = f"{type(exc).__name__}: {exc}"
    return arm


def ab_test(policy_a, policy_b, market_seed: int, rounds: int, daily_budget: int, days: int = 3,
            config: MarketConfig | None = None) -> ABResult:
    """Run both policies against independent markets built from the same seed."""
    cfg = config or MarketConfig()
    market_a = MarketModel(cfg, seed=market_seed)
    market_b = MarketModel(cfg, seed=market_seed)
    a = run_arm(policy_a, market_a, rounds, daily_budget, days)
    b = run_arm(policy_b, market_b, rounds, daily_budget, days)
    return ABResult(a, b, market_seed)
