"""Keyword policies for the simulator A/B harness.

A policy answers ``act(t, last_report) -> deployed keywords`` once per
period; ``last_report`` is the previous period's StepReport (None at t=1).
``propose`` exposes the keywords a policy newly emits in a period.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .clustering import HashEmbedding
from .domain import CampaignState, KeywordStatus, canonical, default_schema
from .llm import Gateway, TemplateId, parse_generation, render
from .synthetic import SyntheticLLM
from .orchestrator import RoundConfig, Toolkit, run_round
from .simulator import PRODUCT_INFO, MarketModel, StepReport, ab_test
from .tools import FixtureSearch, VolumeProvider


class StaticPolicy:
    """Deploys one fixed keyword list for the whole horizon."""

    name = "Static"

    def __init__(self, keywords: Sequence[str], cap: int = 50):
        self.keywords = list(dict.fromkeys(canonical(k) for k in keywords))[:cap]

    def propose(self, t: int, last_report: StepReport | None = None) -> list[str]:
        return list(self.keywords) if t == 1 else []

    def act(self, t: int, last_report: StepReport | None) -> list[str]:
        return list(self.keywords)


class RandomPolicy:
    """Uniform sample of ``n`` keywords from a pool, redrawn every period."""

    name = "Random"

    def __init__(self, pool: Sequence[str], n: int, seed: int = 0):
        if n > len(pool):
            raise ValueError("n exceeds pool size")
        self.pool = list(pool)
        self.n = n
        self.seed = seed

    def propose(self, t: int, last_report: StepReport | None = None) -> list[str]:
        rng = np.random.default_rng([self.seed, t])
        idx = rng.choice(len(self.pool), size=self.n, replace=False)
        return [self.pool[int(i)] for i in sorted(idx)]

    def act(self, t: int, last_report: StepReport | None) -> list[str]:
        return self.propose(t, last_report)


class OraclePolicy:
    """Cheats: deploys the highest-relevance candidates whose volume clears tau."""

    name = "Oracle"

    def __init__(self, market: MarketModel, candidates: Sequence[str], n: int = 50, tau: int = 100):
        ok = [c for c in dict.fromkeys(canonical(c) for c in candidates) if market.volume(c) >= tau]
        ok.sort(key=lambda k: (-market.relevance(k), k))
        self.keywords = ok[:n]

    def propose(self, t: int, last_report: StepReport | None = None) -> list[str]:
        return list(self.keywords) if t == 1 else []

    def act(self, t: int, last_report: StepReport | None) -> list[str]:
        return list(self.keywords)


PERF_METRICS = ("Click", "Conversion", "Cost", "Impression")


def performance_block(report: StepReport | None, keys: Sequence[str]) -> str:
    """Raw per-keyword metrics, one line per keyword, every metric named."""
    lines = []
    for k in keys:
        st = report.keywords.get(k) if report is not None else None
        vals = ", ".join(f"{m} {int(st.metric(m)) if st else 0}" for m in PERF_METRICS)
        lines.append(f"{k}: {vals}")
    return "\n".join(lines)


class ManyShotPolicy:
    """Generator prompted with every deployed keyword and its raw performance.

    No ranking, clustering, tools or reflection: new keywords fill free
    slots, then replace the keywords with the fewest clicks.
    """

    name = "ManyShot"

    def __init__(self, gateway: Gateway, product_name: str, product_info: str, cap: int = 50,
                 per_key: int = 10):
        self.gateway = gateway
        self.product_name = product_name
        self.product_info = product_info
        self.cap = cap
        self.per_key = per_key
        self.deployed: list[str] = []
        self.seen: set[str] = set()
        self.last_prompt = ""

    def prompt(self, last_report: StepReport | None) -> tuple[str, str]:
        system = render(TemplateId.GENERATE, {"product_name": self.product_name, "per_key": self.per_key}).rendered_text
        user = "\n".join(["Product information:", self.product_info, "", "Keyword performance:",
                          performance_block(last_report, self.deployed) or "(none yet)"])
        return system, user

    def propose(self, t: int, last_report: StepReport | None = None) -> list[str]:
        system, user = self.prompt(last_report)
        self.last_prompt = user
        res = self.gateway.ask(TemplateId.GENERATE, system, user, lambda r: parse_generation(r, self.per_key))
        out = []
        for text, _ in res.all():
            key = canonical(text)
            if key not in self.seen:
                self.seen.add(key)
                out.append(key)
        return out

    def act(self, t: int, last_report: StepReport | None) -> list[str]:
        new = self.propose(t, last_report)
        free = self.cap - len(self.deployed)
        self.deployed += new[:free]
        rest = new[free:]
        if rest and last_report is not None:
            clicks = {k: last_report.keywords[k].clicks if k in last_report.keywords else 0 for k in self.deployed}
            worst = sorted(self.deployed, key=lambda k: (clicks[k], k))[: min(len(rest), len(self.deployed) // 4)]
            self.deployed = [k for k in self.deployed if k not in set(worst)] + rest[: len(worst)]
        return list(self.deployed)


class _ReportFeed:
    """Platform adapter returning the report the A/B harness hands to the policy."""

    def __init__(self) -> None:
        self.report: StepReport | None = None

    def observe(self, deployed, round_index, budget_remaining) -> StepReport:
        return self.report if self.report is not None else StepReport()


@dataclass
class OMSPolicy:
    """The full pipeline as a policy; ``adapt=False`` freezes it after round 1."""

    gateway: Gateway
    volume: VolumeProvider
    product_name: str
    product_info: str
    config: RoundConfig = field(default_factory=RoundConfig)
    adapt: bool = True
    name: str = "OMS"

    def __post_init__(self) -> None:
        self.state = CampaignState(product_info=self.product_info, product_name=self.product_name,
                                   horizon=10 ** 6, per_round_cap=self.config.deploy_cap,
                                   budget_cap=10 ** 12, schema=default_schema())
        self.toolkit = Toolkit(FixtureSearch({}), self.volume, HashEmbedding(32, seed=0))
        self.feed = _ReportFeed()
        self.logs = []
        self.history: list[list[str]] = []

    def propose(self, t: int, last_report: StepReport | None = None) -> list[str]:
        before = {k.key for k in self.state.deployed}
        self.act(t, last_report)
        return sorted({k.key for k in self.state.deployed} - before)

    def act(self, t: int, last_report: StepReport | None) -> list[str]:
        if t == 1 or self.adapt:
            self.feed.report = last_report
            self.state, rlog = run_round(self.state, self.config, self.gateway, self.toolkit, self.feed)
            self.logs.append(rlog)
        deployed = sorted(k.key for k in self.state.by_status(KeywordStatus.DEPLOYED))
        self.history.append(deployed)
        return deployed


def baseline_policies(gateway: Gateway, pool: Sequence[str], product_name: str, product_info: str,
                      n: int = 50, seed: int = 0, static_keywords: Sequence[str] | None = None) -> dict:
    """Static, Random and ManyShot baselines sharing one gateway."""
    if static_keywords is None:
        probe = ManyShotPolicy(gateway, product_name, product_info, n)
        static_keywords = probe.propose(1, None)
    return {
        "Static": StaticPolicy(static_keywords, n),
        "Random": RandomPolicy(pool, min(n, len(pool)), seed),
        "ManyShot": ManyShotPolicy(gateway, product_name, product_info, n),
    }


def closed_loop_trial(seed: int, rounds: int = 10, daily_budget: int = 4000, days: int = 3,
                      pool_size: int = 200, n: int = 50) -> dict[str, int]:
    """Cumulative conversions of OMS, Random and frozen OMS on one seeded market.

    OMS runs on the synthetic backend. Random samples ``n`` keywords per
    period from a ``pool_size`` vocabulary pool; the frozen variant keeps its
    round-1 keywords for the whole horizon.
    """
    def oms(adapt: bool) -> OMSPolicy:
        return OMSPolicy(Gateway(SyntheticLLM()), MarketModel(seed=seed), "Alpha camera", PRODUCT_INFO,
                         adapt=adapt, name="OMS" if adapt else "Static")

    market = MarketModel(seed=seed)
    vs_random = ab_test(oms(True), RandomPolicy(market.keyword_pool(pool_size, seed), n, seed), seed, rounds,
                        daily_budget, days)
    vs_static = ab_test(oms(True), oms(False), seed, rounds, daily_budget, days)
    return {"oms": int(vs_random.a.totals()["conversions"]),
            "random": int(vs_random.b.totals()["conversions"]),
            "oms_rerun": int(vs_static.a.totals()["conversions"]),
            "static": int(vs_static.b.totals()["conversions"])}
