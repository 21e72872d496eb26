"""Campaign loop: rank -> intent -> generate (tool feedback) -> reflect -> re-cluster -> deploy.

A round runs on a deep copy of the state and is committed only when it
finishes, so a transport failure mid-round leaves the persisted state as it
was.
"""

from __future__ import annotations

import copy
import json
import logging
import os
import statistics
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Protocol, Sequence

from .clustering import EmbeddingProvider, assign_new_keywords, recluster
from .domain import (
    BrandClass,
    CampaignState,
    Keyword,
    KeywordStatus,
    Outcome,
    PlatformUnavailable,
    ToolVerdict,
    canonical,
    save_state,
)
from .llm import (
    Gateway,
    GenerationResult,
    ParseError,
    RankedCluster,
    ReflectionVerdict,
    TemplateId,
    TransportError,
    intent_summaries,
    keyword_dict_literal,
    parse_generation,
    parse_query,
    parse_reflection,
    parse_yes_no,
    render,
    render_rank,
)
from .ranking import rank_inter, rank_intra, score_keywords
from .tools import (
    InfoStore,
    LexicalReport,
    SearchSource,
    VolumeProvider,
    category_reject,
    lexical_analysis,
    reject_reflection,
    repeated_filter,
    search,
    volume_check,
)

log = logging.getLogger(__name__)


@dataclass
class RoundConfig:
    horizon: int = 5  # campaign rounds T
    round_budget: int = 10  # validated keywords wanted per generation round
    deploy_cap: int = 50  # N
    tau: int = 100  # search-volume threshold
    theta: float = 0.6  # category rejection threshold
    lam: float | None = None  # cluster prompt threshold; None = median cluster score
    max_alg_iter: int = 3
    max_reflect_turns: int = 5
    per_key: int = 10
    strict_volume: bool = True
    lexical_min_count: int = 2
    substring_reject: bool = False
    recluster_every: int = 1
    ap_damping: float = 0.5
    ap_max_iter: int = 200
    ap_conv_iter: int = 15
    reflect: bool = True
    use_ranking: bool = True
    initial_query: str | None = None
    record_timing: bool = False

    def violations(self) -> list[str]:
        out = []
        if self.horizon < 1:
            out.append("horizon must be >= 1")
        if self.round_budget < 1:
            out.append("round_budget must be >= 1")
        if self.deploy_cap < 1:
            out.append("deploy_cap must be >= 1")
        if self.tau < 0:
            out.append("tau must be >= 0")
        if not 0.0 <= self.theta <= 1.0:
            out.append("theta must be in [0, 1]")
        if self.lam is not None and not 0.0 <= self.lam <= 1.0:
            out.append("lam must be in [0, 1]")
        if self.max_alg_iter < 1:
            out.append("max_alg_iter must be >= 1")
        if self.max_reflect_turns < 1:
            out.append("max_reflect_turns must be >= 1")
        if self.per_key < 1:
            out.append("per_key must be >= 1")
        if self.recluster_every < 1:
            out.append("recluster_every must be >= 1")
        if not 0.5 <= self.ap_damping < 1.0:
            out.append("ap_damping must be in [0.5, 1)")
        return out


@dataclass
class Toolkit:
    search_source: SearchSource
    volume_provider: VolumeProvider
    embeddings: EmbeddingProvider


class RoundAborted(RuntimeError):
    pass


class Platform(Protocol):
    def observe(self, deployed: Sequence[str], round_index: int, budget_remaining: int | None): ...


@dataclass
class RoundLog:
    round: int
    events: list[dict[str, Any]] = field(default_factory=list)
    calls: list[dict[str, Any]] = field(default_factory=list)
    flags: list[str] = field(default_factory=list)
    data: dict[str, Any] = field(default_factory=dict)

    def event(self, step: str, **detail: Any) -> None:
        self.events.append({"step": step, **detail})

    def steps(self) -> list[str]:
        return [e["step"] for e in self.events]

    def to_dict(self) -> dict[str, Any]:
        return {"round": self.round, "events": self.events, "calls": self.calls,
                "flags": self.flags, "data": self.data}


# --------------------------------------------------------------------------
# generation (tool-feedback loop)

@dataclass
class Candidate:
    text: str
    brand_class: BrandClass
    category: str

    @property
    def key(self) -> str:
        return canonical(self.text)


@dataclass
class GeneratorContext:
    """Everything the Generate call sees besides the static task prompt."""

    product_name: str
    info: InfoStore
    rank_prompt: str = ""
    reject_analysis: str = ""
    constraints: list[str] = field(default_factory=list)
    rejected_categories: list[str] = field(default_factory=list)
    replace: list[str] = field(default_factory=list)

    def user_message(self) -> str:
        parts = ["Product information:", self.info.text()]
        if self.rank_prompt:
            parts += ["", self.rank_prompt]
        if self.reject_analysis:
            parts += ["", "Analysis of rejected keywords:", self.reject_analysis]
        rules = list(self.constraints)
        for cat in self.rejected_categories:
            rules.append(f"Category '{cat}' has too many rejected keywords; drop it and generate keywords "
                         f"for a whole new category instead.")
        if rules:
            parts += ["", "Generation rules:"] + [f"- {r}" for r in rules]
        if self.replace:
            parts += ["", "Replace these keywords, which were judged weak: " + "; ".join(self.replace)]
        parts += ["", 'Optionally add a third key "Categories" mapping each keyword to the category '
                      "(cluster name) that motivated it."]
        return "\n".join(parts)


def _generate(ctx: GeneratorContext, gateway: Gateway, per_key: int) -> GenerationResult:
    system = render(TemplateId.GENERATE, {"product_name": ctx.product_name, "per_key": per_key}).rendered_text
    return gateway.ask(TemplateId.GENERATE, system, ctx.user_message(), lambda r: parse_generation(r, per_key))


def _is_enough(ctx: GeneratorContext, gateway: Gateway) -> bool:
    bundle = render(TemplateId.SUFFICIENCY, {"product_name": ctx.product_name, "information": ctx.info.text()})
    return gateway.ask(TemplateId.SUFFICIENCY, "", bundle.rendered_text, parse_yes_no)


def _next_query(ctx: GeneratorContext, gateway: Gateway) -> str:
    bundle = render(TemplateId.NEXT_QUERY, {"product_name": ctx.product_name, "information": ctx.info.text(),
                                            "queries": "; ".join(ctx.info.queries) or "(none)"})
    return gateway.ask(TemplateId.NEXT_QUERY, "", bundle.rendered_text, parse_query)


@dataclass
class Gauntlet:
    """The per-keyword filter chain: rejected set, deployed history, search volume."""

    rejected: set[str]
    history: set[str]
    volume: VolumeProvider
    tau: int
    strict: bool = True
    substring: bool = False

    def check(self, keyword: str) -> list[ToolVerdict]:
        """Verdicts in filter order; stops at the first rejection."""
        out = [reject_reflection(keyword, self.rejected, self.substring)]
        if out[-1].outcome is Outcome.REJECT:
            return out
        out.append(repeated_filter(keyword, self.history))
        if out[-1].outcome is Outcome.REJECT:
            return out
        out.append(volume_check(keyword, self.volume, self.tau, self.strict))
        return out

    @staticmethod
    def passed(verdicts: list[ToolVerdict]) -> bool:
        last = verdicts[-1]
        if last.tool_name != "volume_check":
            return False
        if last.outcome is Outcome.ANALYSIS:
            return bool(last.payload.get("accepted"))
        return last.outcome is Outcome.ACCEPT


@dataclass
class GenerationOutcome:
    validated: list[Candidate]
    low_volume: list[str]
    iterations: int
    shortfall: bool
    reports: list[LexicalReport] = field(default_factory=list)


def generation_round(state: CampaignState, config: RoundConfig, gateway: Gateway, toolkit: Toolkit,
                     ctx: GeneratorContext, rlog: RoundLog, exclude: Sequence[str] = ()) -> GenerationOutcome:
    """Iterative keyword generation with constraint feedback.

    Mutates ``state`` (category statistics, rejected categories) and ``ctx``
    (search info, generator constraints); callers pass a working copy.
    """
    q0 = config.initial_query or state.product_name or "product"
    rlog.event("search", query=q0, payload=search(q0, toolkit.search_source, ctx.info).payload)
    low_volume: list[str] = []  # the temporary store V
    low_seen: set[str] = set()
    validated: list[Candidate] = []
    reports: list[LexicalReport] = []
    gauntlet = Gauntlet(state.rejected_set | {canonical(e) for e in exclude}, state.history,
                        toolkit.volume_provider, config.tau, config.strict_volume, config.substring_reject)
    iterations = 0
    for it in range(1, config.max_alg_iter + 1):
        iterations = it
        enough = _is_enough(ctx, gateway)
        rlog.event("is_enough", iteration=it, value=enough)
        if not enough:
            q = _next_query(ctx, gateway)
            rlog.event("next_query", iteration=it, query=q)
            rlog.event("search", iteration=it, query=q, payload=search(q, toolkit.search_source, ctx.info).payload)
            continue

        gen = _generate(ctx, gateway, config.per_key)
        drafted = gen.all()
        rlog.event("generate", iteration=it, keywords=[k for k, _ in drafted])
        validated = []
        seen: set[str] = set()
        for text, brand in drafted:
            key = canonical(text)
            if key in seen:
                continue
            seen.add(key)
            cat = gen.category_of(text)
            verdicts = gauntlet.check(text)
            for v in verdicts:
                rlog.event(v.tool_name, iteration=it, keyword=text, outcome=v.outcome.value, reason=v.reason)
            stats = state.category_stats.setdefault(cat, [0, 0])
            stats[0] += 1
            if Gauntlet.passed(verdicts):
                validated.append(Candidate(text, BrandClass(brand), cat))
            elif verdicts[-1].tool_name == "volume_check":
                stats[1] += 1
                if key not in low_seen:
                    low_seen.add(key)
                    low_volume.append(text)

        if len(validated) >= config.round_budget:
            rlog.event("return", iteration=it, validated=len(validated))
            return GenerationOutcome(validated, low_volume, it, False, reports)

        report = lexical_analysis(low_volume, config.lexical_min_count)
        reports.append(report)
        rlog.event("lexical_analysis", iteration=it, report=report.to_dict())
        constraint = report.as_constraint()
        if constraint and constraint not in ctx.constraints:
            ctx.constraints.append(constraint)
        rlog.event("update_generator", iteration=it, constraints=len(ctx.constraints))
        dropped = category_reject(state.category_stats, config.theta)
        new_drops = sorted(c for c in dropped if c not in state.rejected_categories)
        rlog.event("category_reject", iteration=it, categories=sorted(dropped))
        for c in new_drops:
            state.rejected_categories.append(c)
            if c not in ctx.rejected_categories:
                ctx.rejected_categories.append(c)
        rlog.event("update_categories", iteration=it, new=new_drops)

    shortfall = len(validated) < config.round_budget
    if shortfall:
        rlog.flags.append("budget_unmet")
    rlog.event("return", iteration=iterations, validated=len(validated))
    return GenerationOutcome(validated, low_volume, iterations, shortfall, reports)


# --------------------------------------------------------------------------
# reflection

@dataclass
class ReflectionOutcome:
    kept: list[Candidate]
    scores: dict[str, int]
    replaced: list[str]
    turns: int
    capped: bool
    parse_failed: bool = False


def _history_text(history: Mapping[str, ReflectionVerdict]) -> str:
    if not history:
        return "(none)"
    return "\n".join(json.dumps(v.to_dict(), ensure_ascii=False) for v in history.values())


def reflect_refine(candidates: Sequence[Candidate], state: CampaignState, config: RoundConfig, gateway: Gateway,
                   regenerate: Callable[[list[str], int, set[str]], list[Candidate]],
                   rlog: RoundLog | None = None) -> ReflectionOutcome:
    """Score keywords with the reflector; regenerate the ones it wants replaced.

    Only keywords without a verdict yet are evaluated each turn. The loop
    stops when a turn produces no replace verdicts or after
    ``max_reflect_turns`` turns (flagged as capped). ``regenerate(replaced,
    n, exclude)`` returns up to ``n`` fresh candidates that already passed
    the filters; ``exclude`` holds every keyword replaced so far.
    """
    if not candidates:
        raise ValueError("nothing to reflect on")
    current = list(candidates)
    history: dict[str, ReflectionVerdict] = {}
    replaced: list[str] = []
    replaced_keys: set[str] = set()
    turns = 0
    capped = False
    parse_failed = False
    for turn in range(1, config.max_reflect_turns + 1):
        pending = [c for c in current if c.key not in history]
        if not pending:
            break
        turns = turn
        branded = [c.text for c in pending if c.brand_class is BrandClass.BRANDED]
        non_branded = [c.text for c in pending if c.brand_class is not BrandClass.BRANDED]
        bundle = render(TemplateId.REFLECT, {
            "generated_keywords": keyword_dict_literal(branded, non_branded),
            "product_information": state.product_info,
            "history_evaluation": _history_text(history),
        })
        try:
            verdicts = gateway.ask(TemplateId.REFLECT, "", bundle.rendered_text, parse_reflection, role="reflector")
        except ParseError:
            log.warning("reflection reply unparseable; keeping current keyword set")
            parse_failed = True
            if rlog is not None:
                rlog.flags.append("reflection_parse_failed")
            break
        pending_keys = {c.key for c in pending}
        for v in verdicts:
            if canonical(v.keyword) in pending_keys:
                history[canonical(v.keyword)] = v
        to_replace = [c for c in pending if c.key in history and history[c.key].suggestion == "replace"]
        if rlog is not None:
            rlog.event("reflect", turn=turn, verdicts=[history[c.key].to_dict() for c in pending if c.key in history])
        if not to_replace:
            if all(c.key in history for c in current):
                break
            continue
        for c in to_replace:
            replaced.append(c.text)
            replaced_keys.add(c.key)
        current = [c for c in current if c.key not in replaced_keys]
        fresh = regenerate([c.text for c in to_replace], len(to_replace), set(replaced_keys))
        have = {c.key for c in current}
        fresh = [f for f in fresh if f.key not in have and f.key not in replaced_keys]
        current.extend(fresh)
        if rlog is not None:
            rlog.event("regenerate", turn=turn, replaced=[c.text for c in to_replace],
                       added=[f.text for f in fresh])
        if turn == config.max_reflect_turns:
            capped = True
    else:
        capped = True
    if any(c.key not in history or history[c.key].suggestion != "keep" for c in current) and not parse_failed:
        capped = True
    if capped and rlog is not None:
        rlog.flags.append("reflection_capped")
    scores = {c.key: history[c.key].score for c in current if c.key in history}
    return ReflectionOutcome(current, scores, replaced, turns, capped, parse_failed)


def propose_keywords(work: CampaignState, config: RoundConfig, gateway: Gateway, toolkit: Toolkit,
                     ctx: GeneratorContext, rlog: RoundLog
                     ) -> tuple[GenerationOutcome, list[Candidate], ReflectionOutcome | None]:
    """Tool-checked generation followed by the reflection loop.

    Keywords the reflector replaces are recorded as Rejected and join the
    rejected set of ``work``.
    """
    t = work.round
    gen = generation_round(work, config, gateway, toolkit, ctx, rlog)
    candidates = gen.validated
    rlog.data["generated"] = [c.text for c in candidates]
    if not candidates or not config.reflect:
        return gen, candidates, None
    first = {c.key for c in candidates}

    def regenerate(replaced: list[str], n: int, exclude: set[str]) -> list[Candidate]:
        rctx = copy.copy(ctx)
        rctx.replace = list(replaced)
        res = _generate(rctx, gateway, config.per_key)
        gauntlet = Gauntlet(work.rejected_set | exclude, work.history, toolkit.volume_provider,
                            config.tau, config.strict_volume, config.substring_reject)
        out = []
        for text, brand in res.all():
            if len(out) >= n:
                break
            if canonical(text) in first:
                continue
            verdicts = gauntlet.check(text)
            for v in verdicts:
                rlog.event(v.tool_name, keyword=text, outcome=v.outcome.value, reason=v.reason, stage="reflect")
            if Gauntlet.passed(verdicts):
                out.append(Candidate(text, BrandClass(brand), res.category_of(text)))
        return out

    refl = reflect_refine(candidates, work, config, gateway, regenerate, rlog)
    for text in refl.replaced:
        if work.keyword(text) is None:
            kw = Keyword(text, status=KeywordStatus.CANDIDATE, created_round=t)
            kw.transition(KeywordStatus.REJECTED)
            work.keywords.append(kw)
        work.add_rejected(text)
    rlog.data["reflection"] = {"turns": refl.turns, "capped": refl.capped, "replaced": refl.replaced,
                               "scores": dict(sorted(refl.scores.items()))}
    return gen, refl.kept, refl


# --------------------------------------------------------------------------
# deployment

@dataclass
class DeploymentDiff:
    deploy: list[str]
    retire: list[str]

    @property
    def empty(self) -> bool:
        return not self.deploy and not self.retire


def select_deployment(active: Sequence[str], candidates: Sequence[str], scores: Mapping[str, float], cap: int,
                      impressions: Mapping[str, float] | None = None) -> DeploymentDiff:
    """Fill free slots, then swap candidates for replaceable active keywords.

    An active keyword is replaceable when it had zero impressions last period
    or sits in the bottom quartile (floor(n/4) lowest) by score. Replaceable
    keywords go lowest score first; ties break on keyword text. Candidates
    are taken best-scored first (unscored ones keep their given order).
    """
    active = list(dict.fromkeys(canonical(a) for a in active))
    if len(active) > cap:
        raise ValueError(f"{len(active)} active keywords exceed cap {cap}")
    act = set(active)
    cands = [c for c in dict.fromkeys(canonical(c) for c in candidates) if c not in act]
    order = {c: i for i, c in enumerate(cands)}
    cands.sort(key=lambda c: (-scores.get(c, float("-inf")), order[c]) if c in scores else (float("inf"), order[c]))
    free = cap - len(active)
    deploy = cands[:free]
    rest = cands[free:]
    if not rest:
        return DeploymentDiff(deploy, [])
    by_score = sorted(active, key=lambda a: (scores.get(a, 0.0), a))
    eligible = set(by_score[: len(active) // 4])
    if impressions is not None:
        eligible |= {a for a in active if impressions.get(a, 0) == 0}
    eligible_sorted = [a for a in by_score if a in eligible]
    n = min(len(rest), len(eligible_sorted))
    return DeploymentDiff(deploy + rest[:n], eligible_sorted[:n])


# --------------------------------------------------------------------------
# campaign loop

def _mean_performance(state: CampaignState, keys: Sequence[str]) -> dict[str, list[float]]:
    """Per-keyword metric vector averaged over the periods it was observed."""
    sums: dict[str, list[float]] = {k: [0.0] * state.schema.m for k in keys}
    counts = {k: 0 for k in keys}
    for rec in state.performance:
        if rec.keyword_id in sums:
            counts[rec.keyword_id] += 1
            acc = sums[rec.keyword_id]
            for d, v in enumerate(rec.values):
                acc[d] += v
    return {k: [v / counts[k] for v in sums[k]] if counts[k] else sums[k] for k in keys}


def _metric_map(state: CampaignState, vec: Sequence[float]) -> dict[str, float]:
    return dict(zip(state.schema.names, vec))


def _record_observation(state: CampaignState, report, round_index: int) -> dict[str, float]:
    """Fold a platform report into the performance history; returns last-period impressions."""
    recs = report.to_records(state.schema, round_index) if hasattr(report, "to_records") else report
    deployed = {k.key for k in state.deployed}
    impressions: dict[str, float] = {}
    idx = state.schema.names.index("Impression") if "Impression" in state.schema.names else None
    for rec in recs:
        if rec.keyword_id not in deployed:
            continue
        state.performance.append(rec)
        if idx is not None:
            impressions[rec.keyword_id] = rec.values[idx]
    cost = int(getattr(report, "cost", 0))
    state.budget_spent += cost
    return impressions if idx is not None else {}


def run_round(state: CampaignState, config: RoundConfig, gateway: Gateway, toolkit: Toolkit,
              platform: Platform | None) -> tuple[CampaignState, RoundLog]:
    """Run round ``state.round`` on a copy of ``state`` and return the new state.

    Raises RoundAborted (original state untouched) on backend transport failure.
    """
    work = copy.deepcopy(state)
    t = work.round
    rlog = RoundLog(t)
    gateway.drain_calls()
    try:
        _run_round(work, config, gateway, toolkit, platform, rlog)
    except TransportError as exc:
        rlog.calls = [c.to_dict() for c in gateway.drain_calls()]
        raise RoundAborted(f"round {t} aborted: {exc}") from exc
    rlog.calls = [c.to_dict() for c in gateway.drain_calls()]
    work.round = t + 1
    return work, rlog


def _run_round(work: CampaignState, config: RoundConfig, gateway: Gateway, toolkit: Toolkit,
               platform: Platform | None, rlog: RoundLog) -> None:
    t = work.round
    # 1. observe the previous period
    impressions: dict[str, float] = {}
    deployed_keys = [k.key for k in work.deployed]
    if platform is not None:
        report = platform.observe(deployed_keys, t, work.budget_cap - work.budget_spent)
        impressions = _record_observation(work, report, t)
        rlog.data["observation"] = report.to_dict() if hasattr(report, "to_dict") else None
        rlog.event("observe", keywords=len(deployed_keys), cost=int(getattr(report, "cost", 0)))

    # 2. multi-objective ranking
    scores: dict[str, float] = {}
    ranked: list[RankedCluster] = []
    means: dict[str, list[float]] = {}
    if deployed_keys:
        means = _mean_performance(work, deployed_keys)
        res = score_keywords(means, work.schema)
        scores = res.scores
        rlog.data["weights"] = [round(float(w), 12) for w in res.weights.w]
        rlog.data["scores"] = {k: round(v, 12) for k, v in sorted(scores.items())}
        if work.clusters:
            inter = rank_inter(work.clusters, scores)
            by_id = {c.id: c for c in work.clusters}
            for cid, s in inter:
                by_id[cid].score = s
            # 3. intent analysis
            metrics = {k: _metric_map(work, v) for k, v in means.items()}
            intent_summaries(work.clusters, work.product_name, work.product_info, metrics, gateway)
            rlog.event("intent", clusters=[c.id for c in sorted(work.clusters, key=lambda c: c.id)])
            ranked = [RankedCluster(cid, s, rank_intra(by_id[cid], scores), by_id[cid].intent_summary)
                      for cid, s in inter]
            rlog.event("rank", clusters=[[cid, round(s, 12)] for cid, s in inter])

    # 4. ranking-aware prompt
    lam = config.lam
    if lam is None:
        lam = statistics.median([r.score for r in ranked]) if ranked else 0.0
    rank_prompt = render_rank(ranked, lam).rendered_text if (ranked and config.use_ranking) else ""
    rlog.data["lambda"] = lam

    info = InfoStore()
    info.append("manual", work.product_info)
    ctx = GeneratorContext(work.product_name, info, rank_prompt,
                           rejected_categories=list(work.rejected_categories))
    if work.rejected:
        ctx.reject_analysis = _reject_analysis(work, gateway)
        rlog.event("reject_analysis", keywords=len(work.rejected))

    # 5-6. generation with tool feedback, then reflection
    gen, candidates, refl = propose_keywords(work, config, gateway, toolkit, ctx, rlog)

    # 7. re-clustering (AP over all, Assign prompt for new keywords)
    new_keys = [c.key for c in candidates]
    for c in candidates:
        work.keywords.append(Keyword(c.text, c.brand_class, KeywordStatus.CANDIDATE, t, category=c.category))
    if new_keys or deployed_keys:
        if (t - 1) % config.recluster_every == 0:
            rc = recluster(deployed_keys, new_keys, work.clusters, toolkit.embeddings, work.product_info,
                           gateway, work.new_cluster_id, config.ap_damping, config.ap_max_iter, config.ap_conv_iter)
            work.clusters = rc.clusters
            rlog.event("recluster", converged=rc.ap_converged, iterations=rc.ap_iterations,
                       assignments=[a.to_dict() for a in rc.assignments])
        else:
            vecs = toolkit.embeddings.embed(deployed_keys + new_keys)
            vectors = {k: vecs[i] for i, k in enumerate(deployed_keys + new_keys)}
            logs = assign_new_keywords(new_keys, work.clusters, vectors, work.product_info, gateway,
                                       work.new_cluster_id)
            rlog.event("assign", assignments=[a.to_dict() for a in logs])

    # 8. deployment
    diff = select_deployment(deployed_keys, new_keys, scores, min(config.deploy_cap, work.per_round_cap),
                             impressions if platform is not None else None)
    for key in diff.retire:
        kw = work.keyword(key)
        kw.transition(KeywordStatus.RETIRED)
        work.add_rejected(key)
    for key in diff.deploy:
        work.keyword(key).transition(KeywordStatus.DEPLOYED)
    keep = {k.key for k in work.deployed}
    work.keywords = [k for k in work.keywords if k.status is not KeywordStatus.CANDIDATE]
    for cl in work.clusters:
        cl.keyword_ids = [k for k in cl.keyword_ids if k in keep]
    work.clusters = [c for c in work.clusters if c.keyword_ids]
    for cl in work.clusters:
        for k in cl.keyword_ids:
            work.keyword(k).cluster_id = cl.id
    rlog.event("deploy", deploy=diff.deploy, retire=diff.retire)
    rlog.data["deployed"] = sorted(keep)
    summary = {"round": t, "deployed": len(keep), "new": len(diff.deploy), "retired": len(diff.retire),
               "shortfall": gen.shortfall, "budget_spent": work.budget_spent,
               "objective": _objective(work, t)}
    work.reports.append(summary)
    rlog.data["summary"] = summary


def _objective(state: CampaignState, t: int) -> float:
    """Weighted performance of this round's observation (fixed weights or uniform)."""
    w = state.schema.weights or [1.0 / state.schema.m] * state.schema.m
    total = 0.0
    for rec in state.performance:
        if rec.as_of_round == t:
            total += sum(wi * (v if o.value == "Benefit" else -v)
                         for wi, v, o in zip(w, rec.values, state.schema.orientations))
    return round(total, 9)


def _reject_analysis(state: CampaignState, gateway: Gateway) -> str:
    rejected = sorted(state.rejected)
    perf = state.cumulative_performance(rejected)
    lines = [f"{k}: " + ", ".join(f"{n} {v:g}" for n, v in zip(state.schema.names, perf[k]))
             for k in rejected if k in perf]
    bundle = render(TemplateId.REJECT_ANALYSIS, {
        "product_name": state.product_name,
        "rejected_keywords": "\n".join(rejected),
        "performance": "\n".join(lines) or "(no performance recorded)",
    })
    return gateway.ask(TemplateId.REJECT_ANALYSIS, "", bundle.rendered_text, lambda r: r.strip())


def append_log(path: str | os.PathLike, rlog: RoundLog) -> None:
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(rlog.to_dict(), sort_keys=True, ensure_ascii=False) + "\n")


@dataclass
class CampaignResult:
    state: CampaignState
    logs: list[RoundLog]
    aborted: bool = False
    error: str = ""


def run_campaign(state: CampaignState, config: RoundConfig, gateway: Gateway, toolkit: Toolkit,
                 platform: Platform | None, *, rounds: int | None = None, state_path: str | os.PathLike | None = None,
                 log_path: str | os.PathLike | None = None) -> CampaignResult:
    """Run rounds ``state.round .. horizon`` (or at most ``rounds`` of them).

    The state file is rewritten atomically after every committed round and
    the round log appended as one JSON line.
    """
    logs: list[RoundLog] = []
    done = 0
    while state.round <= state.horizon and (rounds is None or done < rounds):
        try:
            state, rlog = run_round(state, config, gateway, toolkit, platform)
        except RoundAborted as exc:
            log.error("%s", exc)
            return CampaignResult(state, logs, True, str(exc))
        except PlatformUnavailable as exc:
            log.warning("round %d skipped: platform unavailable (%s)", state.round, exc)
            state = copy.deepcopy(state)
            rlog = RoundLog(state.round, flags=["platform_unavailable"])
            state.round += 1
        logs.append(rlog)
        if state_path is not None:
            save_state(state, state_path)
        if log_path is not None:
            append_log(log_path, rlog)
        done += 1
    return CampaignResult(state, logs)

