"""Helpers shared by the orchestrator tests and the acceptance suite."""

import json
import random

from conftest import Router, gen_reply
from oms.clustering import HashEmbedding
from oms.domain import CampaignState, Keyword, KeywordStatus, canonical
from oms.llm import Gateway
from oms.orchestrator import GeneratorContext, RoundConfig, RoundLog, Toolkit, generation_round
from oms.tools import FixtureSearch, FixtureVolume, InfoStore

TOOLS = ("reject_reflection", "repeated_filter", "volume_check")
POST = ("lexical_analysis", "update_generator", "category_reject", "update_categories")


def make_state(rejected=(), deployed=(), info="Alpha camera with fast autofocus"):
    kws = [Keyword(k, status=KeywordStatus.DEPLOYED) for k in deployed]
    return CampaignState(product_info=info, product_name="Alpha camera", keywords=kws, rejected=list(rejected))


def make_toolkit(volumes, default=0):
    return Toolkit(FixtureSearch({"alpha camera": ["Alpha camera: 24 MP sensor"]}),
                   FixtureVolume(volumes, default=default), HashEmbedding(8))


def run_generation(router, state, volumes, **cfg):
    config = RoundConfig(**cfg)
    ctx = GeneratorContext(state.product_name, InfoStore())
    rlog = RoundLog(state.round)
    out = generation_round(state, config, Gateway(router), make_toolkit(volumes), ctx, rlog)
    return out, rlog, ctx, config


def contract_violations(out, rlog, router, state_before_rejected, history, volumes, config):
    """Everything the generation loop promises about one run, as a list of broken promises."""
    bad = []
    keys = [c.key for c in out.validated]
    rej = {canonical(r) for r in state_before_rejected}
    hist = {canonical(h) for h in history}
    for k in keys:
        if k in rej:
            bad.append(f"{k} is rejected")
        if k in hist:
            bad.append(f"{k} already deployed")
        if volumes.get(k, 0) < config.tau:
            bad.append(f"{k} below tau")
    if out.iterations > config.max_alg_iter:
        bad.append(f"{out.iterations} iterations > {config.max_alg_iter}")
    bad += order_violations(rlog.events, config)
    # the LLM calls must mirror the logged steps
    llm_steps = [s for s in rlog.steps() if s in ("is_enough", "next_query", "generate")]
    kinds = {"enough": "is_enough", "query": "next_query", "generate": "generate"}
    called = [kinds[k] for k in router.kinds() if k in kinds]
    if called != llm_steps:
        bad.append(f"LLM call order {called} != logged {llm_steps}")
    return bad


def order_violations(events, config):
    """Walk the event list as the loop's state machine."""
    steps = [e["step"] for e in events]
    bad = []
    i = 0

    def expect(name):
        nonlocal i
        if i >= len(steps) or steps[i] != name:
            bad.append(f"expected {name} at {i}, got {steps[i] if i < len(steps) else 'end'}")
            return False
        i += 1
        return True

    if not expect("search"):
        return bad
    iterations = 0
    while i < len(steps) and steps[i] == "is_enough":
        iterations += 1
        value = events[i]["value"]
        i += 1
        if not value:
            if not (expect("next_query") and expect("search")):
                return bad
            continue
        if not expect("generate"):
            return bad
        while i < len(steps) and steps[i] in TOOLS:
            # per keyword: a prefix of the filter chain, ending at the first reject
            j = 0
            while i < len(steps) and steps[i] in TOOLS and steps[i] == TOOLS[j]:
                outcome = events[i]["outcome"]
                i += 1
                j += 1
                if outcome == "Reject" or j == len(TOOLS):
                    break
        if i < len(steps) and steps[i] == "return":
            i += 1
            break
        for name in POST:
            if not expect(name):
                return bad
    else:
        if not expect("return"):
            return bad
    if iterations > config.max_alg_iter:
        bad.append("too many iterations")
    if i != len(steps):
        bad.append(f"trailing steps {steps[i:]}")
    return bad


VOCAB = ["lens", "camera", "sensor", "fast", "cheap", "pro", "video", "zoom", "kit", "body", "grip", "bag"]


def fuzz_case(seed):
    """A random scripted world: volumes, rejected set, history and replies."""
    rng = random.Random(seed)
    pool = sorted({" ".join(rng.sample(VOCAB, rng.randint(1, 3))) for _ in range(40)})
    volumes = {k: rng.choice([0, 50, 99, 100, 150, 1000]) for k in pool}
    rejected = rng.sample(pool, rng.randint(0, 6))
    history = rng.sample([k for k in pool if k not in rejected], rng.randint(0, 6))
    cats = ["a", "b", "c"]

    def generate(system, user):
        r = random.Random(f"{seed}:{len(user)}:{user.count('Generation rules')}")
        picks = r.sample(pool, min(len(pool), r.randint(2, 12)))
        half = len(picks) // 2
        return gen_reply(picks[:half], picks[half:], {k: r.choice(cats) for k in picks})

    enough = [rng.choice(["YES", "NO", "yes"]) for _ in range(6)] + ["YES"]
    router = Router(generate=generate, enough=enough, query="alpha camera")
    cfg = dict(round_budget=rng.randint(1, 10), max_alg_iter=rng.randint(1, 4), tau=100,
               theta=rng.choice([0.3, 0.6, 0.9]), substring_reject=rng.random() < 0.3,
               strict_volume=True, per_key=10)
    return router, pool, volumes, rejected, history, cfg


def run_fuzz_case(seed):
    router, pool, volumes, rejected, history, cfg = fuzz_case(seed)
    state = make_state(rejected=rejected, deployed=history)
    out, rlog, ctx, config = run_generation(router, state, volumes, **cfg)
    return contract_violations(out, rlog, router, rejected, history, volumes, config)


def dump(obj):
    return json.dumps(obj, sort_keys=True)
