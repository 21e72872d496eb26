
from conftest import Router, gen_reply
from oms.llm import Gateway
from oms.policies import (
    ManyShotPolicy,
    OMSPolicy,
    OraclePolicy,
    RandomPolicy,
    StaticPolicy,
    baseline_policies,
    performance_block,
)
from oms.simulator import MarketModel, PRODUCT_INFO, simulate_step
from oms.synthetic import SyntheticLLM


def test_static_emits_once():
    p = StaticPolicy(["A", "a", "b"])
    assert p.propose(1) == ["a", "b"] and p.propose(2) == [] and p.act(5, None) == ["a", "b"]


def test_random_is_reproducible_and_varies_by_period():
    pool = [f"k{i}" for i in range(10)]
    a, b = RandomPolicy(pool, 5, seed=1), RandomPolicy(pool, 5, seed=1)
    assert a.propose(1) == b.propose(1) and len(set(a.propose(1))) == 5
    assert a.propose(1) != a.propose(2)


def test_oracle_prefers_relevant_keywords_with_volume():
    m = MarketModel(seed=42)
    cands = ["mirrorless camera", "pizza recipe", "camera autofocus", "bionz xr c2pa"]
    p = OraclePolicy(m, cands, n=2, tau=100)
    assert all(m.volume(k) >= 100 for k in p.keywords)
    assert "pizza recipe" not in p.keywords


def test_performance_block_names_every_metric():
    m = MarketModel(seed=1)
    rep = simulate_step(m, ["camera lens"], 4000)
    line = performance_block(rep, ["camera lens", "unseen"]).splitlines()
    for name in ("Click", "Conversion", "Cost", "Impression"):
        assert name in line[0]
    assert line[1] == "unseen: Click 0, Conversion 0, Cost 0, Impression 0"


def test_manyshot_prompt_carries_raw_metrics():
    router = Router(generate=[gen_reply([], ["camera lens", "fast camera"]), gen_reply([], ["video kit"])])
    p = ManyShotPolicy(Gateway(router), "Alpha camera", "info", cap=2)
    first = p.act(1, None)
    rep = simulate_step(MarketModel(seed=1), first, 4000)
    p.act(2, rep)
    assert "Keyword performance:" in p.last_prompt and "camera lens: Click" in p.last_prompt


def test_oms_policy_adapts_and_frozen_variant_does_not():
    live = OMSPolicy(Gateway(SyntheticLLM()), MarketModel(seed=3), "Alpha camera", PRODUCT_INFO)
    frozen = OMSPolicy(Gateway(SyntheticLLM()), MarketModel(seed=3), "Alpha camera", PRODUCT_INFO, adapt=False)
    m1, m2 = MarketModel(seed=3), MarketModel(seed=3)
    last1 = last2 = None
    for t in (1, 2, 3):
        last1 = simulate_step(m1, live.act(t, last1), 4000, 3)
        last2 = simulate_step(m2, frozen.act(t, last2), 4000, 3)
    assert frozen.history[0] == frozen.history[-1]
    assert live.history[0] != live.history[-1]
    assert len(live.logs) == 3 and len(frozen.logs) == 1


def test_baselines_share_gateway():
    router = Router(generate=gen_reply([], ["camera lens", "fast camera"]))
    got = baseline_policies(Gateway(router), [f"k{i}" for i in range(20)], "Alpha camera", "info", n=5)
    assert set(got) == {"Static", "Random", "ManyShot"}
    assert got["Static"].keywords == ["camera lens", "fast camera"]
