import io

import pytest
from hypothesis import given, strategies as st

from oms.domain import (
    BrandClass,
    CampaignState,
    Cluster,
    CSVFormatError,
    Keyword,
    KeywordStatus,
    MetricSchema,
    Outcome,
    PerformanceRecord,
    ToolVerdict,
    WeightMode,
    canonical,
    default_schema,
    dumps_state,
    load_state,
    loads_state,
    read_performance_csv,
    save_state,
    validate_state,
    write_performance_csv,
)


def test_canonical_folds_case_and_whitespace():
    assert canonical("  Mirrorless   CAMERA ") == "mirrorless camera"


def test_fresh_state_is_valid():
    assert validate_state(CampaignState(product_info="x")) == []


def test_case_variant_duplicate_is_one_violation():
    s = CampaignState(product_info="x", keywords=[Keyword("Camera"), Keyword("camera")])
    assert len(validate_state(s)) == 1


def test_deploy_cap_violation():
    kws = [Keyword(f"kw {i}", status=KeywordStatus.DEPLOYED) for i in range(51)]
    s = CampaignState(product_info="x", per_round_cap=50, keywords=kws)
    v = validate_state(s)
    assert len(v) == 1 and "51" in v[0]


def test_budget_and_rejected_deployment_violations():
    s = CampaignState(product_info="x", budget_cap=10, budget_spent=11,
                      keywords=[Keyword("a", status=KeywordStatus.DEPLOYED)], rejected=["a"])
    v = validate_state(s)
    assert any("budget" in x for x in v) and any("rejected" in x for x in v)


def test_overlapping_clusters_violate_partition():
    s = CampaignState(product_info="x", keywords=[Keyword("a"), Keyword("b")],
                      clusters=[Cluster("C1", ["a", "b"]), Cluster("C2", ["b"])])
    assert any("in clusters" in x for x in validate_state(s))


@pytest.mark.parametrize("src,dst,ok", [
    (KeywordStatus.CANDIDATE, KeywordStatus.DEPLOYED, True),
    (KeywordStatus.CANDIDATE, KeywordStatus.REJECTED, True),
    (KeywordStatus.DEPLOYED, KeywordStatus.RETIRED, True),
    (KeywordStatus.DEPLOYED, KeywordStatus.REJECTED, False),
    (KeywordStatus.RETIRED, KeywordStatus.DEPLOYED, False),
    (KeywordStatus.REJECTED, KeywordStatus.CANDIDATE, False),
])
def test_status_transitions(src, dst, ok):
    kw = Keyword("x", status=src)
    if ok:
        kw.transition(dst)
        assert kw.status is dst
    else:
        with pytest.raises(ValueError):
            kw.transition(dst)


def test_fixed_schema_weights_must_sum_to_one():
    with pytest.raises(ValueError):
        MetricSchema([("a", "Benefit"), ("b", "Cost")], [0.5, 0.6], WeightMode.FIXED)
    MetricSchema([("a", "Benefit"), ("b", "Cost")], [0.25, 0.75], WeightMode.FIXED)


def test_duplicate_metric_names_rejected():
    with pytest.raises(ValueError):
        MetricSchema([("a", "Benefit"), ("a", "Cost")])


def test_reject_verdict_needs_reason():
    with pytest.raises(ValueError):
        ToolVerdict("t", "k", Outcome.REJECT)
    assert ToolVerdict("t", "k", Outcome.REJECT, "because").reason == "because"


words = st.text(alphabet="abcdefgh ", min_size=1, max_size=12).filter(lambda s: s.strip())


@st.composite
def states(draw):
    texts = draw(st.lists(words, max_size=8, unique_by=canonical))
    kws = [Keyword(t, draw(st.sampled_from(list(BrandClass))), draw(st.sampled_from(list(KeywordStatus))),
                   draw(st.integers(1, 9))) for t in texts]
    keys = [k.key for k in kws]
    split = draw(st.integers(0, len(keys)))
    clusters = [Cluster(f"C{i:03d}", [k]) for i, k in enumerate(keys[:split])]
    perf = [PerformanceRecord(k, draw(st.lists(st.floats(0, 1e6), min_size=4, max_size=4)), 1) for k in keys]
    return CampaignState(product_info=draw(st.text(max_size=40)), product_name="p",
                         round=draw(st.integers(1, 5)), keywords=kws, clusters=clusters, performance=perf,
                         rejected=draw(st.lists(st.sampled_from(keys), unique=True)) if keys else [],
                         category_stats={"c": [3, 1]}, budget_cap=100, budget_spent=draw(st.integers(0, 100)))


@given(states())
def test_state_round_trip(state):
    assert loads_state(dumps_state(state)) == state
    assert dumps_state(loads_state(dumps_state(state))) == dumps_state(state)


def test_save_state_is_atomic_and_loadable(tmp_path):
    p = tmp_path / "state.json"
    s = CampaignState(product_info="x", keywords=[Keyword("a")])
    save_state(s, p)
    assert load_state(p) == s
    assert [f.name for f in tmp_path.iterdir()] == ["state.json"]


def test_csv_round_trip():
    schema = default_schema()
    recs = [PerformanceRecord("a b", [1.0, 0.0, 20.0, 7.5], 1), PerformanceRecord("c", [0.0, 0.0, 0.0, 0.0], 1)]
    text = write_performance_csv(recs, schema)
    assert read_performance_csv(io.StringIO(text), schema) == recs


@pytest.mark.parametrize("body,line", [
    ("keyword,Click,Conversion,Cost,Impression\na,1,2,3,4\nb,1,x,3,4\n", 3),
    ("keyword,Click,Conversion,Cost,Impression\na,1,2,3\n", 2),
    ("keyword,Click,Cost\n", 1),
    ("keyword,Click,Conversion,Cost,Impression\na,1,2,-3,4\n", 2),
])
def test_csv_errors_name_the_line(body, line):
    with pytest.raises(CSVFormatError) as exc:
        read_performance_csv(io.StringIO(body), default_schema())
    assert exc.value.line == line
    assert f"line {line}" in str(exc.value)
