import pytest
from hypothesis import given, strategies as st

from oms.domain import Outcome
from oms.tools import (
    FixtureSearch,
    FixtureVolume,
    InfoStore,
    SourceUnavailable,
    VolumeUnavailable,
    category_reject,
    lexical_analysis,
    reject_reflection,
    repeated_filter,
    search,
    volume_check,
)


def test_search_appends_snippets_and_queries():
    store = InfoStore()
    v = search("Alpha Camera", FixtureSearch({"alpha camera": ["24 MP sensor", "fast AF"]}), store)
    assert v.outcome is Outcome.ANALYSIS and v.payload == {"added": 2, "hit": True}
    assert store.text() == "24 MP sensor\nfast AF" and store.queries == ["Alpha Camera"]
    assert search("nothing", FixtureSearch({}), store).reason == "no results"


def test_search_unavailable_source_is_soft_failure():
    class Down:
        name = "down"

        def lookup(self, q):
            raise SourceUnavailable("offline")

    v = search("q", Down(), InfoStore())
    assert v.payload["hit"] is False and v.reason == "source unavailable"


def test_search_rejects_empty_query():
    with pytest.raises(ValueError):
        search("  ", FixtureSearch({}), InfoStore())


def test_reject_reflection_exact_and_substring():
    assert reject_reflection("Cheap  Camera", ["cheap camera"]).outcome is Outcome.REJECT
    assert reject_reflection("cheap camera bag", ["cheap camera"]).outcome is Outcome.ACCEPT
    v = reject_reflection("cheap camera bag", ["cheap camera"], substring=True)
    assert v.outcome is Outcome.REJECT and "cheap camera" in v.reason
    assert reject_reflection("cheapest", ["cheap"], substring=True).outcome is Outcome.ACCEPT


def test_repeated_filter():
    assert repeated_filter("Lens", ["lens"]).outcome is Outcome.REJECT
    assert repeated_filter("lens cap", ["lens"]).outcome is Outcome.ACCEPT


@pytest.mark.parametrize("vol,outcome", [(99, Outcome.REJECT), (100, Outcome.ACCEPT), (5000, Outcome.ACCEPT)])
def test_volume_threshold_is_inclusive(vol, outcome):
    assert volume_check("k", FixtureVolume({"k": vol}), 100).outcome is outcome


@pytest.mark.parametrize("strict", [True, False])
def test_volume_unknown_follows_strictness(strict):
    v = volume_check("missing", FixtureVolume({}), 100, strict=strict)
    assert v.outcome is Outcome.ANALYSIS and v.payload["accepted"] is (not strict)


def test_volume_retry_recovers():
    class Flaky:
        calls = 0

        def volume(self, k):
            self.calls += 1
            if self.calls == 1:
                raise VolumeUnavailable("timeout")
            return 500

    assert volume_check("k", Flaky(), 100).outcome is Outcome.ACCEPT


def test_fixture_volume_csv(tmp_path):
    p = tmp_path / "v.csv"
    p.write_text("keyword,volume\nFast Lens,250\n")
    assert FixtureVolume.from_csv(p).volume("fast lens") == 250


def test_lexical_report_worked_example():
    rep = lexical_analysis(["cheap camera deal", "cheap camera bag", "camera strap"])
    assert rep.unigrams == {"camera": 3, "cheap": 2}
    assert rep.bigrams == {"cheap camera": 2}
    assert rep.prefixes == {"cheap ca": 2}  # affixes stop at 8 characters
    assert rep.suffixes == {}
    assert "'cheap camera' (2)" in rep.as_constraint()


def test_lexical_shared_suffix():
    rep = lexical_analysis(["cheap camera deal", "cheap lens deal"])
    assert rep.unigrams == {"cheap": 2, "deal": 2}
    assert rep.bigrams == {}
    assert rep.suffixes == {"deal": 2} and rep.prefixes == {"cheap": 2}


def test_lexical_counts_each_keyword_once():
    rep = lexical_analysis(["lens lens", "lens cap"])
    assert rep.unigrams == {"lens": 2}


def test_lexical_empty():
    rep = lexical_analysis(["alpha", "beta"])
    assert rep.empty and rep.as_constraint() == ""


@given(st.lists(st.text(alphabet="abc ", min_size=1, max_size=10).filter(str.strip), max_size=10), st.integers(1, 4))
def test_lexical_patterns_really_recur(keywords, k):
    rep = lexical_analysis(keywords, min_count=k)
    keys = {" ".join(w.split()) for w in keywords}
    for p, c in rep.unigrams.items():
        assert c >= k and c == sum(p in kw.split() for kw in keys)
    for p, c in rep.prefixes.items():
        assert c >= k and c == sum(kw.startswith(p) for kw in keys)
    for p, c in rep.suffixes.items():
        assert c >= k and c == sum(kw.endswith(p) for kw in keys)


def test_category_reject_is_strict_ratio():
    stats = {"a": (10, 6), "b": (10, 7), "c": (0, 0), "d": [4, 4]}
    assert category_reject(stats, 0.6) == {"b", "d"}
    assert category_reject(stats, 0.6, categories=["b"]) == {"b"}
    with pytest.raises(ValueError):
        category_reject(stats, 1.5)
