import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st
from sklearn.cluster import affinity_propagation as sk_affinity_propagation
from sklearn.datasets import make_blobs

from conftest import Router
from oms.clustering import (
    CachedEmbedding,
    HashEmbedding,
    TableEmbedding,
    affinity_propagation,
    assign_new_keywords,
    build_similarity,
    recluster,
    tokenize,
    top_k_clusters,
)
from oms.domain import Cluster
from oms.llm import Gateway


def partition(labels):
    groups = {}
    for i, lab in enumerate(labels):
        groups.setdefault(int(lab), []).append(i)
    return sorted(groups.values())


def sklearn_partition(sim, damping=0.5, max_iter=1000):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        _, labels = sk_affinity_propagation(sim.values, preference=sim.preference, damping=damping,
                                            max_iter=max_iter, random_state=0)
    return partition(labels)


def ids():
    n = iter(range(100, 1000))
    return lambda: f"C{next(n)}"


def test_tokenize():
    assert tokenize("Sony A7-IV, 4K!") == ["sony", "a7", "iv", "4k"]


def test_hash_embedding_is_deterministic_and_unit():
    e = HashEmbedding(16, seed=3)
    a, b = e.embed(["fast camera", "fast camera"])
    assert np.array_equal(a, b)
    assert abs(np.linalg.norm(e.embed_one("camera")) - 1) < 1e-12
    assert not np.array_equal(a, HashEmbedding(16, seed=4).embed_one("fast camera"))


def test_table_embedding_unknown_text():
    t = TableEmbedding({"a": [1.0, 0.0]})
    with pytest.raises(KeyError):
        t.embed(["b"])


def test_cached_embedding_persists(tmp_path):
    p = tmp_path / "cache.json"
    first = CachedEmbedding(HashEmbedding(8), p).embed(["lens"])
    inner = TableEmbedding({"other": [0.0] * 8}, provider_id="hash-8-0")
    again = CachedEmbedding(inner, p).embed(["lens"])
    np.testing.assert_allclose(first, again)


def test_similarity_diagonal_is_median_preference():
    x = np.array([[0.0, 0], [1, 0], [0, 2]])
    s = build_similarity(x)
    assert s.preference == np.median([-1, -4, -1, -5, -4, -5])
    assert np.all(np.diag(s.values) == s.preference)


def test_single_point_is_its_own_exemplar():
    r = affinity_propagation(build_similarity(np.array([[0.3, 0.1]])))
    assert list(r.labels) == [0] and list(r.exemplars) == [0] and r.converged


def test_damping_range():
    with pytest.raises(ValueError):
        affinity_propagation(np.zeros((2, 2)), damping=1.0)


@pytest.mark.parametrize("seed", range(6))
def test_blobs_match_sklearn(seed):
    x, _ = make_blobs(n_samples=30, centers=2 + seed % 2, cluster_std=0.6, random_state=seed)
    sim = build_similarity(x)
    assert partition(affinity_propagation(sim, max_iter=1000).labels) == sklearn_partition(sim)


def test_duplicate_points_do_not_oscillate():
    x = np.array([[0.0, 0.0]] * 4 + [[5.0, 5.0]] * 4)
    r = affinity_propagation(build_similarity(x))
    assert r.converged
    assert partition(r.labels) == [[0, 1, 2, 3], [4, 5, 6, 7]]


@given(st.integers(2, 15), st.integers(0, 10_000))
def test_labels_point_at_exemplars(n, seed):
    x = np.random.default_rng(seed).normal(size=(n, 3))
    r = affinity_propagation(build_similarity(x))
    for e in r.exemplars:
        assert r.labels[e] == e
    assert set(r.labels) == set(r.exemplars)


def test_top_k_sorted_by_distance_then_id():
    vec = {"a": np.array([0.0, 0]), "b": np.array([2.0, 0]), "c": np.array([0.0, 2])}
    cl = [Cluster("C3", ["c"]), Cluster("C2", ["b"]), Cluster("C1", ["a"])]
    out = top_k_clusters(np.array([1.0, 1.0]), cl, vec, k=2)
    assert [c.id for c, _ in out] == ["C1", "C2"]


def test_assign_new_keyword_to_chosen_cluster():
    vec = {"a": np.array([0.0, 0]), "b": np.array([2.0, 0]), "n": np.array([1.9, 0])}
    clusters = [Cluster("C1", ["a"]), Cluster("C2", ["b"])]
    gw = Gateway(Router(assign="Cluster 1"))
    logs = assign_new_keywords(["n"], clusters, vec, "info", gw, ids())
    assert clusters[1].keyword_ids == ["b", "n"]  # nearest cluster was candidate 1
    assert logs[0].candidates == ["C2", "C1"]


def test_assign_new_cluster_and_padding():
    vec = {"a": np.array([0.0, 0]), "n": np.array([9.0, 9])}
    clusters = [Cluster("C1", ["a"])]
    router = Router(assign="New Cluster")
    assign_new_keywords(["n"], clusters, vec, "info", Gateway(router), ids())
    assert [c.keyword_ids for c in clusters] == [["a"], ["n"]]
    assert router.calls[0][2].count("(no cluster)") == 2


def test_assign_out_of_range_choice_falls_back_to_nearest():
    vec = {"a": np.array([0.0, 0]), "n": np.array([1.0, 0])}
    clusters = [Cluster("C1", ["a"])]
    logs = assign_new_keywords(["n"], clusters, vec, "info", Gateway(Router(assign="Cluster 3")), ids())
    assert logs[0].fallback and clusters[0].keyword_ids == ["a", "n"]


def test_recluster_keeps_ids_and_partitions():
    emb = TableEmbedding({"a": [0, 0], "b": [0, 0.1], "c": [5, 5], "d": [5, 5.1], "e": [0.05, 0]})
    prev = [Cluster("C001", ["a", "b"]), Cluster("C002", ["c", "d"])]
    res = recluster(["a", "b", "c", "d"], ["e"], prev, emb, "info", Gateway(Router(assign="Cluster 1")), ids())
    got = {c.id: c.keyword_ids for c in res.clusters}
    assert got == {"C001": ["a", "b", "e"], "C002": ["c", "d"]}
    members = [k for c in res.clusters for k in c.keyword_ids]
    assert sorted(members) == ["a", "b", "c", "d", "e"]


def test_recluster_empty():
    assert recluster([], [], [], HashEmbedding(), "", Gateway(Router()), ids()).clusters == []
