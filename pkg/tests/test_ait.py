import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from coata import ait
from coata.ait import (BipartiteGraph, PprConfig, PprTable, ReconstructionConfig, build_bipartite, edge_mod_graph,
                       knn_graph, lower_bound, push_ppr)
from coata.graph import SparseGraph
from coata.oracles import dense_two_hop_ppr, enumerate_paths
from coata.selftest import random_bipartite


def two_node():
    return BipartiteGraph.from_matrix(np.array([[1.0], [1.0]]))


# -- bipartite construction -----------------------------------------------------

def test_zero_column_removed():
    h = np.array([[1.0, 0.0, 2.0], [3.0, 0.0, 1.0]])
    g = build_bipartite(h)
    assert g.n_u == 2
    assert g.columns.tolist() == [0, 2]
    assert g.dropped_zero == 1


def test_singleton_policies():
    h = np.array([[1.0, 1.0], [1.0, 0.0], [1.0, 0.0]])
    assert build_bipartite(h, "drop").columns.tolist() == [0]
    down = build_bipartite(h, "downweight")
    assert down.by_node[0, 1] == pytest.approx(ait.SINGLETON_DOWNWEIGHT)
    assert build_bipartite(h, "keep").n_u == 2


def test_all_singletons_is_error():
    with pytest.raises(ValueError, match="no attributes"):
        build_bipartite(np.eye(2))


def test_negatives_clamped_and_counted():
    h = np.array([[1.0, -0.5], [1.0, 2.0], [0.0, 1.0]])
    g = build_bipartite(h)
    assert g.clamped_negatives == 1
    assert g.by_node.data.min() > 0


def test_nan_rejected():
    with pytest.raises(ValueError):
        build_bipartite(np.array([[np.nan, 1.0], [1.0, 1.0]]))


# -- push ---------------------------------------------------------------------------

def test_single_pair_sums_to_one():
    g = BipartiteGraph.from_matrix(np.array([[1.0]]))
    res = push_ppr(g, 0, PprConfig(0.2, 1e-9))
    assert res.pi_hat[0] == pytest.approx(1.0, abs=1e-8)


def test_two_node_shared_attribute():
    res = push_ppr(two_node(), 0, PprConfig(0.2, 1e-10))
    pi, _ = res.dense(2)
    np.testing.assert_allclose(pi, [0.6, 0.4], atol=1e-8)
    np.testing.assert_allclose(dense_two_hop_ppr(two_node(), 0, 0.2), [0.6, 0.4], atol=1e-12)


def test_isolated_source_absorbs():
    g = BipartiteGraph.from_matrix(np.array([[0.0, 0.0], [1.0, 1.0], [1.0, 1.0]]))
    res = push_ppr(g, 0, PprConfig())
    assert res.pi_hat == {0: 1.0}
    assert res.residue == {}


def test_source_out_of_range():
    with pytest.raises(IndexError):
        push_ppr(two_node(), 5, PprConfig())


@pytest.mark.parametrize("seed", range(5))
def test_push_vs_oracle_random(seed):
    rng = np.random.default_rng(seed)
    g = random_bipartite(rng, 50, 20, 0.15)
    cfg = PprConfig(0.2, 1e-9)
    for source in (0, 17):
        pi, r = push_ppr(g, source, cfg).dense(g.n_v)
        exact = dense_two_hop_ppr(g, source, 0.2)
        assert np.all(pi <= exact + 1e-12)
        assert np.max(np.abs(pi - exact)) <= 1e-6
        assert abs(pi.sum() + r.sum() - 1.0) <= 1e-10


def test_gap_shrinks_with_r_max():
    g = random_bipartite(np.random.default_rng(9), 40, 15, 0.2)
    exact = dense_two_hop_ppr(g, 3, 0.2)
    gaps = [np.abs(push_ppr(g, 3, PprConfig(0.2, r)).dense(g.n_v)[0] - exact).max() for r in (1e-3, 1e-5, 1e-7)]
    assert gaps[0] >= gaps[1] >= gaps[2]


def test_collapsed_kernel_matches_bipartite():
    g = random_bipartite(np.random.default_rng(11), 60, 25, 0.1)
    cfg = PprConfig(0.3, 1e-8)
    t = ait.two_hop_transition(g)
    for s in (0, 5, 30):
        a = push_ppr(g, s, cfg).dense(g.n_v)[0]
        b = push_ppr(g, s, cfg, transition=t).dense(g.n_v)[0]
        # both approximations stop within the residue threshold, not at the same point
        np.testing.assert_allclose(a, b, atol=1e-7)


def test_budget_exceeded(monkeypatch):
    g = random_bipartite(np.random.default_rng(1), 30, 10, 0.3)
    monkeypatch.setattr(ait, "push_budget", lambda g, cfg: 3)
    with pytest.raises(ait.PushBudgetExceeded):
        push_ppr(g, 0, PprConfig(0.2, 1e-9))


def test_push_count_within_budget():
    g = random_bipartite(np.random.default_rng(1), 30, 10, 0.3)
    cfg = PprConfig(0.2, 1e-6)
    assert 0 < push_ppr(g, 0, cfg).pushes <= ait.push_budget(g, cfg)


def test_all_sources_table_excludes_self_and_sorted():
    g = random_bipartite(np.random.default_rng(2), 30, 12, 0.2)
    table = ait.all_sources_ppr(g, PprConfig(0.2, 1e-7), top_t=5)
    assert len(table) == 30
    for s in range(30):
        assert s not in table.targets[s].tolist()
        assert len(table.targets[s]) <= 5
        assert np.all(np.diff(table.scores[s]) <= 0)


def test_all_sources_kernels_agree():
    g = random_bipartite(np.random.default_rng(3), 25, 10, 0.25)
    cfg = PprConfig(0.2, 1e-8)
    a = ait.all_sources_ppr(g, cfg, 8, kernel="bipartite")
    b = ait.all_sources_ppr(g, cfg, 8, kernel="collapsed")
    for s in range(25):
        np.testing.assert_allclose(a.scores[s], b.scores[s], atol=1e-8)


# -- lower bound ------------------------------------------------------------------

def test_lower_bound_two_node():
    cert = lower_bound(two_node(), 0, 1, 1, 0.2)
    assert (cert.path_count, cert.w_min, cert.d_max_v, cert.d_max_u) == (1, 1.0, 1.0, 2.0)
    assert cert.bound == pytest.approx(0.064, abs=1e-15)
    assert dense_two_hop_ppr(two_node(), 0, 0.2)[1] >= cert.bound


def test_lower_bound_unreachable():
    g = BipartiteGraph.from_matrix(np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]]))
    cert = lower_bound(g, 0, 3, 1, 0.2)
    assert cert.path_count == 0 and cert.bound == 0.0


def test_enumerate_complete_three_by_three():
    g = BipartiteGraph.from_matrix(np.ones((3, 3)))
    assert enumerate_paths(g, 0, 2, 1) == 3
    assert enumerate_paths(two_node(), 0, 1, 1) == 1


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 2))
def test_lower_bound_holds(seed, c):
    rng = np.random.default_rng(seed)
    g = random_bipartite(rng, int(rng.integers(3, 8)), int(rng.integers(2, 5)), 0.5)
    s, t = rng.choice(g.n_v, 2, replace=False)
    cert = lower_bound(g, int(s), int(t), c, 0.2)
    assert dense_two_hop_ppr(g, int(s), 0.2)[t] >= cert.bound - 1e-15


# -- reconstruction -----------------------------------------------------------

def hand_table():
    # v0 prefers v1 over v2; v1 and v2 each see only v0
    return PprTable([np.array([1, 2]), np.array([0]), np.array([0])],
                    [np.array([0.5, 0.1]), np.array([0.3]), np.array([0.2])])


def test_knn_hand_trace():
    g = knn_graph(SparseGraph.from_edges(3, [(1, 2)]), hand_table(), 1)
    assert g.edge_set() == {(0, 1), (0, 2)}
    assert np.all(g.weight == 1.0)


def test_knn_symmetric_closure():
    table = PprTable([np.array([1]), np.array([2]), np.array([1])],
                     [np.array([0.5]), np.array([0.4]), np.array([0.3])])
    g = knn_graph(SparseGraph.from_edges(3, [(0, 1)]), table, 1)
    assert g.edge_set() == {(0, 1), (1, 2)}


def test_knn_auto_matches_edge_count():
    rng = np.random.default_rng(4)
    bip = random_bipartite(rng, 80, 30, 0.1)
    table = ait.all_sources_ppr(bip, PprConfig(0.2, 1e-7), 64)
    iu, ju = np.triu_indices(80, 1)
    keep = rng.random(len(iu)) < 0.04
    orig = SparseGraph.from_edges(80, np.column_stack([iu[keep], ju[keep]]))
    g = knn_graph(orig, table, "auto")
    assert abs(g.num_edges - orig.num_edges) <= 0.2 * orig.num_edges


def test_edge_mod_noop():
    orig = SparseGraph.from_edges(3, [(1, 2)], [2.5])
    assert edge_mod_graph(orig, hand_table(), 0, 0) is orig


def test_edge_mod_adds_and_deletes():
    orig = SparseGraph.from_edges(3, [(1, 2)])
    out = edge_mod_graph(orig, hand_table(), 1, 1)
    # (1,2) is the lowest-scored edge for both endpoints; each node gains its best non-neighbour
    assert out.edge_set() == {(0, 1), (0, 2)}


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(0, 2), st.integers(0, 2))
def test_edge_mod_degree_invariants(seed, k_add, k_del):
    rng = np.random.default_rng(seed)
    n = 15
    bip = random_bipartite(rng, n, 8, 0.3)
    table = ait.all_sources_ppr(bip, PprConfig(0.2, 1e-6), 10)
    iu, ju = np.triu_indices(n, 1)
    keep = rng.random(len(iu)) < 0.2
    orig = SparseGraph.from_edges(n, np.column_stack([iu[keep], ju[keep]]))
    out = edge_mod_graph(orig, table, k_add, k_del)
    old, new = orig.edge_set(), out.edge_set()
    removed = old - new
    for v in range(n):
        assert sum(v in e for e in removed) <= k_del
    assert len(new - old) <= k_add * n


def test_reconstruction_config_validation():
    with pytest.raises(ValueError):
        ReconstructionConfig(strategy="bogus")
    with pytest.raises(ValueError):
        ReconstructionConfig(k_add=-1)
