import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from coata.graph import SparseGraph, normalize
from coata.tea import TeaConfig, fixed_point, homophily_closed_form, homophily_schedule, propagate, propagation_trace


def path2():
    return normalize(SparseGraph.from_edges(2, [(0, 1)]))


def random_adj(n, p, seed):
    rng = np.random.default_rng(seed)
    iu, ju = np.triu_indices(n, 1)
    keep = rng.random(len(iu)) < p
    return normalize(SparseGraph.from_edges(n, np.column_stack([iu[keep], ju[keep]])))


def test_beta_one_returns_x():
    x = np.random.default_rng(0).random((5, 3))
    out = propagate(x, random_adj(5, 0.5, 0), TeaConfig(h=4, beta=1.0))
    np.testing.assert_array_equal(out.h_matrix, x)


def test_zero_steps_returns_x():
    x = np.eye(2)
    out = propagate(x, path2(), TeaConfig(h=0, beta=0.3))
    np.testing.assert_array_equal(out.h_matrix, x)
    assert out.steps_run == 0


def test_one_step_path():
    out = propagate(np.eye(2), path2(), TeaConfig(h=1, beta=0.5))
    np.testing.assert_allclose(out.h_matrix, [[0.75, 0.25], [0.25, 0.75]], atol=1e-15)


def test_fixed_point_path():
    np.testing.assert_allclose(fixed_point(np.eye(2), path2(), 0.5), [[0.75, 0.25], [0.25, 0.75]], atol=1e-14)


def test_fixed_point_beta_one():
    x = np.random.default_rng(2).random((6, 2))
    np.testing.assert_allclose(fixed_point(x, random_adj(6, 0.5, 1), 1.0), x, atol=1e-15)


def test_iteration_reaches_fixed_point():
    adj = random_adj(30, 0.15, 3)
    x = np.random.default_rng(3).random((30, 4))
    out = propagate(x, adj, TeaConfig(h=500, beta=0.3)).h_matrix
    np.testing.assert_allclose(out, fixed_point(x, adj, 0.3), atol=1e-9)


def test_geometric_decay():
    adj = random_adj(25, 0.2, 4)
    x = np.random.default_rng(4).random((25, 3))
    for beta in (0.1, 0.5):
        star = fixed_point(x, adj, beta)
        trace = propagation_trace(x, adj, beta, 40)
        e0 = np.linalg.norm(trace[0] - star)
        for l, xl in enumerate(trace):
            assert np.linalg.norm(xl - star) <= (1 - beta) ** l * e0 + 1e-9


def test_trace_agrees_with_propagate():
    adj = random_adj(10, 0.3, 5)
    x = np.random.default_rng(5).random((10, 2))
    np.testing.assert_array_equal(propagation_trace(x, adj, 0.3, 3)[-1], propagate(x, adj, TeaConfig(3, 0.3)).h_matrix)


@pytest.mark.parametrize("h,beta", [(-1, 0.3), (2, -0.1), (2, 1.5), (2.5, 0.3)])
def test_config_validation(h, beta):
    with pytest.raises(ValueError):
        TeaConfig(h=h, beta=beta)


def test_feature_shape_checked():
    with pytest.raises(ValueError):
        propagate(np.ones((3, 2)), path2(), TeaConfig())


def test_homophily_example():
    assert homophily_schedule(0.2, 0.3, 1) == pytest.approx(0.44, abs=1e-15)
    assert homophily_closed_form(0.2, 0.3, 1) == pytest.approx(0.44, abs=1e-15)


def test_homophily_fixed_at_one():
    for beta in (0.0, 0.3, 1.0):
        assert homophily_schedule(1.0, beta, 7) == 1.0


def test_homophily_tends_to_one():
    assert homophily_schedule(0.2, 0.3, 200) == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1), st.integers(0, 60))
def test_homophily_recursion_matches_closed_form(p0, beta, l):
    assert abs(homophily_schedule(p0, beta, l) - homophily_closed_form(p0, beta, l)) <= 1e-12


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 10), st.integers(0, 2**31 - 1), st.integers(0, 4))
def test_propagation_permutation_equivariant(n, seed, h):
    rng = np.random.default_rng(seed)
    iu, ju = np.triu_indices(n, 1)
    keep = rng.random(len(iu)) < 0.4
    g = SparseGraph.from_edges(n, np.column_stack([iu[keep], ju[keep]]))
    x = rng.random((n, 3))
    perm = rng.permutation(n)
    xp = np.empty_like(x)
    xp[perm] = x
    a = propagate(x, normalize(g), TeaConfig(h, 0.3)).h_matrix
    b = propagate(xp, normalize(g.permute(perm)), TeaConfig(h, 0.3)).h_matrix
    np.testing.assert_allclose(b[perm], a, atol=1e-12)
