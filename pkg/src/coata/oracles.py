"""Brute-force reference computations for tests and self-checks.

Nothing here shares kernels with the production path: everything is dense,
loop-based or solved directly, and every entry point refuses inputs larger
than its :class:`OracleBudget`.
"""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np


class OracleBudgetExceeded(RuntimeError):
    pass


@dataclass(frozen=True)
class OracleBudget:
    max_dense_dim: int = 5000
    max_paths: int = 1_000_000
    fd_step: float = 1e-5

    def __post_init__(self):
        if self.max_dense_dim <= 0 or self.max_paths <= 0:
            raise ValueError("budgets must be positive")
        if not 1e-8 <= self.fd_step <= 1e-3:
            raise ValueError("fd_step must lie in [1e-8, 1e-3]")


DEFAULT_BUDGET = OracleBudget()


def dense_fixed_point(x, adj, beta: float, budget: OracleBudget = DEFAULT_BUDGET) -> np.ndarray:
    """Solve ``(I - (1 - beta) A) X* = beta X`` with a dense LU factorisation."""
    if not 0.0 < beta <= 1.0:
        raise ValueError("beta must lie in (0, 1]")
    n = adj.n
    if n > budget.max_dense_dim:
        raise OracleBudgetExceeded(f"dense solve capped at {budget.max_dense_dim} nodes, got {n}")
    a = adj.toarray()
    system = np.eye(n) - (1.0 - beta) * a
    try:
        return np.linalg.solve(system, beta * np.asarray(x, dtype=np.float64))
    except np.linalg.LinAlgError as exc:
        raise RuntimeError("fixed-point system is singular") from exc


def dense_two_hop_ppr(g, source: int, alpha: float, iters: int = 2000,
                      budget: OracleBudget = DEFAULT_BUDGET) -> np.ndarray:
    """PPR over node set V with decay applied once per V->U->V round trip.

    Accumulates ``alpha * sum_k (1 - alpha)^k (M_VU M_UV)^k`` applied to the
    source indicator, truncated after ``iters`` terms.  A source with no
    attributes keeps all of its mass.
    """
    n_v, n_u = g.n_v, g.n_u
    if n_v + n_u > budget.max_dense_dim:
        raise OracleBudgetExceeded(f"dense PPR capped at {budget.max_dense_dim} vertices")
    w = np.zeros((n_v, n_u))
    for a, v, wt in g.triplets():
        w[v, a] += wt
    dv = w.sum(axis=1)
    du = w.sum(axis=0)
    pi = np.zeros(n_v)
    if dv[source] == 0:
        pi[source] = 1.0
        return pi
    m_vu = np.divide(w, dv[:, None], out=np.zeros_like(w), where=dv[:, None] > 0)
    m_uv = np.divide(w.T, du[:, None], out=np.zeros_like(w.T), where=du[:, None] > 0)
    walk = np.zeros(n_v)
    walk[source] = 1.0
    for _ in range(iters):
        pi += alpha * walk
        walk = (1.0 - alpha) * ((walk @ m_vu) @ m_uv)
    return pi


def enumerate_paths(g, source: int, target: int, c: int,
                    budget: OracleBudget = DEFAULT_BUDGET) -> int:
    """Count alternating walks ``s -> a1 -> v1 -> ... -> a_c -> target`` by DFS."""
    if c < 1:
        raise ValueError("c must be >= 1")
    node_attrs = defaultdict(list)
    attr_nodes = defaultdict(list)
    for a, v, wt in g.triplets():
        if wt > 0:
            node_attrs[v].append(a)
            attr_nodes[a].append(v)

    count = 0
    visited = 0

    def walk(v, hops_left):
        nonlocal count, visited
        for a in node_attrs[v]:
            for nxt in attr_nodes[a]:
                visited += 1
                if visited > budget.max_paths:
                    raise OracleBudgetExceeded("path enumeration exceeded budget")
                if hops_left == 1:
                    if nxt == target:
                        count += 1
                else:
                    walk(nxt, hops_left - 1)

    walk(source, c)
    return count


def finite_diff_grad(loss_fn: Callable[[Mapping[str, np.ndarray]], float],
                     params: Mapping[str, np.ndarray],
                     fd_step: float = DEFAULT_BUDGET.fd_step) -> dict[str, np.ndarray]:
    """Central differences, one scalar at a time.  ``params`` is left unchanged."""
    work = {k: np.array(v, dtype=np.float64, copy=True) for k, v in params.items()}
    grads = {}
    for name, arr in work.items():
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + fd_step
            fp = loss_fn(work)
            flat[i] = orig - fd_step
            fm = loss_fn(work)
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise FloatingPointError(f"non-finite loss while differentiating {name}[{i}]")
            gflat[i] = (fp - fm) / (2.0 * fd_step)
        grads[name] = g
    return grads


def dense_gcn_forward(adj_dense: np.ndarray, x: np.ndarray, w1: np.ndarray, w2: np.ndarray,
                      w_proj: np.ndarray):
    """Two-layer GCN with explicit einsum products; returns (hidden, logits, probs, z)."""
    pre = np.einsum("ij,jk,kh->ih", adj_dense, x, w1)
    hidden = np.where(pre > 0, pre, 0.0)
    logits = np.einsum("ij,jh,hc->ic", adj_dense, hidden, w2)
    probs = np.exp(logits - logits.max(axis=1, keepdims=True))
    probs = probs / probs.sum(axis=1, keepdims=True)
    z = np.einsum("ih,hp->ip", hidden, w_proj)
    return hidden, logits, probs, z


def dense_normalized_adjacency(n: int, edges, weights=None) -> np.ndarray:
    """``D^-1/2 (A + I) D^-1/2`` built entry by entry."""
    a = np.zeros((n, n))
    weights = np.ones(len(edges)) if weights is None else weights
    for (u, v), w in zip(edges, weights):
        a[u, v] = w
        a[v, u] = w
    a += np.eye(n)
    d = a.sum(axis=1)
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if a[i, j]:
                out[i, j] = a[i, j] / np.sqrt(d[i] * d[j])
    return out
