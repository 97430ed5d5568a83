"""Topology-enriched attribute propagation with residual mixing."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import NormalizedAdjacency, check_features, spmm

H_RANGE = (0, 1000)


@dataclass(frozen=True)
class TeaConfig:
    h: int = 2
    beta: float = 0.3

    def __post_init__(self):
        if not (isinstance(self.h, (int, np.integer)) and H_RANGE[0] <= self.h <= H_RANGE[1]):
            raise ValueError(f"h must be an integer in [{H_RANGE[0]}, {H_RANGE[1]}], got {self.h!r}")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must lie in [0, 1], got {self.beta}")


@dataclass(frozen=True)
class EnrichedFeatures:
    h_matrix: np.ndarray
    steps_run: int


def propagate(x, adj: NormalizedAdjacency, cfg: TeaConfig) -> EnrichedFeatures:
    """Run exactly ``cfg.h`` steps of ``X_l = (1 - beta) A X_{l-1} + beta X``."""
    x = check_features(x, adj.n)
    out = x
    for _ in range(cfg.h):
        out = (1.0 - cfg.beta) * spmm(adj, out) + cfg.beta * x
    return EnrichedFeatures(out, cfg.h)


def propagation_trace(x, adj: NormalizedAdjacency, beta: float, steps: int) -> list[np.ndarray]:
    """All iterates ``X_0 .. X_steps`` (diagnostics only)."""
    x = check_features(x, adj.n)
    trace = [x]
    for _ in range(steps):
        trace.append((1.0 - beta) * spmm(adj, trace[-1]) + beta * x)
    return trace


def fixed_point(x, adj: NormalizedAdjacency, beta: float, max_dim: int = 2000) -> np.ndarray:
    """Limit of :func:`propagate` as ``h`` grows, by dense linear solve.

    Test oracle; refuses graphs with more than ``max_dim`` nodes.
    """
    from .oracles import OracleBudget, dense_fixed_point

    return dense_fixed_point(x, adj, beta, OracleBudget(max_dense_dim=max_dim))


def homophily_schedule(p0: float, beta: float, l: int) -> float:
    """Same-class neighbour mass after ``l`` residual steps: ``p_l = beta + (1-beta) p_{l-1}``."""
    if not (0.0 <= p0 <= 1.0 and 0.0 <= beta <= 1.0) or l < 0:
        raise ValueError("p0 and beta must be in [0, 1] and l >= 0")
    p = p0
    for _ in range(l):
        p = beta + (1.0 - beta) * p
    return p


def homophily_closed_form(p0: float, beta: float, l: int) -> float:
    return 1.0 - (1.0 - beta) ** l * (1.0 - p0)
