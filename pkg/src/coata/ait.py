"""Attribute-informed topology: node/attribute bipartite graph, intra-set
forward push, lower-bound certificates and graph reconstruction."""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from numba import njit

from .graph import SparseGraph
from .tea import EnrichedFeatures

log = logging.getLogger(__name__)

SINGLETON_POLICIES = ("drop", "downweight", "keep")
SINGLETON_DOWNWEIGHT = 0.1
COLLAPSED_MAX_NNZ = 50_000_000


class PushBudgetExceeded(RuntimeError):
    pass


@dataclass(frozen=True)
class BipartiteGraph:
    """Nodes V (rows of H) against retained attributes U (columns of H).

    Stored twice in CSR form: node -> attributes and attribute -> nodes.
    ``columns[a]`` is the original feature dimension behind attribute ``a``.
    """

    by_node: sp.csr_matrix
    by_attr: sp.csr_matrix
    columns: np.ndarray
    clamped_negatives: int = 0
    dropped_zero: int = 0
    singletons: int = 0
    deg_v: np.ndarray = field(init=False)
    deg_u: np.ndarray = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "deg_v", np.asarray(self.by_node.sum(axis=1)).ravel())
        object.__setattr__(self, "deg_u", np.asarray(self.by_attr.sum(axis=1)).ravel())

    @classmethod
    def from_matrix(cls, w, columns=None, **counts) -> "BipartiteGraph":
        """Wrap an ``n_v x n_u`` non-negative weight matrix without preprocessing."""
        by_node = sp.csr_matrix(w, dtype=np.float64)
        by_node.eliminate_zeros()
        by_node.sort_indices()
        if by_node.nnz and (by_node.data.min() < 0 or not np.all(np.isfinite(by_node.data))):
            raise ValueError("bipartite weights must be finite and non-negative")
        by_attr = sp.csr_matrix(by_node.T)
        by_attr.sort_indices()
        if columns is None:
            columns = np.arange(by_node.shape[1])
        return cls(by_node, by_attr, np.asarray(columns), **counts)

    @property
    def n_v(self) -> int:
        return self.by_node.shape[0]

    @property
    def n_u(self) -> int:
        return self.by_node.shape[1]

    @property
    def num_edges(self) -> int:
        return self.by_node.nnz

    def triplets(self):
        """Yield ``(attribute, node, weight)`` for every edge."""
        coo = self.by_node.tocoo()
        for v, a, w in zip(coo.row.tolist(), coo.col.tolist(), coo.data.tolist()):
            yield a, v, w


def build_bipartite(h, singleton: str = "drop", prune_below: float = 0.0) -> BipartiteGraph:
    """Turn an enriched feature matrix into a bipartite weight structure.

    Negative entries are clamped to zero (and counted), all-zero columns are
    removed, and columns nonzero at a single node are dropped, down-weighted
    or kept according to ``singleton``.  ``prune_below`` zeroes entries below
    the given magnitude before anything else; the default keeps ``H`` exact.
    """
    if singleton not in SINGLETON_POLICIES:
        raise ValueError(f"singleton policy must be one of {SINGLETON_POLICIES}")
    if isinstance(h, EnrichedFeatures):
        h = h.h_matrix
    if sp.issparse(h):
        mat = sp.csr_matrix(h, dtype=np.float64, copy=True)
    else:
        h = np.asarray(h, dtype=np.float64)
        if not np.all(np.isfinite(h)):
            raise ValueError("enriched features contain NaN or Inf")
        mat = sp.csr_matrix(h)
    if not np.all(np.isfinite(mat.data)):
        raise ValueError("enriched features contain NaN or Inf")

    negatives = int(np.count_nonzero(mat.data < 0))
    if negatives:
        log.warning("clamped %d negative feature value(s) to zero", negatives)
        mat.data[mat.data < 0] = 0.0
    if prune_below > 0:
        mat.data[mat.data < prune_below] = 0.0
    mat.eliminate_zeros()

    csc = mat.tocsc()
    nnz_per_col = np.diff(csc.indptr)
    keep = nnz_per_col > 0
    dropped_zero = int(np.count_nonzero(~keep))
    single = nnz_per_col == 1
    n_single = int(np.count_nonzero(single))
    if singleton == "drop":
        keep &= ~single
    elif singleton == "downweight" and n_single:
        scale = np.where(single, SINGLETON_DOWNWEIGHT, 1.0)
        csc = csc @ sp.diags(scale)
    columns = np.flatnonzero(keep)
    if len(columns) == 0:
        raise ValueError("no attributes left after zero-dimension removal and singleton filtering")
    return BipartiteGraph.from_matrix(csc[:, columns], columns, clamped_negatives=negatives,
                                      dropped_zero=dropped_zero, singletons=n_single)


@dataclass(frozen=True)
class PprConfig:
    alpha: float = 0.2
    r_max: float = 1e-6

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if not self.r_max > 0:
            raise ValueError("r_max must be positive")


@dataclass(frozen=True)
class PprResult:
    source: int
    pi_hat: dict[int, float]
    residue: dict[int, float]
    pushes: int

    def dense(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        pi = np.zeros(n)
        r = np.zeros(n)
        for k, v in self.pi_hat.items():
            pi[k] = v
        for k, v in self.residue.items():
            r[k] = v
        return pi, r


@njit(cache=True)
def _push_bipartite(v_ptr, v_attr, v_w, u_ptr, u_node, u_w, deg_v, deg_u,
                    source, alpha, r_max, max_pushes):
    n_v = deg_v.shape[0]
    pi = np.zeros(n_v)
    r = np.zeros(n_v)
    r_u = np.zeros(deg_u.shape[0])
    r[source] = 1.0
    if deg_v[source] == 0.0:
        # absorbing: an attribute-less source keeps its whole mass
        pi[source] = 1.0
        r[source] = 0.0
        return pi, r, 0
    queue = np.empty(n_v, dtype=np.int64)
    queued = np.zeros(n_v, dtype=np.bool_)
    head = 0
    size = 1
    queue[0] = source
    queued[source] = True
    pushes = 0
    while size > 0:
        v = queue[head]
        head = (head + 1) % n_v
        size -= 1
        queued[v] = False
        if r[v] <= r_max * deg_v[v]:
            continue
        res = r[v]
        r[v] = 0.0
        pi[v] += alpha * res
        pushes += 1
        if pushes > max_pushes:
            return pi, r, -1
        spread = (1.0 - alpha) * res / deg_v[v]
        for e in range(v_ptr[v], v_ptr[v + 1]):
            r_u[v_attr[e]] += spread * v_w[e]
        for e in range(v_ptr[v], v_ptr[v + 1]):
            a = v_attr[e]
            ra = r_u[a]
            if ra == 0.0:
                continue
            r_u[a] = 0.0
            share = ra / deg_u[a]
            for f in range(u_ptr[a], u_ptr[a + 1]):
                x = u_node[f]
                r[x] += share * u_w[f]
                if not queued[x] and r[x] > r_max * deg_v[x]:
                    queue[(head + size) % n_v] = x
                    size += 1
                    queued[x] = True
    return pi, r, pushes


@njit(cache=True)
def _push_collapsed(t_ptr, t_idx, t_val, deg_v, source, alpha, r_max, max_pushes):
    # same push rule over the precomputed V->V two-hop transition matrix
    n_v = deg_v.shape[0]
    pi = np.zeros(n_v)
    r = np.zeros(n_v)
    r[source] = 1.0
    if deg_v[source] == 0.0:
        pi[source] = 1.0
        r[source] = 0.0
        return pi, r, 0
    queue = np.empty(n_v, dtype=np.int64)
    queued = np.zeros(n_v, dtype=np.bool_)
    head = 0
    size = 1
    queue[0] = source
    queued[source] = True
    pushes = 0
    while size > 0:
        v = queue[head]
        head = (head + 1) % n_v
        size -= 1
        queued[v] = False
        if r[v] <= r_max * deg_v[v]:
            continue
        res = r[v]
        r[v] = 0.0
        pi[v] += alpha * res
        pushes += 1
        if pushes > max_pushes:
            return pi, r, -1
        spread = (1.0 - alpha) * res
        for e in range(t_ptr[v], t_ptr[v + 1]):
            x = t_idx[e]
            r[x] += spread * t_val[e]
            if not queued[x] and r[x] > r_max * deg_v[x]:
                queue[(head + size) % n_v] = x
                size += 1
                queued[x] = True
    return pi, r, pushes


def push_budget(g: BipartiteGraph, cfg: PprConfig) -> int:
    """Upper bound on pushes: each one moves more than ``alpha * r_max * d_min`` into the estimate."""
    pos = g.deg_v[g.deg_v > 0]
    if len(pos) == 0:
        return 0
    bound = 1.0 / (cfg.alpha * cfg.r_max * pos.min())
    return int(min(bound, 2**62)) + 1


def two_hop_transition(g: BipartiteGraph) -> sp.csr_matrix:
    """Row-stochastic ``V -> U -> V`` matrix (rows of attribute-less nodes are empty)."""
    inv_v = np.divide(1.0, g.deg_v, out=np.zeros_like(g.deg_v), where=g.deg_v > 0)
    inv_u = np.divide(1.0, g.deg_u, out=np.zeros_like(g.deg_u), where=g.deg_u > 0)
    t = sp.diags(inv_v) @ g.by_node @ sp.diags(inv_u) @ g.by_attr
    t = sp.csr_matrix(t)
    t.sort_indices()
    return t


def _run_kernel(g: BipartiteGraph, source: int, cfg: PprConfig, transition=None):
    budget = push_budget(g, cfg)
    if transition is None:
        bn, ba = g.by_node, g.by_attr
        out = _push_bipartite(bn.indptr, bn.indices, bn.data, ba.indptr, ba.indices, ba.data,
                              g.deg_v, g.deg_u, source, cfg.alpha, cfg.r_max, budget)
    else:
        out = _push_collapsed(transition.indptr, transition.indices, transition.data,
                              g.deg_v, source, cfg.alpha, cfg.r_max, budget)
    pi, r, pushes = out
    if pushes < 0:
        raise PushBudgetExceeded(f"source {source}: more than {budget} pushes")
    return pi, r, pushes


def push_ppr(g: BipartiteGraph, source: int, cfg: PprConfig, transition=None) -> PprResult:
    """Intra-set forward push from ``source``; scores live on V only.

    Each push keeps ``alpha`` of the node's residue, spreads the rest over its
    attributes by edge weight, then drains every touched attribute back to V
    in proportion to the attribute's edge weights.  Nodes are taken from a
    deduplicated FIFO queue.  Pass ``transition`` (see
    :func:`two_hop_transition`) to push over the collapsed V->V matrix, which
    is faster when attributes are dense.
    """
    if not 0 <= source < g.n_v:
        raise IndexError(f"source {source} out of range [0, {g.n_v})")
    pi, r, pushes = _run_kernel(g, source, cfg, transition)
    nz_pi = np.flatnonzero(pi)
    nz_r = np.flatnonzero(r)
    return PprResult(
        source,
        dict(zip(nz_pi.tolist(), pi[nz_pi].tolist())),
        dict(zip(nz_r.tolist(), r[nz_r].tolist())),
        int(pushes),
    )


def ppr_oracle(g: BipartiteGraph, source: int, alpha: float, iters: int = 2000) -> np.ndarray:
    """Dense power-iteration reference for :func:`push_ppr` (small graphs only)."""
    from .oracles import dense_two_hop_ppr

    return dense_two_hop_ppr(g, source, alpha, iters)


# -- all-sources score tables ----------------------------------------------

@dataclass
class PprTable:
    """Per-source top-T targets (self excluded), highest score first."""

    targets: list[np.ndarray]
    scores: list[np.ndarray]
    pushes: int = 0

    def __len__(self):
        return len(self.targets)

    def lookup(self, source: int) -> dict[int, float]:
        return dict(zip(self.targets[source].tolist(), self.scores[source].tolist()))


def _top_t(pi: np.ndarray, source: int, top_t: int):
    cand = np.flatnonzero(pi)
    cand = cand[cand != source]
    order = np.lexsort((cand, -pi[cand]))[:top_t]
    return cand[order], pi[cand[order]]


def _ppr_chunk(args):
    g, sources, cfg, top_t, collapsed = args
    transition = two_hop_transition(g) if collapsed else None
    out = []
    for s in sources:
        pi, _, pushes = _run_kernel(g, s, cfg, transition)
        t, sc = _top_t(pi, s, top_t)
        out.append((t, sc, pushes))
    return out


def all_sources_ppr(g: BipartiteGraph, cfg: PprConfig, top_t: int = 256, workers: int = 1,
                    kernel: str = "auto") -> PprTable:
    """Run the push from every node; keep the ``top_t`` heaviest targets of each.

    ``kernel`` is ``"bipartite"``, ``"collapsed"`` or ``"auto"``.  A collapsed
    push scans one row of the two-hop matrix instead of every attribute's
    node list, so it is never slower per push; ``auto`` uses it whenever that
    matrix fits in ``COLLAPSED_MAX_NNZ`` nonzeros.
    """
    if kernel == "auto":
        kernel = "collapsed" if two_hop_nnz_estimate(g) <= COLLAPSED_MAX_NNZ else "bipartite"
    if kernel not in ("bipartite", "collapsed"):
        raise ValueError(f"unknown kernel {kernel!r}")
    collapsed = kernel == "collapsed"
    sources = list(range(g.n_v))
    if workers <= 1:
        results = _ppr_chunk((g, sources, cfg, top_t, collapsed))
    else:
        chunks = [sources[i::workers] for i in range(workers)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_ppr_chunk, [(g, ch, cfg, top_t, collapsed) for ch in chunks]))
        results = [None] * g.n_v
        for ch, part in zip(chunks, parts):
            for s, item in zip(ch, part):
                results[s] = item
    return PprTable([t for t, _, _ in results], [s for _, s, _ in results],
                    int(sum(p for _, _, p in results)))


def two_hop_nnz_estimate(g: BipartiteGraph) -> int:
    """Upper bound on nonzeros of the two-hop matrix: ``sum_a deg(a)^2`` (capped at ``n_v^2``)."""
    counts = np.diff(g.by_attr.indptr).astype(np.int64)
    return int(min(np.sum(counts * counts), g.n_v * g.n_v))


def write_ppr_dump(table: PprTable, path) -> None:
    """``source<TAB>target<TAB>score`` lines ordered by source, then descending score."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for s, (t, sc) in enumerate(zip(table.targets, table.scores)):
            for tgt, val in zip(t.tolist(), sc.tolist()):
                fh.write(f"{s}\t{tgt}\t{val!r}\n")


# -- lower-bound certificate -------------------------------------------------

@dataclass(frozen=True)
class LowerBoundCertificate:
    source: int
    target: int
    c: int
    alpha: float
    path_count: int
    w_min: float
    d_max_v: float
    d_max_u: float

    @property
    def bound(self) -> float:
        if self.path_count == 0:
            return 0.0
        ratio = self.w_min ** 2 / (self.d_max_v * self.d_max_u)
        return self.alpha * (1.0 - self.alpha) ** (2 * self.c) * self.path_count * ratio ** self.c


def lower_bound(g: BipartiteGraph, source: int, target: int, c: int, alpha: float,
                max_paths: int = 1_000_000) -> LowerBoundCertificate:
    """Certify a PPR floor from the number of length-``2c`` alternating walks.

    Brute-force enumeration; meant for small graphs and ``c <= 3``.
    """
    from .oracles import OracleBudget, enumerate_paths

    if c < 1:
        raise ValueError("c must be >= 1")
    count = enumerate_paths(g, source, target, c, OracleBudget(max_paths=max_paths))
    return LowerBoundCertificate(
        source, target, c, alpha, count,
        float(g.by_node.data.min()), float(g.deg_v.max()), float(g.deg_u.max()),
    )


# -- reconstruction -----------------------------------------------------------

@dataclass(frozen=True)
class ReconstructionConfig:
    strategy: str = "knn"
    k: int | str = "auto"
    k_add: int = 1
    k_del: int = 1

    def __post_init__(self):
        if self.strategy not in ("knn", "edge_mod"):
            raise ValueError("strategy must be 'knn' or 'edge_mod'")
        if self.k != "auto" and (not isinstance(self.k, (int, np.integer)) or self.k < 0):
            raise ValueError("k must be a non-negative integer or 'auto'")
        if self.k_add < 0 or self.k_del < 0:
            raise ValueError("k_add and k_del must be non-negative")


def _check_table(original: SparseGraph, table: PprTable):
    if len(table) != original.n:
        raise ValueError(f"score table covers {len(table)} sources, graph has {original.n} nodes")
    if all(len(t) == 0 for t in table.targets):
        raise ValueError("score table is empty")


def _knn_pairs(table: PprTable, k: int) -> set[tuple[int, int]]:
    pairs = set()
    for s, targets in enumerate(table.targets):
        for t in targets[:k].tolist():
            if t != s:
                pairs.add((min(s, t), max(s, t)))
    return pairs


def knn_graph(original: SparseGraph, table: PprTable, k: int | str = "auto") -> SparseGraph:
    """Top-``k`` targets per node, symmetrised, unit weights.

    ``"auto"`` chooses the ``k`` whose symmetrised edge count is closest to the
    original edge count (smaller ``k`` on ties).
    """
    _check_table(original, table)
    longest = max(len(t) for t in table.targets)
    if k == "auto":
        m = original.num_edges
        best = None
        for cand in range(1, longest + 1):
            size = len(_knn_pairs(table, cand))
            gap = abs(size - m)
            if best is None or gap < best[0]:
                best = (gap, cand)
            if size >= m:
                break
        k = best[1]
        log.info("auto k=%d for %d original edges", k, original.num_edges)
    elif k > longest:
        log.warning("k=%d exceeds the longest candidate list (%d); clipped", k, longest)
    pairs = sorted(_knn_pairs(table, k))
    return SparseGraph.from_edges(original.n, np.array(pairs, dtype=np.int64).reshape(-1, 2))


def edge_mod_graph(original: SparseGraph, table: PprTable, k_add: int, k_del: int) -> SparseGraph:
    """Add each node's ``k_add`` best-scoring non-neighbours and remove edges that
    both endpoints rank among their ``k_del`` lowest-scoring neighbours."""
    _check_table(original, table)
    pairs, weights = original.undirected_edges()
    edges = {(int(u), int(v)): float(w) for (u, v), w in zip(pairs, weights)}
    if k_add == 0 and k_del == 0:
        return original

    victims: list[set[int]] = []
    additions: set[tuple[int, int]] = set()
    clipped = 0
    for v in range(original.n):
        nbrs = original.neighbors(v).tolist()
        score = table.lookup(v)
        kd = min(k_del, len(nbrs))
        # lowest score first; on ties the larger id goes first
        ranked = sorted(nbrs, key=lambda u: (score.get(u, 0.0), -u))
        victims.append(set(ranked[:kd]))
        nbr_set = set(nbrs)
        picked = [t for t in table.targets[v].tolist() if t != v and t not in nbr_set][:k_add]
        if len(picked) < k_add:
            clipped += 1
        additions.update((min(v, t), max(v, t)) for t in picked)
    if clipped:
        log.warning("k_add=%d clipped for %d node(s) with too few candidates", k_add, clipped)

    for (u, v) in list(edges):
        if v in victims[u] and u in victims[v]:
            del edges[(u, v)]
    for key in additions:
        edges.setdefault(key, 1.0)
    keys = sorted(edges)
    return SparseGraph.from_edges(original.n, np.array(keys, dtype=np.int64).reshape(-1, 2),
                                  [edges[k] for k in keys])


def reconstruct(original: SparseGraph, table: PprTable, cfg: ReconstructionConfig) -> SparseGraph:
    if cfg.strategy == "knn":
        return knn_graph(original, table, cfg.k)
    return edge_mod_graph(original, table, cfg.k_add, cfg.k_del)
