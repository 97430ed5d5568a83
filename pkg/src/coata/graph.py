"""Sparse graph containers, symmetric normalization and edge-list I/O."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

log = logging.getLogger(__name__)


class GraphFormatError(ValueError):
    """Raised for malformed or inconsistent graph input."""


@dataclass(frozen=True)
class SparseGraph:
    """Undirected weighted graph stored with both edge directions.

    ``src``, ``dst`` and ``weight`` are parallel arrays sorted by ``(src, dst)``.
    Use :meth:`from_edges` to build one from an undirected edge list.
    """

    n: int
    src: np.ndarray
    dst: np.ndarray
    weight: np.ndarray

    def __post_init__(self):
        if self.n < 0:
            raise GraphFormatError("node count must be non-negative")
        if not (len(self.src) == len(self.dst) == len(self.weight)):
            raise GraphFormatError("edge arrays have different lengths")
        if len(self.src):
            if self.src.min() < 0 or self.dst.min() < 0 or max(self.src.max(), self.dst.max()) >= self.n:
                raise GraphFormatError(f"node id out of range [0, {self.n})")
            if np.any(self.src == self.dst):
                raise GraphFormatError("self-loops are not allowed in the raw edge set")
            if not np.all(np.isfinite(self.weight)) or np.any(self.weight <= 0):
                raise GraphFormatError("edge weights must be finite and strictly positive")
        for arr in (self.src, self.dst, self.weight):
            arr.setflags(write=False)

    @classmethod
    def from_edges(cls, n: int, edges, weights=None) -> "SparseGraph":
        """Build from undirected pairs; each unordered pair must appear once."""
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if weights is None:
            weights = np.ones(len(edges))
        weights = np.asarray(weights, dtype=np.float64)
        lo = np.minimum(edges[:, 0], edges[:, 1])
        hi = np.maximum(edges[:, 0], edges[:, 1])
        key = lo * max(n, 1) + hi
        if len(np.unique(key)) != len(key):
            raise GraphFormatError("duplicate edge in input")
        src = np.concatenate([lo, hi])
        dst = np.concatenate([hi, lo])
        w = np.concatenate([weights, weights])
        order = np.lexsort((dst, src))
        return cls(n, src[order], dst[order], w[order])

    @classmethod
    def from_scipy(cls, mat) -> "SparseGraph":
        coo = sp.triu(sp.csr_matrix(mat), k=1).tocoo()
        return cls.from_edges(mat.shape[0], np.column_stack([coo.row, coo.col]), coo.data)

    @property
    def num_edges(self) -> int:
        """Number of undirected edges."""
        return len(self.src) // 2

    @cached_property
    def csr(self) -> sp.csr_matrix:
        mat = sp.csr_matrix((self.weight, (self.src, self.dst)), shape=(self.n, self.n))
        mat.sort_indices()
        return mat

    @cached_property
    def degree(self) -> np.ndarray:
        return np.bincount(self.src, weights=self.weight, minlength=self.n).astype(np.float64)

    def neighbors(self, u: int) -> np.ndarray:
        m = self.csr
        return m.indices[m.indptr[u]:m.indptr[u + 1]]

    def undirected_edges(self):
        """Return ``(pairs, weights)`` with ``u < v``, sorted."""
        keep = self.src < self.dst
        return np.column_stack([self.src[keep], self.dst[keep]]), self.weight[keep]

    def edge_set(self) -> set[tuple[int, int]]:
        pairs, _ = self.undirected_edges()
        return {(int(u), int(v)) for u, v in pairs}

    def permute(self, perm) -> "SparseGraph":
        """Relabel node ``i`` as ``perm[i]``."""
        perm = np.asarray(perm)
        pairs, w = self.undirected_edges()
        return SparseGraph.from_edges(self.n, perm[pairs], w)


@dataclass(frozen=True)
class NormalizedAdjacency:
    """``D^-1/2 (A + I) D^-1/2`` with ``D`` the degree of ``A + I``."""

    matrix: sp.csr_matrix
    n: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "n", self.matrix.shape[0])

    def __matmul__(self, other):
        return spmm(self, other)

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()


def normalize(g: SparseGraph) -> NormalizedAdjacency:
    if g.n == 0:
        raise GraphFormatError("cannot normalize an empty graph")
    a_hat = g.csr + sp.identity(g.n, format="csr")
    inv_sqrt = 1.0 / np.sqrt(g.degree + 1.0)
    d = sp.diags(inv_sqrt)
    mat = sp.csr_matrix(d @ a_hat @ d)
    mat.sort_indices()
    return NormalizedAdjacency(mat)


def spmm(adj: NormalizedAdjacency, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != adj.n:
        raise ValueError(f"dimension mismatch: adjacency has {adj.n} rows, features have {x.shape[0]}")
    out = np.asarray(adj.matrix @ x)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("spmm produced non-finite values")
    return out


def check_features(x, n: int | None = None) -> np.ndarray:
    """Validate a dense feature matrix and return it as float64."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"feature matrix must be 2-D, got shape {x.shape}")
    if n is not None and x.shape[0] != n:
        raise ValueError(f"feature matrix has {x.shape[0]} rows, graph has {n} nodes")
    if not np.all(np.isfinite(x)):
        raise ValueError("feature matrix contains NaN or Inf")
    return x


@dataclass(frozen=True)
class LabelSet:
    """Per-node labels (-1 = unlabeled) and boolean split masks."""

    labels: np.ndarray
    num_classes: int
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError("need at least two classes")
        n = len(self.labels)
        for name in ("train", "val", "test"):
            mask = getattr(self, name)
            if mask.shape != (n,):
                raise ValueError(f"{name} mask has wrong shape")
            if np.any(self.labels[mask] < 0):
                raise ValueError(f"{name} split contains unlabeled nodes")
        if np.any((self.train & self.val) | (self.train & self.test) | (self.val & self.test)):
            raise ValueError("splits overlap")
        if np.any(self.labels >= self.num_classes):
            raise ValueError("label id out of range")

    @property
    def n(self) -> int:
        return len(self.labels)

    def mask(self, split: str) -> np.ndarray:
        if split not in ("train", "val", "test"):
            raise ValueError(f"unknown split {split!r}")
        return getattr(self, split)

    def permute(self, perm) -> "LabelSet":
        perm = np.asarray(perm)
        inv = np.empty_like(perm)
        inv[perm] = np.arange(len(perm))
        return LabelSet(self.labels[inv], self.num_classes, self.train[inv], self.val[inv], self.test[inv])


# -- edge-list files --------------------------------------------------------

def _parse_edge_lines(lines, source: str):
    rows = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.rstrip("\r\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) not in (2, 3):
            raise GraphFormatError(f"{source}:{lineno}: expected 2 or 3 tab-separated fields, got {len(parts)}")
        try:
            w = float(parts[2]) if len(parts) == 3 else 1.0
        except ValueError:
            raise GraphFormatError(f"{source}:{lineno}: bad weight {parts[2]!r}") from None
        rows.append((parts[0].strip(), parts[1].strip(), w, lineno))
    return rows


def read_edgelist(path, n: int | None = None, remap: bool = False):
    """Read a tab-separated edge list.

    With ``remap=False`` ids must be integers in ``[0, n)`` (``n`` defaults to
    ``max id + 1``) and the returned mapping is ``None``.  With ``remap=True``
    arbitrary tokens are mapped to dense ids in order of first appearance and
    the mapping ``{token: id}`` is returned alongside the graph.

    A reversed copy of an already-seen edge is accepted when its weight
    matches; a repeated edge (same orientation) is an error.  Self-loops are
    dropped with a warning.
    """
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        rows = _parse_edge_lines(fh, str(path))

    mapping: dict[str, int] | None = {} if remap else None
    seen: dict[tuple[int, int], tuple[float, int, int]] = {}
    self_loops = 0
    for a, b, w, lineno in rows:
        if remap:
            u = mapping.setdefault(a, len(mapping))
            v = mapping.setdefault(b, len(mapping))
        else:
            try:
                u, v = int(a), int(b)
            except ValueError:
                raise GraphFormatError(f"{path}:{lineno}: non-integer node id") from None
            if u < 0 or v < 0 or (n is not None and max(u, v) >= n):
                raise GraphFormatError(f"{path}:{lineno}: node id out of range")
        if not (np.isfinite(w) and w > 0):
            raise GraphFormatError(f"{path}:{lineno}: weight must be positive and finite")
        if u == v:
            self_loops += 1
            continue
        key = (min(u, v), max(u, v))
        if key in seen:
            pw, pu, pline = seen[key]
            if pu == u or pw != w:
                raise GraphFormatError(f"{path}:{lineno}: duplicate edge {a}-{b} (first seen on line {pline})")
            continue
        seen[key] = (w, u, lineno)
    if self_loops:
        log.warning("%s: dropped %d self-loop(s)", path, self_loops)

    if n is None:
        n = len(mapping) if remap else (1 + max((max(k) for k in seen), default=-1))
    pairs = np.array(sorted(seen), dtype=np.int64).reshape(-1, 2)
    weights = np.array([seen[tuple(p)][0] for p in pairs.tolist()], dtype=np.float64)
    return SparseGraph.from_edges(n, pairs, weights), mapping


def write_edgelist(g: SparseGraph, path) -> None:
    """Canonical form: one ``u<TAB>v<TAB>w`` line per undirected edge, ``u < v``, sorted."""
    pairs, w = g.undirected_edges()
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for (u, v), wt in zip(pairs.tolist(), w.tolist()):
            fh.write(f"{u}\t{v}\t{wt!r}\n")


def write_node_map(mapping: dict[str, int], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for token, idx in sorted(mapping.items(), key=lambda kv: kv[1]):
            fh.write(f"{idx}\t{token}\n")


def spectral_norm_estimate(adj: NormalizedAdjacency, iters: int = 200, seed: int = 0) -> float:
    """Power-iteration estimate of the largest singular value."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(adj.n)
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(iters):
        w = adj.matrix @ v
        est = float(np.linalg.norm(w))
        if est == 0.0:
            return 0.0
        v = w / est
    return est
