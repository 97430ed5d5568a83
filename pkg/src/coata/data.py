"""Dataset files, benchmark statistics checks, planted-partition generator and
run-artifact writers.

A dataset directory holds four UTF-8 text files::

    edges.tsv     u<TAB>v[<TAB>w]           one undirected edge per line
    features.tsv  #n=<n> k=<k> header, then node<TAB>dim<TAB>value triplets
                  (features.csv with n dense comma-separated rows also accepted)
    labels.tsv    node<TAB>class            unlisted nodes are unlabeled
    splits.tsv    node<TAB>train|val|test
"""
from __future__ import annotations

import csv
import hashlib
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .graph import GraphFormatError, LabelSet, SparseGraph, check_features, read_edgelist, write_edgelist

log = logging.getLogger(__name__)

# (nodes, edges, classes, features) as published for the standard benchmarks
KNOWN_STATS = {
    "cora": (2708, 5429, 7, 1433),
    "citeseer": (3327, 4732, 6, 3703),
    "pubmed": (19717, 44338, 3, 500),
    "coauthor-cs": (18333, 163788, 15, 6805),
    "coauthor-phy": (34493, 495924, 5, 8415),
    "chameleon": (2277, 36101, 5, 2325),
    "squirrel": (5201, 217073, 5, 2089),
}

SPLIT_NAMES = ("train", "val", "test")
_HEADER = re.compile(r"#\s*n=(\d+)\s+k=(\d+)\s*$")


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    graph: SparseGraph
    features: np.ndarray
    labels: LabelSet
    name: str
    provenance: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        n = self.graph.n
        check_features(self.features, n)
        if self.labels.n != n:
            raise DatasetError(f"labels cover {self.labels.n} nodes, graph has {n}")

    @property
    def stats(self) -> tuple[int, int, int, int]:
        return self.graph.n, self.graph.num_edges, self.labels.num_classes, self.features.shape[1]


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _read_pairs(path: Path, n: int, cast, what: str):
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\r\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise DatasetError(f"{path}:{lineno}: expected 2 tab-separated fields, got {len(parts)}")
            try:
                node = int(parts[0])
                val = cast(parts[1].strip())
            except ValueError:
                raise DatasetError(f"{path}:{lineno}: cannot parse {what} line {line!r}") from None
            if not 0 <= node < n:
                raise DatasetError(f"{path}:{lineno}: node {node} out of range [0, {n})")
            out.append((node, val, lineno))
    return out


def read_features(path) -> np.ndarray:
    path = Path(path)
    if path.suffix == ".csv":
        return check_features(np.loadtxt(path, delimiter=",", ndmin=2))
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\r\n")
        m = _HEADER.match(header)
        if not m:
            raise DatasetError(f"{path}:1: expected header '#n=<n> k=<k>', got {header!r}")
        n, k = int(m.group(1)), int(m.group(2))
        x = np.zeros((n, k))
        for lineno, raw in enumerate(fh, start=2):
            line = raw.rstrip("\r\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise DatasetError(f"{path}:{lineno}: expected 3 tab-separated fields, got {len(parts)}")
            try:
                i, j, v = int(parts[0]), int(parts[1]), float(parts[2])
            except ValueError:
                raise DatasetError(f"{path}:{lineno}: cannot parse feature triplet") from None
            if not (0 <= i < n and 0 <= j < k):
                raise DatasetError(f"{path}:{lineno}: index ({i}, {j}) outside {n}x{k}")
            x[i, j] = v
    return check_features(x)


def write_features(x: np.ndarray, path) -> None:
    n, k = x.shape
    rows, cols = np.nonzero(x)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"#n={n} k={k}\n")
        for i, j in zip(rows.tolist(), cols.tolist()):
            fh.write(f"{i}\t{j}\t{float(x[i, j])!r}\n")


def check_known_stats(name: str, stats) -> list[str]:
    """Compare ``(n, m, c, k)`` with the published numbers; returns warning strings."""
    ref = KNOWN_STATS.get(name.lower())
    if ref is None:
        return []
    msgs = []
    for label, got, want in zip(("nodes", "edges", "classes", "features"), stats, ref):
        if got != want:
            msgs.append(f"{name}: {label} = {got}, published value is {want}")
    for msg in msgs:
        log.warning(msg)
    return msgs


def load_dataset(path, name: str | None = None) -> Dataset:
    path = Path(path)
    if not path.is_dir():
        raise FileNotFoundError(f"dataset directory not found: {path}")
    feat_path = path / "features.tsv"
    if not feat_path.exists() and (path / "features.csv").exists():
        feat_path = path / "features.csv"
    files = {"edges": path / "edges.tsv", "features": feat_path,
             "labels": path / "labels.tsv", "splits": path / "splits.tsv"}
    for key, f in files.items():
        if not f.exists():
            raise FileNotFoundError(f"missing {key} file: {f}")

    x = read_features(files["features"])
    n = x.shape[0]
    graph, _ = read_edgelist(files["edges"], n=n)

    labels = np.full(n, -1, dtype=np.int64)
    for node, cls, lineno in _read_pairs(files["labels"], n, int, "label"):
        if cls < 0:
            raise DatasetError(f"{files['labels']}:{lineno}: negative class id")
        if labels[node] >= 0:
            raise DatasetError(f"{files['labels']}:{lineno}: node {node} labeled twice")
        labels[node] = cls
    masks = {s: np.zeros(n, dtype=bool) for s in SPLIT_NAMES}
    assigned = np.zeros(n, dtype=bool)
    for node, split, lineno in _read_pairs(files["splits"], n, str, "split"):
        if split not in masks:
            raise DatasetError(f"{files['splits']}:{lineno}: unknown split {split!r}")
        if assigned[node]:
            raise DatasetError(f"{files['splits']}:{lineno}: node {node} assigned to two splits")
        assigned[node] = True
        masks[split][node] = True
    c = int(labels.max()) + 1 if (labels >= 0).any() else 0
    try:
        label_set = LabelSet(labels, c, masks["train"], masks["val"], masks["test"])
    except ValueError as exc:
        raise DatasetError(f"{path}: {exc}") from None

    name = name or path.name
    ds = Dataset(graph, x, label_set, name, {str(f): _sha256(f) for f in files.values()})
    check_known_stats(name, ds.stats)
    return ds


def save_dataset(ds: Dataset, path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    write_edgelist(ds.graph, path / "edges.tsv")
    write_features(ds.features, path / "features.tsv")
    lab = ds.labels
    with open(path / "labels.tsv", "w", encoding="utf-8", newline="\n") as fh:
        for i in np.flatnonzero(lab.labels >= 0).tolist():
            fh.write(f"{i}\t{int(lab.labels[i])}\n")
    with open(path / "splits.tsv", "w", encoding="utf-8", newline="\n") as fh:
        for i in range(lab.n):
            for s in SPLIT_NAMES:
                if lab.mask(s)[i]:
                    fh.write(f"{i}\t{s}\n")


# -- synthetic data -----------------------------------------------------------

@dataclass(frozen=True)
class SbmSpec:
    """Planted partition: ``c`` blocks, edge probability ``p_in`` inside a
    block and ``p_out`` across.  The last block absorbs ``n % c`` nodes."""

    n: int = 400
    c: int = 2
    p_in: float = 0.04
    p_out: float = 0.01
    feature_dim: int = 20
    feature_noise: float = 0.5
    seed: int = 0
    train_per_class: int = 20
    val_per_class: int = 30

    def __post_init__(self):
        if not (0 <= self.p_in <= 1 and 0 <= self.p_out <= 1):
            raise ValueError("edge probabilities must lie in [0, 1]")
        if self.c < 2 or self.n < self.c:
            raise ValueError("need c >= 2 and n >= c")
        if self.feature_dim < self.c:
            raise ValueError("feature_dim must be at least c")
        if self.feature_noise < 0:
            raise ValueError("feature_noise must be non-negative")

    @classmethod
    def with_inter_fraction(cls, n: int, c: int, avg_degree: float, inter_fraction: float, **kw) -> "SbmSpec":
        """Choose ``p_in``/``p_out`` so that about ``inter_fraction`` of the expected edges cross blocks."""
        sizes = block_sizes(n, c)
        intra_pairs = sum(s * (s - 1) / 2 for s in sizes)
        inter_pairs = n * (n - 1) / 2 - intra_pairs
        m = avg_degree * n / 2
        return cls(n=n, c=c, p_in=m * (1 - inter_fraction) / intra_pairs,
                   p_out=m * inter_fraction / inter_pairs, **kw)


def block_sizes(n: int, c: int) -> list[int]:
    sizes = [n // c] * c
    sizes[-1] += n % c
    return sizes


def generate_sbm(spec: SbmSpec) -> Dataset:
    """Planted-partition graph with block-indicator features plus clamped Gaussian noise.

    Features: node ``i`` of class ``j`` gets 1 on the ``j``-th block of
    ``feature_dim // c`` columns, plus ``N(0, feature_noise^2)`` noise on every
    entry, clamped at 0.  Splits: ``train_per_class`` and ``val_per_class``
    nodes per class, the rest test.
    """
    rng = np.random.default_rng(spec.seed)
    sizes = block_sizes(spec.n, spec.c)
    if min(sizes) < spec.train_per_class + spec.val_per_class:
        raise ValueError(f"class of size {min(sizes)} too small for "
                         f"{spec.train_per_class}+{spec.val_per_class} labeled nodes")
    y = np.repeat(np.arange(spec.c), sizes)
    iu, ju = np.triu_indices(spec.n, k=1)
    prob = np.where(y[iu] == y[ju], spec.p_in, spec.p_out)
    keep = rng.random(len(iu)) < prob
    graph = SparseGraph.from_edges(spec.n, np.column_stack([iu[keep], ju[keep]]))

    block = spec.feature_dim // spec.c
    x = np.zeros((spec.n, spec.feature_dim))
    for j in range(spec.c):
        x[y == j, j * block:(j + 1) * block] = 1.0
    x = np.maximum(x + spec.feature_noise * rng.standard_normal(x.shape), 0.0)

    masks = {s: np.zeros(spec.n, dtype=bool) for s in SPLIT_NAMES}
    for j in range(spec.c):
        members = rng.permutation(np.flatnonzero(y == j))
        masks["train"][members[:spec.train_per_class]] = True
        masks["val"][members[spec.train_per_class:spec.train_per_class + spec.val_per_class]] = True
        masks["test"][members[spec.train_per_class + spec.val_per_class:]] = True
    labels = LabelSet(y, spec.c, masks["train"], masks["val"], masks["test"])
    return Dataset(graph, x, labels, f"sbm-n{spec.n}-c{spec.c}-s{spec.seed}", {"generator": repr(spec)})


def edge_homophily(graph: SparseGraph, labels: np.ndarray) -> float:
    """Fraction of edges joining nodes of the same class."""
    pairs, _ = graph.undirected_edges()
    if len(pairs) == 0:
        return float("nan")
    return float(np.mean(labels[pairs[:, 0]] == labels[pairs[:, 1]]))


# -- run artifacts ---------------------------------------------------------------

METRIC_COLUMNS = ("epoch", "ce", "ce_aug", "co", "dpa", "total", "train_acc", "val_acc")


def write_metrics(history, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        for rec in history:
            l = rec.losses
            w.writerow([rec.epoch, repr(l.ce), repr(l.ce_aug), repr(l.co), repr(l.dpa), repr(l.total),
                        repr(rec.train_acc), repr(rec.val_acc)])


def read_metrics(path) -> list[dict[str, float]]:
    with open(path, encoding="utf-8") as fh:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def write_embeddings(z: np.ndarray, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for i, row in enumerate(z.tolist()):
            fh.write(str(i) + "\t" + "\t".join(repr(v) for v in row) + "\n")
