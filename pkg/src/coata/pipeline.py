"""End-to-end orchestration: preprocessing (propagation, bipartite push,
reconstruction) followed by dual-channel training."""
from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import ait, data, model, tea
from .graph import SparseGraph, normalize, write_edgelist

log = logging.getLogger(__name__)


@dataclass
class RunConfig:
    """Every tunable of a run; serialised verbatim as ``config.json``."""

    # attribute propagation
    h: int = 2
    beta: float = 0.3
    # bipartite push
    alpha: float = 0.2
    r_max: float = 1e-6
    singleton: str = "drop"
    prune_below: float = 0.0
    top_t: int = 256
    kernel: str = "auto"
    # reconstruction
    knn_k: int | str = "auto"
    k_add: int = 1
    k_del: int = 1
    # model and objective
    hidden: int = 64
    proj: int = 32
    dropout: float = 0.5
    tau: float = 0.5
    lambda1: float = 1.0
    lambda2: float = 0.01
    lambda3: float = 0.1
    ce_reduction: str = "mean"
    detach_confidence: bool = False
    t_min: float | None = None
    sharpen: float | None = None
    channel_features: str = "raw"
    ensemble: bool = False
    # optimisation
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 5e-4
    epochs: int = 200
    seed: int = 0
    deterministic: bool = False
    workers: int = 1
    # paths
    data: str | None = None
    out: str | None = None

    def __post_init__(self):
        tea.TeaConfig(self.h, self.beta)
        ait.PprConfig(self.alpha, self.r_max)
        ait.ReconstructionConfig("knn", self.knn_k, self.k_add, self.k_del)
        if self.channel_features not in ("raw", "enriched"):
            raise ValueError("channel_features must be 'raw' or 'enriched'")
        if self.ce_reduction not in ("mean", "sum"):
            raise ValueError("ce_reduction must be 'mean' or 'sum'")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.epochs < 0 or self.workers < 1 or self.top_t < 1:
            raise ValueError("epochs >= 0, workers >= 1 and top_t >= 1 required")
        if self.tau <= 0:
            raise ValueError("tau must be positive")

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in dataclasses.fields(cls)]

    @classmethod
    def from_dict(cls, values: dict) -> "RunConfig":
        unknown = set(values) - set(cls.field_names())
        if unknown:
            raise ValueError(f"unknown config key(s): {', '.join(sorted(unknown))}")
        return cls(**values)

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def effective(self) -> "RunConfig":
        """Apply deterministic mode: single worker, no dropout."""
        if self.deterministic:
            return dataclasses.replace(self, dropout=0.0, workers=1)
        return self

    def train_config(self) -> model.TrainConfig:
        cfg = self.effective()
        objective = model.ObjectiveOptions(
            lambdas=(cfg.lambda1, cfg.lambda2, cfg.lambda3), tau=cfg.tau,
            ce_reduction=cfg.ce_reduction, detach_confidence=cfg.detach_confidence,
            t_min=cfg.t_min, sharpen=cfg.sharpen)
        return model.TrainConfig(hidden=cfg.hidden, proj=cfg.proj, dropout=cfg.dropout, lr=cfg.lr,
                                 momentum=cfg.momentum, weight_decay=cfg.weight_decay,
                                 epochs=cfg.epochs, seed=cfg.seed, objective=objective)


@dataclass
class Augmentation:
    enriched: np.ndarray
    bipartite: ait.BipartiteGraph
    table: ait.PprTable
    knn: SparseGraph
    edge_mod: SparseGraph
    summary: dict = field(default_factory=dict)


def augment(ds: data.Dataset, cfg: RunConfig) -> Augmentation:
    """Propagate attributes, push on the bipartite graph, build both reconstructions."""
    cfg = cfg.effective()
    adj = normalize(ds.graph)
    enriched = tea.propagate(ds.features, adj, tea.TeaConfig(cfg.h, cfg.beta)).h_matrix
    bip = ait.build_bipartite(enriched, cfg.singleton, cfg.prune_below)
    table = ait.all_sources_ppr(bip, ait.PprConfig(cfg.alpha, cfg.r_max), cfg.top_t,
                                cfg.workers, cfg.kernel)
    knn = ait.knn_graph(ds.graph, table, cfg.knn_k)
    emod = ait.edge_mod_graph(ds.graph, table, cfg.k_add, cfg.k_del)
    summary = {
        "nodes": ds.graph.n,
        "original_edges": ds.graph.num_edges,
        "knn_edges": knn.num_edges,
        "edge_mod_edges": emod.num_edges,
        "attributes": bip.n_u,
        "bipartite_edges": bip.num_edges,
        "clamped_negatives": bip.clamped_negatives,
        "zero_columns_removed": bip.dropped_zero,
        "singleton_columns": bip.singletons,
        "pushes": table.pushes,
    }
    return Augmentation(enriched, bip, table, knn, emod, summary)


def write_augmentation(aug: Augmentation, out: Path, ppr_dump: bool = False) -> None:
    out.mkdir(parents=True, exist_ok=True)
    write_edgelist(aug.knn, out / "augmented_edges.knn.tsv")
    write_edgelist(aug.edge_mod, out / "augmented_edges.edgemod.tsv")
    if ppr_dump:
        ait.write_ppr_dump(aug.table, out / "ppr.tsv")


@dataclass
class RunResult:
    train: model.TrainResult
    test_acc: float
    val_acc: float
    embeddings: np.ndarray


def train_on(ds: data.Dataset, cfg: RunConfig, aug_graphs: list[SparseGraph],
             enriched: np.ndarray | None = None) -> RunResult:
    tcfg = cfg.train_config()
    adj = normalize(ds.graph)
    aug_adjs = [normalize(g) for g in aug_graphs]
    x = ds.features
    if cfg.channel_features == "enriched":
        x = enriched if enriched is not None else tea.propagate(x, adj, tea.TeaConfig(cfg.h, cfg.beta)).h_matrix
    result = model.train(adj, aug_adjs, x, ds.labels, tcfg)
    ens = aug_adjs if cfg.ensemble else ()
    test = model.evaluate(result.params, adj, x, ds.labels, "test", ens) if ds.labels.test.any() else float("nan")
    val = model.evaluate(result.params, adj, x, ds.labels, "val", ens) if ds.labels.val.any() else float("nan")
    z = model.gcn_forward(adj, x, result.params).z
    return RunResult(result, test, val, z)


def run(ds: data.Dataset, cfg: RunConfig, out: Path | None = None) -> tuple[Augmentation, RunResult]:
    """Preprocess then train; writes the full artifact set when ``out`` is given."""
    aug = augment(ds, cfg)
    res = train_on(ds, cfg, [aug.knn, aug.edge_mod], aug.enriched)
    if out is not None:
        save_run(out, cfg, aug, res)
    return aug, res


def save_params(params: model.ModelParams, path) -> None:
    np.savez(path, **params.as_dict())


def load_params(path) -> model.ModelParams:
    with np.load(path) as f:
        return model.ModelParams(f["w1"], f["w2"], f["w_proj"])


def save_run(out: Path, cfg: RunConfig, aug: Augmentation | None, res: RunResult) -> None:
    out.mkdir(parents=True, exist_ok=True)
    cfg.write(out / "config.json")
    data.write_metrics(res.train.history, out / "metrics.csv")
    data.write_embeddings(res.embeddings, out / "embeddings.tsv")
    save_params(res.train.params, out / "params.npz")
    if aug is not None:
        write_augmentation(aug, out)
        write_edgelist(aug.knn, out / "augmented_edges.tsv")
    summary = {"test_acc": res.test_acc, "val_acc": res.val_acc, "best_epoch": res.train.best_epoch}
    if aug is not None:
        summary.update(aug.summary)
    with open(out / "summary.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
