"""Plain two-layer GCN trained on the original graph only.

Kept separate from the dual-channel model so that the zero-weighted dual
objective can be checked against it.  Shares only initialisation and the
dropout random streams.
"""
from __future__ import annotations

import numpy as np

from .graph import LabelSet, NormalizedAdjacency
from .model import (EpochRecord, LossBreakdown, ModelParams, TrainConfig, TrainingDiverged,
                    TrainResult, channel_rng, init_params)


def _forward(a, x, w1, w2, rate, rng):
    if rate > 0 and rng is not None:
        m1 = (rng.random(x.shape) >= rate) / (1.0 - rate)
        ax = np.asarray(a @ (x * m1))
    else:
        ax = np.asarray(a @ x)
    pre = ax @ w1
    h = np.maximum(pre, 0.0)
    m2 = None
    if rate > 0 and rng is not None:
        m2 = (rng.random(h.shape) >= rate) / (1.0 - rate)
        h = h * m2
    ah = np.asarray(a @ h)
    logits = ah @ w2
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    return ax, pre, m2, ah, e / e.sum(axis=1, keepdims=True)


def train_gcn(adj: NormalizedAdjacency, x: np.ndarray, labels: LabelSet, cfg: TrainConfig,
              params: ModelParams | None = None) -> TrainResult:
    """Mean cross-entropy on the training split, momentum gradient descent."""
    if params is None:
        params = init_params(x.shape[1], cfg.hidden, labels.num_classes, cfg.proj, cfg.seed)
    a = adj.matrix
    w1, w2 = params.w1.copy(), params.w2.copy()
    v1, v2 = np.zeros_like(w1), np.zeros_like(w2)
    rng = channel_rng(cfg.seed, 0)
    idx = np.flatnonzero(labels.train)
    y = labels.labels[idx]
    val = labels.val.any()
    history = []
    best = (-1.0, 0, (w1.copy(), w2.copy()))

    def acc(probs, mask):
        return float(np.mean(np.argmax(probs[mask], axis=1) == labels.labels[mask]))

    for epoch in range(1, cfg.epochs + 1):
        ax, pre, m2, ah, probs = _forward(a, x, w1, w2, cfg.dropout, rng)
        picked = np.maximum(probs[idx, y], 1e-12)
        ce = float(-np.sum(np.log(picked)) / len(idx))
        if not np.isfinite(ce):
            raise TrainingDiverged(f"non-finite loss at epoch {epoch}", history)

        dlogits = np.zeros_like(probs)
        dlogits[idx] = probs[idx]
        dlogits[idx, y] -= 1.0
        dlogits /= len(idx)
        g2 = ah.T @ dlogits
        dh = np.asarray(a.T @ (dlogits @ w2.T))
        if m2 is not None:
            dh = dh * m2
        g1 = ax.T @ np.where(pre > 0, dh, 0.0)

        if cfg.weight_decay:
            g1 = g1 + cfg.weight_decay * w1
            g2 = g2 + cfg.weight_decay * w2
        if cfg.momentum:
            v1 = cfg.momentum * v1 + g1
            v2 = cfg.momentum * v2 + g2
            g1, g2 = v1, v2
        w1 = w1 - cfg.lr * g1
        w2 = w2 - cfg.lr * g2

        probs = _forward(a, x, w1, w2, 0.0, None)[-1]
        rec = EpochRecord(epoch, LossBreakdown(ce, 0.0, 0.0, 0.0, ce, (0.0, 0.0, 0.0)),
                          acc(probs, labels.train), acc(probs, labels.val) if val else float("nan"))
        history.append(rec)
        score = rec.val_acc if val else rec.train_acc
        if score > best[0]:
            best = (score, epoch, (w1.copy(), w2.copy()))
    w1b, w2b = best[2]
    return TrainResult(ModelParams(w1b, w2b, params.w_proj.copy()), history, best[1])
