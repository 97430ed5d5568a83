"""Dual-channel GCN with shared weights, its four loss terms and hand-written
backpropagation, plus the full-batch training loop."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .graph import LabelSet, NormalizedAdjacency

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12


class TrainingDiverged(RuntimeError):
    def __init__(self, msg, history):
        super().__init__(msg)
        self.history = history


# -- parameters ---------------------------------------------------------------

@dataclass
class ModelParams:
    w1: np.ndarray
    w2: np.ndarray
    w_proj: np.ndarray

    NAMES = ("w1", "w2", "w_proj")

    def as_dict(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in self.NAMES}

    def copy(self) -> "ModelParams":
        return ModelParams(self.w1.copy(), self.w2.copy(), self.w_proj.copy())

    def check(self):
        for name, arr in self.as_dict().items():
            if not np.all(np.isfinite(arr)):
                raise FloatingPointError(f"parameter {name} is not finite")


def _glorot(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_params(k: int, hidden: int, c: int, proj: int, seed: int) -> ModelParams:
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    w1 = _glorot(rng, k, hidden)
    w2 = _glorot(rng, hidden, c)
    return ModelParams(w1, w2, _glorot(rng, hidden, proj))


def channel_rng(seed: int, channel: int) -> np.random.Generator:
    """Dropout stream for one channel; channel 0 is the original graph."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(channel,)))


def dropout_mask(rng: np.random.Generator | None, shape, rate: float):
    if rate <= 0.0 or rng is None:
        return None
    return (rng.random(shape) >= rate) / (1.0 - rate)


def softmax(logits: np.ndarray) -> np.ndarray:
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def softmax_backward(probs: np.ndarray, dprobs: np.ndarray) -> np.ndarray:
    return probs * (dprobs - np.sum(dprobs * probs, axis=1, keepdims=True))


# -- single channel -----------------------------------------------------------

@dataclass
class ChannelOutput:
    logits: np.ndarray
    probs: np.ndarray
    hidden: np.ndarray
    z: np.ndarray
    # backward cache
    adj: NormalizedAdjacency = field(repr=False, default=None)
    params: ModelParams = field(repr=False, default=None)
    ax: np.ndarray = field(repr=False, default=None)
    pre: np.ndarray = field(repr=False, default=None)
    hidden_mask: np.ndarray | None = field(repr=False, default=None)
    ah: np.ndarray = field(repr=False, default=None)


def gcn_forward(adj: NormalizedAdjacency, x: np.ndarray, params: ModelParams,
                dropout: float = 0.0, rng: np.random.Generator | None = None) -> ChannelOutput:
    """Two propagation layers: ``softmax(A relu(A X W1) W2)``; ``z = relu(A X W1) W_proj``.

    Dropout (inverted) is applied to ``X`` and to the hidden layer feeding the
    second propagation when ``dropout > 0`` and an ``rng`` is given.
    """
    if not 0.0 <= dropout < 1.0:
        raise ValueError("dropout must lie in [0, 1)")
    if x.shape[0] != adj.n or x.shape[1] != params.w1.shape[0]:
        raise ValueError(f"shape mismatch: adj {adj.n}, x {x.shape}, w1 {params.w1.shape}")
    if params.w2.shape[0] != params.w1.shape[1] or params.w_proj.shape[0] != params.w1.shape[1]:
        raise ValueError("parameter shapes are inconsistent")
    params.check()
    x_mask = dropout_mask(rng, x.shape, dropout)
    xd = x if x_mask is None else x * x_mask
    ax = np.asarray(adj.matrix @ xd)
    pre = ax @ params.w1
    hidden = np.maximum(pre, 0.0)
    h_mask = dropout_mask(rng, hidden.shape, dropout)
    hd = hidden if h_mask is None else hidden * h_mask
    ah = np.asarray(adj.matrix @ hd)
    logits = ah @ params.w2
    return ChannelOutput(logits, softmax(logits), hidden, hidden @ params.w_proj,
                         adj=adj, params=params, ax=ax, pre=pre, hidden_mask=h_mask, ah=ah)


def channel_backward(out: ChannelOutput, dlogits: np.ndarray, dz: np.ndarray | None,
                     grads: dict[str, np.ndarray]) -> None:
    """Accumulate parameter gradients of one channel into ``grads``."""
    p = out.params
    grads["w2"] += out.ah.T @ dlogits
    dhd = np.asarray(out.adj.matrix.T @ (dlogits @ p.w2.T))
    dhidden = dhd if out.hidden_mask is None else dhd * out.hidden_mask
    if dz is not None:
        grads["w_proj"] += out.hidden.T @ dz
        dhidden = dhidden + dz @ p.w_proj.T
    dpre = np.where(out.pre > 0, dhidden, 0.0)
    grads["w1"] += out.ax.T @ dpre


# -- losses -------------------------------------------------------------------

def _train_targets(labels: LabelSet, mask):
    mask = labels.train if mask is None else mask
    idx = np.flatnonzero(mask)
    if len(idx) == 0:
        raise ValueError("no labeled nodes in the supervised split")
    return idx, labels.labels[idx]


def loss_ce(probs: np.ndarray, labels: LabelSet, mask=None, reduction: str = "mean") -> float:
    """Cross-entropy over the training nodes (``reduction`` is ``mean`` or ``sum``)."""
    idx, y = _train_targets(labels, mask)
    picked = probs[idx, y]
    if np.any(picked <= 0.0):
        warnings.warn("zero probability at a true label; clamped", RuntimeWarning, stacklevel=2)
        picked = np.maximum(picked, PROB_FLOOR)
    total = -np.sum(np.log(picked))
    if reduction == "mean":
        return float(total / len(idx))
    if reduction == "sum":
        return float(total)
    raise ValueError(f"unknown reduction {reduction!r}")


def ce_grad_logits(probs: np.ndarray, labels: LabelSet, mask=None, reduction: str = "mean") -> np.ndarray:
    idx, y = _train_targets(labels, mask)
    g = np.zeros_like(probs)
    g[idx] = probs[idx]
    g[idx, y] -= 1.0
    if reduction == "mean":
        g /= len(idx)
    return g


def loss_consistency(channel_probs: Sequence[np.ndarray], y_agg: np.ndarray) -> float:
    """``(1/S) sum_s sum_i ||y_agg_i - P_s,i||^2``; ``y_agg`` is a constant."""
    if len(channel_probs) == 0:
        raise ValueError("need at least one augmented channel")
    for p in channel_probs:
        if p.shape != y_agg.shape:
            raise ValueError(f"shape mismatch {p.shape} vs {y_agg.shape}")
    return float(sum(np.sum((y_agg - p) ** 2) for p in channel_probs) / len(channel_probs))


def aggregate_predictions(all_probs: Sequence[np.ndarray], sharpen: float | None = None) -> np.ndarray:
    """Mean of the channel predictions, optionally sharpened with temperature ``sharpen``."""
    agg = np.mean(all_probs, axis=0)
    if sharpen:
        agg = agg ** (1.0 / sharpen)
        agg /= agg.sum(axis=1, keepdims=True)
    return agg


@dataclass
class Prototypes:
    p: np.ndarray
    counts: np.ndarray
    valid: np.ndarray
    # per-node assignment (-1 = excluded), confidence weight, and whether the
    # weight came from a prediction (and so depends on the parameters)
    assign: np.ndarray = field(repr=False, default=None)
    t: np.ndarray = field(repr=False, default=None)
    predicted: np.ndarray = field(repr=False, default=None)


def allocate_prototypes(z: np.ndarray, probs: np.ndarray, labels: LabelSet,
                        labeled=None, t_min: float | None = None) -> Prototypes:
    """Confidence-weighted class means of the embeddings.

    Labeled nodes (the training split unless ``labeled`` is given) join their
    true class with weight 1; every other node joins its predicted class with
    weight equal to its top probability.
    """
    n, c = probs.shape
    if z.shape[0] != n or labels.n != n:
        raise ValueError("z, probs and labels disagree on the node count")
    labeled = labels.train if labeled is None else labeled
    assign = np.argmax(probs, axis=1)
    t = probs[np.arange(n), assign].copy()
    assign[labeled] = labels.labels[labeled]
    t[labeled] = 1.0
    predicted = ~labeled
    if t_min is not None:
        assign = np.where(predicted & (t < t_min), -1, assign)
    p = np.zeros((c, z.shape[1]))
    counts = np.zeros(c)
    for j in range(c):
        members = assign == j
        counts[j] = t[members].sum()
        if counts[j] > 0:
            p[j] = t[members] @ z[members] / counts[j]
    return Prototypes(p, counts, counts > 0, assign, t, predicted)


def _cosine_parts(m: np.ndarray):
    norms = np.linalg.norm(m, axis=1)
    unit = np.divide(m, norms[:, None], out=np.zeros_like(m), where=norms[:, None] > 0)
    return unit, norms


def _unit_backward(unit, norms, dunit):
    # d(u/|u|) pulled back to u; zero-norm rows get zero gradient
    radial = np.sum(dunit * unit, axis=1, keepdims=True)
    return np.divide(dunit - radial * unit, norms[:, None], out=np.zeros_like(dunit),
                     where=norms[:, None] > 0)


def dpa_loss_and_grad(p: np.ndarray, p_prime: np.ndarray, valid: np.ndarray, tau: float):
    """Symmetric prototype contrastive loss and its gradients w.r.t. both prototype matrices."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    idx = np.flatnonzero(valid)
    dp = np.zeros_like(p)
    dpp = np.zeros_like(p_prime)
    cv = len(idx)
    if cv < 2:
        warnings.warn("fewer than two valid classes; prototype alignment skipped",
                      RuntimeWarning, stacklevel=2)
        return 0.0, dp, dpp
    u, un = _cosine_parts(p[idx])
    v, vn = _cosine_parts(p_prime[idx])
    s = (u @ v.T) / tau
    off = ~np.eye(cv, dtype=bool)
    diag = np.diag(s)

    def lse_off(m):
        masked = np.where(off, m, -np.inf)
        top = masked.max(axis=1, keepdims=True)
        e = np.where(off, np.exp(masked - top), 0.0)
        tot = e.sum(axis=1, keepdims=True)
        return (top + np.log(tot)).ravel(), e / tot

    lse_rows, soft_rows = lse_off(s)
    lse_cols, soft_cols = lse_off(s.T)
    loss = float(np.sum(-2.0 * diag + lse_rows + lse_cols) / (2.0 * cv))

    ds = soft_rows + soft_cols.T
    ds[np.diag_indices(cv)] -= 2.0
    ds /= 2.0 * cv
    dcos = ds / tau
    dp[idx] = _unit_backward(u, un, dcos @ v)
    dpp[idx] = _unit_backward(v, vn, dcos.T @ u)
    return loss, dp, dpp


def loss_dpa(p: Prototypes, p_prime: Prototypes, tau: float = 0.5) -> float:
    return dpa_loss_and_grad(p.p, p_prime.p, p.valid & p_prime.valid, tau)[0]


def prototype_backward(proto: Prototypes, z: np.ndarray, probs: np.ndarray, dproto: np.ndarray,
                       detach_confidence: bool = False):
    """Pull a prototype gradient back to ``(dz, dprobs)``."""
    dz = np.zeros_like(z)
    dprobs = np.zeros_like(probs)
    members = proto.assign >= 0
    rows = np.flatnonzero(members)
    cls = proto.assign[rows]
    scale = proto.t[rows] / proto.counts[cls]
    dz[rows] = scale[:, None] * dproto[cls]
    if not detach_confidence:
        pred = rows[proto.predicted[rows]]
        pcls = proto.assign[pred]
        dt = np.sum(dproto[pcls] * (z[pred] - proto.p[pcls]), axis=1) / proto.counts[pcls]
        top = np.argmax(probs[pred], axis=1)
        dprobs[pred, top] += dt
    return dz, dprobs


# -- dual-channel objective -----------------------------------------------------

@dataclass(frozen=True)
class LossBreakdown:
    ce: float
    ce_aug: float
    co: float
    dpa: float
    total: float
    lambdas: tuple[float, float, float]


@dataclass(frozen=True)
class ObjectiveOptions:
    lambdas: tuple[float, float, float] = (1.0, 0.01, 0.1)
    tau: float = 0.5
    ce_reduction: str = "mean"
    detach_confidence: bool = False
    t_min: float | None = None
    sharpen: float | None = None


@dataclass
class ForwardCache:
    outputs: list[ChannelOutput]
    protos: list[Prototypes]
    y_agg: np.ndarray
    labels: LabelSet
    options: ObjectiveOptions
    params: ModelParams


def forward_all(params: ModelParams, adj: NormalizedAdjacency, aug_adjs: Sequence[NormalizedAdjacency],
                x: np.ndarray, labels: LabelSet, options: ObjectiveOptions = ObjectiveOptions(),
                dropout: float = 0.0, rngs: Sequence[np.random.Generator] | None = None,
                y_agg: np.ndarray | None = None):
    """Run the original channel and every augmented channel with the same parameters.

    Returns ``(LossBreakdown, ForwardCache)``.  Augmented-channel cross-entropy
    and alignment are averaged over the augmented channels; the pseudo-label
    is the mean of all channel predictions and carries no gradient; pass
    ``y_agg`` to pin it (finite-difference checks need the frozen value).
    """
    if len(aug_adjs) < 1:
        raise ValueError("need at least one augmented adjacency")
    adjs = [adj, *aug_adjs]
    rngs = rngs if rngs is not None else [None] * len(adjs)
    outputs = [gcn_forward(a, x, params, dropout, r) for a, r in zip(adjs, rngs)]
    n_aug = len(aug_adjs)
    red = options.ce_reduction
    ce = loss_ce(outputs[0].probs, labels, reduction=red)
    ce_aug = sum(loss_ce(o.probs, labels, reduction=red) for o in outputs[1:]) / n_aug
    if y_agg is None:
        y_agg = aggregate_predictions([o.probs for o in outputs], options.sharpen)
    co = loss_consistency([o.probs for o in outputs[1:]], y_agg)
    protos = [allocate_prototypes(o.z, o.probs, labels, t_min=options.t_min) for o in outputs]
    dpa = 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for pr in protos[1:]:
            dpa += loss_dpa(protos[0], pr, options.tau)
    dpa /= n_aug
    l1, l2, l3 = options.lambdas
    total = ce + l1 * ce_aug + l2 * co + l3 * dpa
    cache = ForwardCache(outputs, protos, y_agg, labels, options, params)
    return LossBreakdown(ce, ce_aug, co, dpa, total, tuple(options.lambdas)), cache


def backward(cache: ForwardCache) -> dict[str, np.ndarray]:
    """Exact gradients of the total loss w.r.t. ``w1``, ``w2`` and ``w_proj``."""
    opt = cache.options
    l1, l2, l3 = opt.lambdas
    outs = cache.outputs
    n_aug = len(outs) - 1
    red = opt.ce_reduction
    params = cache.params
    grads = {k: np.zeros_like(v) for k, v in params.as_dict().items()}

    dprobs = [np.zeros_like(o.probs) for o in outs]
    dlogits = [np.zeros_like(o.logits) for o in outs]
    dz = [np.zeros_like(o.z) for o in outs]

    dlogits[0] += ce_grad_logits(outs[0].probs, cache.labels, reduction=red)
    for s in range(1, len(outs)):
        dlogits[s] += (l1 / n_aug) * ce_grad_logits(outs[s].probs, cache.labels, reduction=red)
        dprobs[s] += (l2 * 2.0 / n_aug) * (outs[s].probs - cache.y_agg)

    if l3 != 0.0:
        p0 = cache.protos[0]
        for s in range(1, len(outs)):
            ps = cache.protos[s]
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                _, gp, gpp = dpa_loss_and_grad(p0.p, ps.p, p0.valid & ps.valid, opt.tau)
            for ch, proto, gproto in ((0, p0, gp), (s, ps, gpp)):
                dz_c, dpr_c = prototype_backward(proto, outs[ch].z, outs[ch].probs,
                                                 (l3 / n_aug) * gproto, opt.detach_confidence)
                dz[ch] += dz_c
                dprobs[ch] += dpr_c

    for ch, out in enumerate(outs):
        dl = dlogits[ch] + softmax_backward(out.probs, dprobs[ch])
        channel_backward(out, dl, dz[ch], grads)
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for {name}")
    return grads


# -- training -------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    hidden: int = 64
    proj: int = 32
    dropout: float = 0.5
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 5e-4
    epochs: int = 200
    seed: int = 0
    objective: ObjectiveOptions = ObjectiveOptions()

    def with_lambdas(self, *lambdas) -> "TrainConfig":
        return replace(self, objective=replace(self.objective, lambdas=tuple(lambdas)))


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    losses: LossBreakdown
    train_acc: float
    val_acc: float


@dataclass
class TrainResult:
    params: ModelParams
    history: list[EpochRecord]
    best_epoch: int


def sgd_step(params: ModelParams, grads: dict, velocity: dict, lr: float, momentum: float,
             weight_decay: float) -> None:
    for name in params.NAMES:
        w = getattr(params, name)
        g = grads[name] + weight_decay * w if weight_decay else grads[name]
        if momentum:
            velocity[name] = momentum * velocity[name] + g
            g = velocity[name]
        setattr(params, name, w - lr * g)


def predict(params: ModelParams, adj: NormalizedAdjacency, x: np.ndarray,
            ensemble: Sequence[NormalizedAdjacency] = ()) -> np.ndarray:
    probs = gcn_forward(adj, x, params).probs
    if ensemble:
        probs = np.mean([probs, *(gcn_forward(a, x, params).probs for a in ensemble)], axis=0)
    return probs


def accuracy(probs: np.ndarray, labels: LabelSet, split: str) -> float:
    mask = labels.mask(split)
    if not mask.any():
        raise ValueError(f"split {split!r} is empty")
    return float(np.mean(np.argmax(probs[mask], axis=1) == labels.labels[mask]))


def evaluate(params: ModelParams, adj: NormalizedAdjacency, x: np.ndarray, labels: LabelSet,
             split: str = "test", ensemble: Sequence[NormalizedAdjacency] = ()) -> float:
    """Accuracy on ``split`` using the original channel (or the channel mean with ``ensemble``)."""
    return accuracy(predict(params, adj, x, ensemble), labels, split)


def train(adj: NormalizedAdjacency, aug_adjs: Sequence[NormalizedAdjacency], x: np.ndarray,
          labels: LabelSet, cfg: TrainConfig, params: ModelParams | None = None) -> TrainResult:
    """Full-batch gradient descent over the dual-channel objective.

    Returns the parameters of the epoch with the best validation accuracy
    (earliest on ties; the initial parameters when ``epochs == 0``).
    """
    if params is None:
        params = init_params(x.shape[1], cfg.hidden, labels.num_classes, cfg.proj, cfg.seed)
    rngs = [channel_rng(cfg.seed, ch) for ch in range(1 + len(aug_adjs))]
    velocity = {k: np.zeros_like(v) for k, v in params.as_dict().items()}
    history: list[EpochRecord] = []
    best = (-1.0, 0, params.copy())
    has_val = bool(labels.val.any())
    for epoch in range(1, cfg.epochs + 1):
        losses, cache = forward_all(params, adj, aug_adjs, x, labels, cfg.objective, cfg.dropout, rngs)
        if not np.isfinite(losses.total):
            raise TrainingDiverged(f"non-finite loss at epoch {epoch}", history)
        grads = backward(cache)
        sgd_step(params, grads, velocity, cfg.lr, cfg.momentum, cfg.weight_decay)
        probs = predict(params, adj, x)
        rec = EpochRecord(epoch, losses, accuracy(probs, labels, "train"),
                          accuracy(probs, labels, "val") if has_val else float("nan"))
        history.append(rec)
        score = rec.val_acc if has_val else rec.train_acc
        if score > best[0]:
            best = (score, epoch, params.copy())
    return TrainResult(best[2], history, best[1])
