"""Oracle-backed property checks at desk scale.

Each check returns a :class:`CheckResult` carrying the measured quantity and
the margin to its tolerance, so reports show how close every property came
to failing.
"""
from __future__ import annotations

import time
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import ait, model, tea
from .graph import LabelSet, SparseGraph, normalize, spectral_norm_estimate
from .oracles import dense_fixed_point, dense_two_hop_ppr, finite_diff_grad

GRAD_REL_TOL = 1e-4
GRAD_DENOM_FLOOR = 1e-8


@dataclass
class CheckResult:
    name: str
    passed: bool
    measured: float
    tolerance: float
    detail: str = ""
    seconds: float = 0.0

    @property
    def margin(self) -> float:
        return self.tolerance - self.measured

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status}  {self.name:<28} measured={self.measured:.3e} tol={self.tolerance:.1e} "
                f"margin={self.margin:.3e}  {self.detail}".rstrip())


# -- random instances -----------------------------------------------------------

def random_graph(rng, n: int, p: float) -> SparseGraph:
    iu, ju = np.triu_indices(n, k=1)
    keep = rng.random(len(iu)) < p
    w = rng.uniform(0.5, 2.0, keep.sum())
    return SparseGraph.from_edges(n, np.column_stack([iu[keep], ju[keep]]), w)


def random_bipartite(rng, n_v: int, n_u: int, density: float) -> ait.BipartiteGraph:
    w = rng.uniform(0.05, 1.0, (n_v, n_u)) * (rng.random((n_v, n_u)) < density)
    return ait.BipartiteGraph.from_matrix(w)


def random_labels(rng, n: int, c: int, n_train: int) -> LabelSet:
    y = rng.integers(0, c, n)
    y[:c] = np.arange(c)
    train = np.zeros(n, dtype=bool)
    train[:n_train] = True
    val = np.zeros(n, dtype=bool)
    val[n_train:n_train + 2] = True
    return LabelSet(y, c, train, val, np.zeros(n, dtype=bool))


# -- push PPR -------------------------------------------------------------------

def push_vs_oracle(instances: int = 50, r_max: float = 1e-8, seed: int = 0):
    """Worst absolute gap, overshoot and mass error of the push against the dense reference."""
    rng = np.random.default_rng(seed)
    gap = over = mass = 0.0
    for _ in range(instances):
        n_v = int(rng.integers(20, 200))
        n_u = int(rng.integers(5, 300 - n_v))
        g = random_bipartite(rng, n_v, n_u, float(rng.uniform(0.03, 0.2)))
        alpha = float(rng.uniform(0.1, 0.6))
        s = int(rng.integers(n_v))
        res = ait.push_ppr(g, s, ait.PprConfig(alpha, r_max))
        pi, r = res.dense(n_v)
        ref = dense_two_hop_ppr(g, s, alpha, iters=4000)
        gap = max(gap, float(np.abs(pi - ref).max()))
        over = max(over, float((pi - ref).max()))
        mass = max(mass, abs(pi.sum() + r.sum() - 1.0))
    return gap, over, mass


def check_push(instances: int = 20) -> list[CheckResult]:
    t = time.perf_counter()
    gap, over, mass = push_vs_oracle(instances)
    dt = time.perf_counter() - t
    return [
        CheckResult("push_ppr max gap", gap <= 1e-6, gap, 1e-6, f"{instances} graphs", dt),
        CheckResult("push_ppr underestimate", over <= 1e-12, max(over, 0.0), 1e-12),
        CheckResult("push_ppr mass conservation", mass <= 1e-10, mass, 1e-10),
    ]


def check_lower_bound(cases: int = 40, seed: int = 3) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = np.inf
    done = 0
    while done < cases:
        g = random_bipartite(rng, int(rng.integers(4, 12)), int(rng.integers(2, 8)), 0.4)
        s, t = (int(v) for v in rng.integers(0, g.n_v, 2))
        c = int(rng.integers(1, 3))
        alpha = float(rng.uniform(0.1, 0.9))
        cert = ait.lower_bound(g, s, t, c, alpha)
        if cert.path_count == 0:
            continue
        pi = dense_two_hop_ppr(g, s, alpha, iters=3000)
        worst = min(worst, pi[t] - cert.bound)
        done += 1
    return CheckResult("bipartite lower bound", worst >= 0, -worst, 0.0,
                       f"{cases} cases, smallest slack {worst:.3e}")


# -- attribute propagation -------------------------------------------------------

def check_tea(instances: int = 8, seed: int = 1) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    decay_excess = -np.inf
    limit_gap = 0.0
    for i in range(instances):
        g = random_graph(rng, int(rng.integers(10, 40)), 0.15)
        adj = normalize(g)
        x = rng.standard_normal((g.n, 4))
        beta = (0.1, 0.3, 0.5, 0.9)[i % 4]
        star = dense_fixed_point(x, adj, beta)
        trace = tea.propagation_trace(x, adj, beta, 50)
        e0 = np.linalg.norm(trace[0] - star)
        for l, xl in enumerate(trace):
            decay_excess = max(decay_excess, np.linalg.norm(xl - star) - (1 - beta) ** l * e0)
        far = tea.propagate(x, adj, tea.TeaConfig(500, beta)).h_matrix
        limit_gap = max(limit_gap, float(np.abs(far - star).max()))
    return [
        CheckResult("propagation geometric decay", decay_excess <= 1e-9, max(decay_excess, 0.0), 1e-9),
        CheckResult("propagation fixed point", limit_gap <= 1e-9, limit_gap, 1e-9),
    ]


def check_homophily(triples: int = 1000, seed: int = 2) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(triples):
        p0, beta, l = rng.random(), rng.random(), int(rng.integers(0, 51))
        worst = max(worst, abs(tea.homophily_schedule(p0, beta, l) - tea.homophily_closed_form(p0, beta, l)))
    return CheckResult("homophily schedule", worst <= 1e-12, worst, 1e-12, f"{triples} triples")


def check_normalization(seed: int = 4) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(5):
        adj = normalize(random_graph(rng, 60, 0.1))
        worst = max(worst, spectral_norm_estimate(adj, iters=200, seed=seed))
    return CheckResult("normalized spectral norm", worst <= 1 + 1e-9, worst, 1 + 1e-9)


# -- gradients --------------------------------------------------------------------

def grad_instance(seed: int, n: int = 12, k: int = 5, c: int = 3, hidden: int = 6, proj: int = 4):
    rng = np.random.default_rng(seed)
    adj = normalize(random_graph(rng, n, 0.3))
    augs = [normalize(random_graph(rng, n, 0.3)) for _ in range(2)]
    x = rng.random((n, k))
    labels = random_labels(rng, n, c, n_train=5)
    params = model.init_params(k, hidden, c, proj, seed)
    return adj, augs, x, labels, params


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = GRAD_DENOM_FLOOR) -> float:
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))


def gradient_error(seed: int, lambdas, backward: Callable = model.backward, fd_step: float = 1e-5) -> float:
    """Largest elementwise relative error between analytic and central-difference gradients."""
    adj, augs, x, labels, params = grad_instance(seed)
    opt = model.ObjectiveOptions(lambdas=tuple(lambdas))
    _, cache = model.forward_all(params, adj, augs, x, labels, opt)
    analytic = backward(cache)

    def loss(d):
        p = model.ModelParams(d["w1"], d["w2"], d["w_proj"])
        return model.forward_all(p, adj, augs, x, labels, opt, y_agg=cache.y_agg)[0].total

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        numeric = finite_diff_grad(loss, params.as_dict(), fd_step)
    return max(relative_error(analytic[k], numeric[k]) for k in analytic)


# loss terms in isolation, then the combined objective
GRAD_CASES = {
    "ce": (0.0, 0.0, 0.0),
    "ce_aug": (1.0, 0.0, 0.0),
    "co": (0.0, 1.0, 0.0),
    "dpa": (0.0, 0.0, 1.0),
    "combined": (1.0, 0.5, 0.1),
}


def check_gradients(instances: int = 3, backward: Callable = model.backward) -> CheckResult:
    worst, where = 0.0, ""
    for seed in range(instances):
        for term, lam in GRAD_CASES.items():
            err = gradient_error(seed, lam, backward)
            if err > worst:
                worst, where = err, f"{term}, seed {seed}"
    return CheckResult("gradient fidelity", worst <= GRAD_REL_TOL, worst, GRAD_REL_TOL, f"worst: {where}")


# -- prototype alignment -----------------------------------------------------------

def align_prototypes(c: int, dim: int = 16, tau: float = 0.5, steps: int = 2000, lr: float = 0.5,
                     seed: int = 0):
    """Gradient descent on the alignment loss with prototypes as free parameters.

    Returns ``(min_j cos(p_j, p'_j), min_j [cos(p_j, p'_j) - max_{q != j} cos(p_j, p'_q)])``.
    """
    rng = np.random.default_rng(seed)
    p = rng.standard_normal((c, dim))
    pp = rng.standard_normal((c, dim))
    valid = np.ones(c, dtype=bool)
    for _ in range(steps):
        _, gp, gpp = model.dpa_loss_and_grad(p, pp, valid, tau)
        p -= lr * gp
        pp -= lr * gpp
    u = p / np.linalg.norm(p, axis=1, keepdims=True)
    v = pp / np.linalg.norm(pp, axis=1, keepdims=True)
    cos = u @ v.T
    diag = np.diag(cos)
    off = np.where(np.eye(c, dtype=bool), -np.inf, cos).max(axis=1)
    return float(diag.min()), float(np.min(diag - off))


def check_alignment(seeds=range(5), classes=(3, 8)) -> list[CheckResult]:
    worst_cos, worst_margin = 1.0, np.inf
    for c in classes:
        for s in seeds:
            cos, margin = align_prototypes(c, seed=s)
            worst_cos = min(worst_cos, cos)
            worst_margin = min(worst_margin, margin)
    return [
        CheckResult("prototype alignment cos", worst_cos >= 0.99, 1 - worst_cos, 0.01),
        CheckResult("prototype separation", worst_margin >= 0.05, -worst_margin, -0.05,
                    f"smallest margin {worst_margin:.3f}"),
    ]


# -- reconstruction ------------------------------------------------------------------

def check_reconstruction(seed: int = 5) -> CheckResult:
    rng = np.random.default_rng(seed)
    g = random_graph(rng, 40, 0.1)
    bip = random_bipartite(rng, 40, 15, 0.2)
    table = ait.all_sources_ppr(bip, ait.PprConfig(0.2, 1e-6), top_t=20)
    knn = ait.knn_graph(g, table, 3)
    emod = ait.edge_mod_graph(g, table, 2, 1)
    symmetric = (knn.csr != knn.csr.T).nnz == 0 and (emod.csr != emod.csr.T).nnz == 0
    loops = int(knn.csr.diagonal().astype(bool).sum() + emod.csr.diagonal().astype(bool).sum())
    removed = 0
    for v in range(g.n):
        removed = max(removed, len(set(g.neighbors(v).tolist()) - set(emod.neighbors(v).tolist())))
    ok = symmetric and loops == 0 and removed <= 1
    return CheckResult("reconstruction invariants", ok, float(removed), 1.0,
                       f"symmetric={symmetric} self_loops={loops} max_deleted_per_node={removed}")


def run_all(inject: str | None = None, quick: bool = False) -> list[CheckResult]:
    """Run every property check; ``inject="gradient"`` corrupts the backward pass."""
    backward = model.backward
    if inject == "gradient":
        def backward(cache):
            grads = model.backward(cache)
            grads["w1"] = grads["w1"] * 1.01
            return grads
    elif inject is not None:
        raise ValueError(f"unknown fault {inject!r}")

    results: list[CheckResult] = []
    steps = [
        lambda: check_normalization(),
        lambda: check_tea(4 if quick else 8),
        lambda: check_homophily(),
        lambda: check_push(10 if quick else 20),
        lambda: check_lower_bound(20 if quick else 40),
        lambda: check_gradients(1 if quick else 3, backward),
        lambda: check_alignment(range(2) if quick else range(5)),
        lambda: check_reconstruction(),
    ]
    for step in steps:
        t = time.perf_counter()
        out = step()
        out = out if isinstance(out, list) else [out]
        dt = time.perf_counter() - t
        for r in out:
            r.seconds = r.seconds or dt
        results.extend(out)
    return results
