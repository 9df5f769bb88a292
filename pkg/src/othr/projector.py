"""Projector from visual descriptors into the word-embedding space.

A 3-layer ReLU MLP trained on ``sup + lambda_ot * ot`` where ``sup`` is the
mean squared distance between projected seeds/pseudo-labels and their word
embeddings, and ``ot`` is the entropic transport objective between all
projected descriptors and the lexicon under its prior. The transport
gradient holds the optimal plan fixed (envelope rule).
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .nn import Adam, TrainingError, he_init, load_params, relu, save_params
from .ot import SinkhornOptions, TransportPlan, cost_matrix, entropic_term, sinkhorn

log = logging.getLogger(__name__)


def init_params(in_dim: int, out_dim: int, rng: np.random.Generator, hidden=(128, 128)) -> dict:
    sizes = (in_dim, *hidden, out_dim)
    p = {}
    for k, (a, b) in enumerate(zip(sizes[:-1], sizes[1:]), 1):
        # small output layer: projections start near the embedding origin
        p[f"W{k}"] = he_init(rng, a, b) if k < len(sizes) - 1 else rng.normal(0, 0.1 / np.sqrt(a), (a, b))
        p[f"b{k}"] = np.zeros(b)
    return p


def _n_layers(params):
    return sum(1 for k in params if k.startswith("W"))


def _forward(params, Z):
    acts = [Z]
    pre = []
    x = Z
    L = _n_layers(params)
    for k in range(1, L + 1):
        a = x @ params[f"W{k}"] + params[f"b{k}"]
        pre.append(a)
        x = relu(a) if k < L else a
        acts.append(x)
    return x, (acts, pre)


def _backward(params, cache, d_out):
    acts, pre = cache
    L = _n_layers(params)
    g = {}
    d = d_out
    for k in range(L, 0, -1):
        if k < L:
            d = d * (pre[k - 1] > 0)
        g[f"W{k}"] = acts[k - 1].T @ d
        g[f"b{k}"] = d.sum(axis=0)
        d = d @ params[f"W{k}"].T
    return g


def project(params: dict, z) -> np.ndarray:
    """Map descriptors ``(D,)`` or ``(N, D)`` into the embedding space."""
    Z = np.asarray(z, dtype=np.float64)
    if Z.shape[-1] != params["W1"].shape[0]:
        raise ValueError(f"descriptor dimension {Z.shape[-1]} != projector input {params['W1'].shape[0]}")
    out, _ = _forward(params, np.atleast_2d(Z))
    return out[0] if Z.ndim == 1 else out


def sup_loss(params: dict, Z, word_idx, points) -> tuple[float, dict]:
    """Mean squared distance between ``g(z_i)`` and ``e_{y_i}``; returns ``(loss, grads)``."""
    Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
    word_idx = np.asarray(word_idx, dtype=int)
    if len(Z) == 0:
        raise ValueError("supervised loss needs at least one aligned pair")
    if len(word_idx) != len(Z):
        raise ValueError("one word index per descriptor required")
    E = np.asarray(points, dtype=np.float64)
    if np.any(word_idx < 0) or np.any(word_idx >= len(E)):
        raise ValueError("word index outside the lexicon")
    out, cache = _forward(params, Z)
    diff = out - E[word_idx]
    loss = float(np.sum(diff * diff) / len(Z))
    return loss, _backward(params, cache, 2.0 * diff / len(Z))


def fixed_plan_grad(T, Zhat, points) -> np.ndarray:
    """Gradient of ``<T, C(Zhat)>`` wrt ``Zhat`` with ``T`` held fixed."""
    T = np.asarray(getattr(T, "t", T))
    E = np.asarray(points)
    return 2.0 * (T.sum(axis=1, keepdims=True) * Zhat - T @ E)


@dataclass
class OTLoss:
    value: float
    transport: float
    entropy: float  # the epsilon * sum T (log T - 1) term
    grads: dict
    plan: TransportPlan


def ot_loss(params: dict, Z, points, prior, opts: SinkhornOptions = SinkhornOptions(),
            init=None) -> OTLoss:
    """Entropic OT objective between ``g(Z)`` (uniform weights) and the lexicon."""
    Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
    if len(Z) == 0:
        raise ValueError("OT loss needs at least one descriptor")
    out, cache = _forward(params, Z)
    C = cost_matrix(out, points)
    plan = sinkhorn(C, None, prior, opts, init=init)
    transport = float(np.sum(plan.t * C))
    ent = entropic_term(plan.t, opts.epsilon)
    grads = _backward(params, cache, fixed_plan_grad(plan.t, out, points))
    return OTLoss(transport + ent, transport, ent, grads, plan)


@dataclass(frozen=True)
class ProjectorOptions:
    lr: float = 1e-4
    lambda_ot: float = 1e-2
    epochs: int = 5
    batch_size: int = 32
    steps_per_epoch: int | None = 100  # None: one pass over the aligned pairs
    seed: int = 0
    sinkhorn: SinkhornOptions = field(default_factory=SinkhornOptions)

    def __post_init__(self):
        if self.lambda_ot < 0:
            raise ValueError("lambda_ot must be >= 0")


class ProjectorTrainer:
    """Keeps projector weights and Adam moments across rounds."""

    def __init__(self, params: dict, lr: float = 1e-4):
        self.params = params
        self.opt = Adam(params, lr=lr)
        self.potentials = None

    def train(self, Z_aligned, word_idx, Z_all, points, prior, opts: ProjectorOptions):
        """Run ``opts.epochs`` epochs and return the loss terms.

        The trace has ``epochs + 1`` entries: entry ``e`` holds the losses
        after ``e`` epochs. Each epoch solves Sinkhorn once on the current projections of
        ``Z_all`` and keeps that plan fixed while stepping through the
        aligned pairs; the transport gradient of every step uses a random
        row subset of the plan, rescaled to the full sum.
        """
        Z_aligned = np.atleast_2d(np.asarray(Z_aligned, dtype=np.float64))
        word_idx = np.asarray(word_idx, dtype=int)
        Z_all = np.atleast_2d(np.asarray(Z_all, dtype=np.float64))
        E = np.asarray(points, dtype=np.float64)
        n_a, n = len(Z_aligned), len(Z_all)
        if n_a == 0:
            raise TrainingError("projector training needs a nonempty aligned set")
        rng = np.random.default_rng(opts.seed)
        self.opt.lr = opts.lr
        steps = opts.steps_per_epoch or max(1, -(-n_a // opts.batch_size))
        use_ot = opts.lambda_ot > 0
        self.last_plan = None
        trace = []
        for epoch in range(opts.epochs + 1):
            rec, T = self._evaluate(Z_aligned, word_idx, Z_all, E, prior, opts)
            if not np.isfinite(rec["proj"]):
                raise TrainingError(f"non-finite projector loss after {epoch} epochs: {rec}")
            trace.append(rec)
            if epoch == opts.epochs:
                break
            order = rng.permutation(n_a)
            for s in range(steps):
                idx = np.take(order, np.arange(s * opts.batch_size, (s + 1) * opts.batch_size) % n_a)
                if len(idx) > n_a:
                    idx = idx[:n_a]
                _, grads = sup_loss(self.params, Z_aligned[idx], word_idx[idx], E)
                if use_ot:
                    rows = rng.choice(n, size=min(n, 4 * opts.batch_size), replace=False)
                    out, cache = _forward(self.params, Z_all[rows])
                    d = fixed_plan_grad(T[rows], out, E) * (n / len(rows))
                    g_ot = _backward(self.params, cache, d)
                    grads = {k: grads[k] + opts.lambda_ot * g_ot[k] for k in grads}
                self.opt.step(self.params, grads)
        return trace

    def _evaluate(self, Z_aligned, word_idx, Z_all, E, prior, opts):
        sup, _ = sup_loss(self.params, Z_aligned, word_idx, E)
        rec = {"sup": sup, "transport": 0.0, "entropy": 0.0}
        T = None
        if opts.lambda_ot > 0:
            ot = ot_loss(self.params, Z_all, E, prior, opts.sinkhorn, init=self.potentials)
            self.potentials = (ot.plan.f, ot.plan.g)
            self.last_plan = ot.plan
            T = ot.plan.t
            rec.update(transport=ot.transport, entropy=ot.entropy, converged=bool(ot.plan.converged))
        rec["proj"] = rec["sup"] + opts.lambda_ot * (rec["transport"] + rec["entropy"])
        return rec, T


def train_projector(params: dict, Z_aligned, word_idx, Z_all, points, prior,
                    opts: ProjectorOptions = ProjectorOptions()):
    """Functional wrapper returning ``(new_params, trace)``."""
    trainer = ProjectorTrainer({k: v.copy() for k, v in params.items()}, opts.lr)
    trace = trainer.train(Z_aligned, word_idx, Z_all, points, prior, opts)
    return trainer.params, trace


def save_projector(path, params: dict):
    save_params(path, params, "projector", {"layers": _n_layers(params)})


def load_projector(path) -> dict:
    return load_params(path, "projector")[0]
