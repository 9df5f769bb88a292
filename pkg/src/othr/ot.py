"""Entropic optimal transport between projected descriptors and the lexicon.

The coupling lives in the set of nonnegative N x M matrices whose rows sum
to ``a`` (uniform ``1/N`` over images) and whose columns sum to ``b`` (the
lexical prior). Among those, :func:`sinkhorn` finds the minimizer of
``<T, C> + eps * sum T (log T - 1)`` by alternating updates of the dual
potentials in the log domain.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)


class OTError(ValueError):
    pass


@dataclass(frozen=True)
class SinkhornOptions:
    epsilon: float = 0.1
    max_iters: int = 2000
    tol: float = 1e-6

    def __post_init__(self):
        if not self.epsilon > 0:
            raise OTError(f"epsilon must be positive, got {self.epsilon}")
        if not self.tol > 0:
            raise OTError(f"tol must be positive, got {self.tol}")
        if self.max_iters < 1:
            raise OTError(f"max_iters must be >= 1, got {self.max_iters}")


@dataclass(frozen=True)
class TransportPlan:
    t: np.ndarray
    epsilon: float
    converged: bool
    marginal_violation: float
    n_iters: int
    violation_history: tuple[float, ...]
    f: np.ndarray  # row potentials
    g: np.ndarray  # column potentials

    @property
    def shape(self):
        return self.t.shape


def cost_matrix(projected, embedding_points) -> np.ndarray:
    """Squared Euclidean distances between every projected row and embedding point."""
    Z = np.asarray(projected, dtype=np.float64)
    E = np.asarray(getattr(embedding_points, "points", embedding_points), dtype=np.float64)
    if Z.ndim != 2 or E.ndim != 2 or Z.shape[0] == 0 or E.shape[0] == 0:
        raise OTError("cost_matrix needs two nonempty 2-D point sets")
    if Z.shape[1] != E.shape[1]:
        raise OTError(f"dimension mismatch: descriptors {Z.shape[1]}, embedding {E.shape[1]}")
    out = np.empty((Z.shape[0], E.shape[0]))
    # differences rather than the |z|^2 + |e|^2 - 2ze expansion: no cancellation
    step = max(1, 2**20 // (E.shape[0] * E.shape[1]))
    for s in range(0, Z.shape[0], step):
        diff = Z[s:s + step, None, :] - E[None, :, :]
        out[s:s + step] = np.einsum("nmd,nmd->nm", diff, diff)
    return out


def _lse(x: np.ndarray, axis: int) -> np.ndarray:
    m = np.max(x, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(x - m), axis=axis, keepdims=True)) + m
    return np.squeeze(out, axis=axis)


def _lse_shifted(K: np.ndarray, shift: np.ndarray, axis: int, buf: np.ndarray) -> np.ndarray:
    """``_lse(K + shift, axis)`` computed in a reusable buffer (the sweep hot path)."""
    np.add(K, shift, out=buf)
    m = np.max(buf, axis=axis, keepdims=True)
    m[~np.isfinite(m)] = 0.0
    buf -= m
    np.exp(buf, out=buf)
    with np.errstate(divide="ignore"):
        return np.log(np.sum(buf, axis=axis)) + np.squeeze(m, axis=axis)


def _check_marginal(v, name) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.size == 0 or np.any(v < 0) or not np.all(np.isfinite(v)):
        raise OTError(f"{name} marginal must be a nonnegative finite vector")
    if abs(v.sum() - 1.0) > 1e-9:
        raise OTError(f"{name} marginal sums to {v.sum()}, expected 1")
    return v


def sinkhorn(C, row_marginal=None, col_marginal=None, opts: SinkhornOptions = SinkhornOptions(),
             init: tuple[np.ndarray, np.ndarray] | None = None) -> TransportPlan:
    """Solve balanced entropic OT with log-domain Sinkhorn.

    ``row_marginal`` defaults to uniform over rows, ``col_marginal`` to
    uniform over columns. Zero-mass rows or columns get exactly zero plan
    mass: their potentials are pinned at ``-inf``. ``init`` warm-starts the
    potentials (e.g. from a previous plan's ``f``, ``g``).

    Iteration stops when the max-norm marginal residual falls below
    ``opts.tol``; the returned plan records whether that happened.
    """
    C = np.asarray(C, dtype=np.float64)
    if C.ndim != 2 or C.size == 0:
        raise OTError("cost matrix must be a nonempty 2-D array")
    if not np.all(np.isfinite(C)):
        raise OTError("cost matrix contains NaN or infinite entries")
    n, m = C.shape
    a = _check_marginal(np.full(n, 1.0 / n) if row_marginal is None else row_marginal, "row")
    b = _check_marginal(np.full(m, 1.0 / m) if col_marginal is None else col_marginal, "column")
    if a.size != n or b.size != m:
        raise OTError(f"marginal sizes ({a.size}, {b.size}) do not match cost shape {C.shape}")

    eps = opts.epsilon
    with np.errstate(divide="ignore"):
        log_a, log_b = np.log(a), np.log(b)
    live_r, live_c = a > 0, b > 0
    if init is None:
        f = np.where(live_r, 0.0, -np.inf)
        g = np.where(live_c, 0.0, -np.inf)
    else:
        f = np.where(live_r, np.asarray(init[0], dtype=np.float64), -np.inf)
        g = np.where(live_c, np.asarray(init[1], dtype=np.float64), -np.inf)
        if not (np.all(np.isfinite(f[live_r])) and np.all(np.isfinite(g[live_c]))):
            f = np.where(live_r, 0.0, -np.inf)
            g = np.where(live_c, 0.0, -np.inf)
    K = -C / eps  # log kernel

    history = []
    converged = False
    violation = np.inf
    it = 0
    # Each sweep: f update (rows exact), g update (columns exact), then
    # measure the row residual the g update left behind.
    buf = np.empty_like(K)
    row_lse = _lse_shifted(K, g[None, :] / eps, 1, buf)
    for it in range(1, opts.max_iters + 1):
        f = np.where(live_r, eps * (log_a - row_lse), -np.inf)
        col_lse = _lse_shifted(K, f[:, None] / eps, 0, buf)
        g = np.where(live_c, eps * (log_b - col_lse), -np.inf)
        row_lse = _lse_shifted(K, g[None, :] / eps, 1, buf)
        with np.errstate(invalid="ignore"):
            rows = np.where(live_r, np.exp(f / eps + row_lse), 0.0)
        violation = float(np.max(np.abs(rows - a)))
        history.append(violation)
        if violation < opts.tol:
            converged = True
            break

    with np.errstate(invalid="ignore"):
        logT = K + f[:, None] / eps + g[None, :] / eps
    T = np.where(np.isfinite(logT), np.exp(logT), 0.0)
    cols = T.sum(axis=0)
    violation = max(violation, float(np.max(np.abs(cols - b))))
    if not converged:
        log.warning("sinkhorn did not converge in %d iterations (residual %.3g)", it, violation)
    return TransportPlan(T, eps, converged, violation, it, tuple(history), f, g)


def transport_cost(T, C) -> float:
    """Frobenius inner product <T, C>."""
    T, C = _check_pair(T, C)
    return float(np.sum(T * C))


def entropic_term(T, epsilon: float) -> float:
    """``epsilon * sum T (log T - 1)`` with ``0 * (log 0 - 1) = 0``."""
    T = np.asarray(getattr(T, "t", T), dtype=np.float64)
    if np.any(T < 0):
        raise OTError("coupling has negative entries")
    pos = T[T > 0]
    return float(epsilon * np.sum(pos * (np.log(pos) - 1.0)))


def ot_objective(T, C, epsilon: float) -> float:
    return transport_cost(T, C) + entropic_term(T, epsilon)


def _check_pair(T, C):
    T = np.asarray(getattr(T, "t", T), dtype=np.float64)
    C = np.asarray(C, dtype=np.float64)
    if T.shape != C.shape:
        raise OTError(f"plan shape {T.shape} does not match cost shape {C.shape}")
    if np.any(T < 0):
        raise OTError("coupling has negative entries")
    return T, C


def row_distribution(T, i: int) -> np.ndarray:
    """Row ``i`` of the plan renormalized to a probability vector over words."""
    T = np.asarray(getattr(T, "t", T), dtype=np.float64)
    row = T[i]
    s = row.sum()
    if not s > 0:
        raise OTError(f"row {i} of the plan has no mass")
    return row / s


def row_distributions(T) -> np.ndarray:
    T = np.asarray(getattr(T, "t", T), dtype=np.float64)
    s = T.sum(axis=1, keepdims=True)
    if np.any(s <= 0):
        raise OTError("plan has rows without mass")
    return T / s


def row_entropy(dist) -> float:
    """Shannon entropy in nats, with ``0 log 0 = 0``."""
    q = np.asarray(dist, dtype=np.float64)
    if np.any(q < 0):
        raise OTError("distribution has negative entries")
    if abs(q.sum() - 1.0) > 1e-9:
        raise OTError(f"distribution sums to {q.sum()}, expected 1")
    pos = q[q > 0]
    return float(-np.sum(pos * np.log(pos)))


def row_entropies(Q: np.ndarray) -> np.ndarray:
    """Entropy of every row of a row-stochastic matrix."""
    Q = np.asarray(Q, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(Q > 0, Q * np.log(np.where(Q > 0, Q, 1.0)), 0.0)
    return -terms.sum(axis=1)


def plan_entropy(T) -> float:
    """Entropy of the whole coupling viewed as a joint distribution."""
    T = np.asarray(getattr(T, "t", T), dtype=np.float64)
    pos = T[T > 0]
    return float(-np.sum(pos * np.log(pos)))


def dump_plan_csv(plan: TransportPlan, path, min_mass: float = 0.0):
    """Write ``row,word,mass`` triples for entries above ``min_mass``."""
    T = plan.t
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row", "word", "mass"])
        for i, j in zip(*np.nonzero(T > min_mass)):
            w.writerow([int(i), int(j), repr(float(T[i, j]))])
