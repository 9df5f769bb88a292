"""Word-embedding space: SMACOF metric MDS over pairwise edit distances."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .lexicon import Lexicon, levenshtein


class EmbeddingError(ValueError):
    pass


@dataclass(frozen=True)
class EmbeddingSpace:
    dim: int
    points: np.ndarray  # (n_words, dim), row i embeds lexicon word i
    stress: float  # normalized: raw stress / sum_{i<j} d_ij^2
    history: tuple[float, ...] = ()  # raw stress per SMACOF iterate

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != self.dim:
            raise EmbeddingError(f"points of shape {pts.shape} do not match dim={self.dim}")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return self.points.shape[0]

    def to_json(self) -> dict:
        return {"dim": self.dim, "points": self.points.tolist(), "stress": self.stress}

    @classmethod
    def from_json(cls, obj: dict) -> "EmbeddingSpace":
        return cls(int(obj["dim"]), np.asarray(obj["points"], dtype=np.float64),
                   float(obj["stress"]))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json()), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "EmbeddingSpace":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def pairwise_distances(lex: Lexicon) -> np.ndarray:
    """Symmetric matrix of Levenshtein distances between lexicon words."""
    words = lex.words
    n = len(words)
    if n == 0:
        raise EmbeddingError("empty lexicon")
    D = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            D[i, j] = D[j, i] = levenshtein(words[i], words[j])
    return D


def _check_distances(D) -> np.ndarray:
    D = np.asarray(D, dtype=np.float64)
    if D.ndim != 2 or D.shape[0] != D.shape[1]:
        raise EmbeddingError(f"distance matrix must be square, got {D.shape}")
    if not np.array_equal(D, D.T):
        raise EmbeddingError("distance matrix is not symmetric")
    if np.any(np.diag(D) != 0) or np.any(D < 0):
        raise EmbeddingError("distance matrix needs a zero diagonal and nonnegative entries")
    return D


def _euclidean(X: np.ndarray) -> np.ndarray:
    sq = np.sum(X * X, axis=1)
    G = sq[:, None] + sq[None, :] - 2.0 * (X @ X.T)
    np.maximum(G, 0.0, out=G)
    np.fill_diagonal(G, 0.0)
    return np.sqrt(G)


def stress(D, points) -> float:
    """Raw stress: sum over i<j of (d_ij - ||x_i - x_j||)^2."""
    D = np.asarray(D, dtype=np.float64)
    X = np.asarray(points, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != D.shape[0]:
        raise EmbeddingError(f"{X.shape[0] if X.ndim else 0} points for a {D.shape[0]}-point distance matrix")
    iu = np.triu_indices(D.shape[0], k=1)
    diff = D[iu] - _euclidean(X)[iu]
    return float(diff @ diff)


def _guttman(D: np.ndarray, X: np.ndarray) -> np.ndarray:
    n = D.shape[0]
    dist = _euclidean(X)
    ratio = np.divide(D, dist, out=np.zeros_like(D), where=dist > 0)
    B = -ratio
    np.fill_diagonal(B, 0.0)
    np.fill_diagonal(B, -B.sum(axis=1))
    return (B @ X) / n


def _smacof_run(D, X, max_iters, tol):
    cur = stress(D, X)
    history = [cur]
    for _ in range(max_iters):
        if cur == 0.0:
            break
        X_new = _guttman(D, X)
        new = stress(D, X_new)
        if new > cur:
            # rounding noise at the fixed point; keep the better iterate
            break
        X = X_new
        history.append(new)
        done = (cur - new) / cur < tol
        cur = new
        if done:
            break
    return X, history


def mds_embed(D, dim: int, max_iters: int = 500, tol: float = 1e-9, seed: int = 0,
              n_init: int = 4) -> EmbeddingSpace:
    """Embed a distance matrix in ``R^dim`` by SMACOF stress majorization.

    Each of ``n_init`` runs starts from seeded uniform points in
    ``[-1, 1]^dim`` and applies Guttman transforms until the relative stress
    decrease drops below ``tol`` or ``max_iters`` is hit; a transform never
    increases the raw stress. The lowest-stress run is returned together
    with its per-iteration stress history.
    """
    D = _check_distances(D)
    n = D.shape[0]
    if dim < 1 or dim > n:
        raise EmbeddingError(f"dim must be in [1, {n}], got {dim}")
    if n_init < 1:
        raise EmbeddingError("n_init must be >= 1")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_init):
        X, history = _smacof_run(D, rng.uniform(-1.0, 1.0, size=(n, dim)), max_iters, tol)
        if best is None or history[-1] < best[1][-1]:
            best = (X, history)
    X, history = best
    total = float(np.sum(np.triu(D, k=1) ** 2))
    norm = history[-1] / total if total > 0 else 0.0
    return EmbeddingSpace(dim, X, norm, tuple(history))


def embed_lexicon(lex: Lexicon, dim: int, max_iters: int = 500, tol: float = 1e-9,
                  seed: int = 0, n_init: int = 4) -> EmbeddingSpace:
    """Edit-distance MDS embedding of a lexicon; ``dim`` is clipped to the word count."""
    return mds_embed(pairwise_distances(lex), min(dim, len(lex)), max_iters, tol, seed, n_init)
