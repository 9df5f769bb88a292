"""CTC loss (log-space forward-backward) and greedy decoding.

Frame logits are unnormalized scores over ``blank + alphabet``; the blank
is always index 0 and character ``alphabet[i]`` is index ``i + 1``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lexicon import DEFAULT_ALPHABET

NEG_INF = -np.inf


class CTCError(ValueError):
    pass


@dataclass(frozen=True)
class Alphabet:
    symbols: str = DEFAULT_ALPHABET
    blank_index: int = 0

    def __post_init__(self):
        if self.blank_index != 0:
            raise CTCError("the blank must sit at index 0")
        if len(set(self.symbols)) != len(self.symbols):
            raise CTCError("alphabet has repeated symbols")

    @property
    def size(self) -> int:
        """Number of output classes, blank included."""
        return len(self.symbols) + 1

    def encode(self, text: str) -> list[int]:
        try:
            return [self.symbols.index(c) + 1 for c in text]
        except ValueError:
            bad = sorted(set(text) - set(self.symbols))
            raise CTCError(f"characters {bad} are outside the alphabet") from None

    def decode(self, labels) -> str:
        return "".join(self.symbols[k - 1] for k in labels)


def log_softmax(x: np.ndarray) -> np.ndarray:
    m = x.max(axis=-1, keepdims=True)
    s = x - m
    return s - np.log(np.exp(s).sum(axis=-1, keepdims=True))


def min_frames(labels) -> int:
    """Shortest frame count that can emit ``labels`` (repeats need a blank between)."""
    return len(labels) + sum(1 for a, b in zip(labels, labels[1:]) if a == b)


def ctc_loss_batch(logits: np.ndarray, targets: list[list[int]]) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample CTC negative log-likelihood and its gradient wrt ``logits``.

    Args:
        logits: ``(B, T, A)`` unnormalized frame scores.
        targets: ``B`` label sequences (values in ``1..A-1``), possibly empty.

    Returns:
        ``(loss, grad)`` with shapes ``(B,)`` and ``(B, T, A)``.
    """
    logits = np.asarray(logits, dtype=np.float64)
    B, T, A = logits.shape
    if len(targets) != B:
        raise CTCError(f"{len(targets)} targets for a batch of {B}")
    for tgt in targets:
        if min_frames(tgt) > T:
            raise CTCError(f"target of length {len(tgt)} cannot be aligned to {T} frames")
        if any(not 0 < k < A for k in tgt):
            raise CTCError("target label out of range (blank or beyond the alphabet)")

    S = 2 * max((len(t) for t in targets), default=0) + 1
    ext = np.zeros((B, S), dtype=np.int64)
    lens = np.empty(B, dtype=np.int64)
    for b, tgt in enumerate(targets):
        ext[b, 1:2 * len(tgt):2] = tgt
        lens[b] = 2 * len(tgt) + 1
    pos = np.arange(S)
    valid = pos[None, :] < lens[:, None]
    skip = np.zeros((B, S), dtype=bool)
    skip[:, 2:] = (ext[:, 2:] != 0) & (ext[:, 2:] != ext[:, :-2])
    skip &= valid

    logp = log_softmax(logits)
    emit = np.take_along_axis(logp, np.broadcast_to(ext[:, None, :], (B, T, S)), axis=2)
    emit = np.where(valid[:, None, :], emit, NEG_INF)

    alpha = np.full((B, T, S), NEG_INF)
    alpha[:, 0, 0] = emit[:, 0, 0]
    if S > 1:
        alpha[:, 0, 1] = emit[:, 0, 1]
    for t in range(1, T):
        prev = alpha[:, t - 1]
        acc = prev.copy()
        acc[:, 1:] = np.logaddexp(acc[:, 1:], prev[:, :-1])
        acc[:, 2:] = np.where(skip[:, 2:], np.logaddexp(acc[:, 2:], prev[:, :-2]), acc[:, 2:])
        alpha[:, t] = acc + emit[:, t]

    # beta[t, s]: log-probability of finishing from state s at t, emissions after t
    beta = np.full((B, T, S), NEG_INF)
    rows = np.arange(B)
    beta[rows, T - 1, lens - 1] = 0.0
    beta[rows[lens > 1], T - 1, lens[lens > 1] - 2] = 0.0
    for t in range(T - 2, -1, -1):
        nxt = beta[:, t + 1] + emit[:, t + 1]
        acc = nxt.copy()
        acc[:, :-1] = np.logaddexp(acc[:, :-1], nxt[:, 1:])
        acc[:, :-2] = np.where(skip[:, 2:], np.logaddexp(acc[:, :-2], nxt[:, 2:]), acc[:, :-2])
        beta[:, t] = np.where(valid, acc, NEG_INF)

    last = alpha[rows, T - 1, lens - 1]
    second = np.where(lens > 1, alpha[rows, T - 1, np.maximum(lens - 2, 0)], NEG_INF)
    log_like = np.logaddexp(last, second)
    loss = -log_like

    occ = np.exp(alpha + beta - log_like[:, None, None])  # state occupancy
    grad = np.exp(logp)
    bi = np.broadcast_to(rows[:, None, None], (B, T, S))
    ti = np.broadcast_to(np.arange(T)[None, :, None], (B, T, S))
    ki = np.broadcast_to(ext[:, None, :], (B, T, S))
    np.add.at(grad, (bi[..., :], ti, ki), -occ)
    return loss, grad


def ctc_loss(frame_logits: np.ndarray, target: str, alphabet: Alphabet = Alphabet()):
    """CTC loss of one transcription; returns ``(loss, grad wrt frame_logits)``."""
    loss, grad = ctc_loss_batch(np.asarray(frame_logits)[None], [alphabet.encode(target)])
    return float(loss[0]), grad[0]


def collapse(path) -> list[int]:
    """Merge repeated labels, then drop blanks."""
    out, prev = [], None
    for k in path:
        k = int(k)
        if k != prev and k != 0:
            out.append(k)
        prev = k
    return out


def ctc_greedy_decode(frame_logits: np.ndarray, alphabet: Alphabet = Alphabet()) -> str:
    """Best-path decoding; ``argmax`` ties resolve to the lowest index."""
    return alphabet.decode(collapse(np.argmax(frame_logits, axis=-1)))
