import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from othr.ctc import (Alphabet, CTCError, collapse, ctc_greedy_decode, ctc_loss, ctc_loss_batch,
                      log_softmax, min_frames)


def brute_force_nll(logits, target):
    """Sum the probability of every path in A^T that collapses onto ``target``."""
    p = np.exp(log_softmax(logits))
    T, A = p.shape
    total = 0.0
    for path in itertools.product(range(A), repeat=T):
        if collapse(path) == list(target):
            total += math.prod(p[t, k] for t, k in enumerate(path))
    return -math.log(total)


def rule_collapse(path):
    # independent oracle: split into runs, keep the run symbol, drop blanks
    return [k for k, _ in itertools.groupby(path) if k != 0]


def test_single_frame_uniform():
    loss, _ = ctc_loss(np.zeros((1, 3)), "a", Alphabet("ab"))
    assert loss == pytest.approx(-math.log(1 / 3), abs=1e-12)


def test_two_frames_path_enumeration():
    rng = np.random.default_rng(0)
    lg = rng.normal(size=(2, 2))
    p = np.exp(log_softmax(lg))
    expected = -math.log(p[0, 1] * p[1, 0] + p[0, 0] * p[1, 1] + p[0, 1] * p[1, 1])
    loss, _ = ctc_loss(lg, "a", Alphabet("a"))
    assert loss == pytest.approx(expected, abs=1e-12)


def _feasible_instances():
    rng = np.random.default_rng(1)
    for T in range(1, 7):
        for A in range(2, 5):  # |alphabet| = A - 1 <= 3
            for L in range(0, 4):
                for tgt in itertools.product(range(1, A), repeat=L):
                    if min_frames(tgt) <= T:
                        yield rng.normal(scale=2.0, size=(T, A)), list(tgt)


def test_matches_brute_force_on_all_small_instances():
    worst = 0.0
    n = 0
    for lg, tgt in _feasible_instances():
        loss, _ = ctc_loss_batch(lg[None], [tgt])
        worst = max(worst, abs(loss[0] - brute_force_nll(lg, tgt)))
        n += 1
    assert n == 234  # every feasible (T, |alphabet|, target) combination
    assert worst < 1e-8


def test_batch_with_mixed_lengths_equals_single_calls():
    rng = np.random.default_rng(2)
    lg = rng.normal(size=(4, 6, 4))
    targets = [[1, 2], [], [3, 3, 1], [2]]
    loss, grad = ctc_loss_batch(lg, targets)
    for b, tgt in enumerate(targets):
        l1, g1 = ctc_loss_batch(lg[b:b + 1], [tgt])
        assert loss[b] == pytest.approx(l1[0], abs=1e-12)
        np.testing.assert_allclose(grad[b], g1[0], atol=1e-12)


def _fd_check(lg, tgt, h=1e-4):
    _, g = ctc_loss_batch(lg[None], [tgt])
    num = np.zeros_like(lg)
    for idx in np.ndindex(*lg.shape):
        up, dn = lg.copy(), lg.copy()
        up[idx] += h
        dn[idx] -= h
        num[idx] = (ctc_loss_batch(up[None], [tgt])[0][0] - ctc_loss_batch(dn[None], [tgt])[0][0]) / (2 * h)
    return np.max(np.abs(g[0] - num)) / np.max(np.abs(num))


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    assert _fd_check(rng.normal(size=(5, 4)), [1, 3]) < 1e-4


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(3, 8), st.lists(st.integers(1, 3), max_size=3))
def test_gradient_finite_differences_random(seed, T, tgt):
    if min_frames(tgt) > T:
        return
    lg = np.random.default_rng(seed).normal(scale=1.5, size=(T, 4))
    assert _fd_check(lg, tgt) < 1e-4


def test_gradient_rows_sum_to_zero():
    rng = np.random.default_rng(4)
    _, g = ctc_loss_batch(rng.normal(size=(3, 7, 5)), [[1, 2, 1], [4], []])
    np.testing.assert_allclose(g.sum(axis=2), 0.0, atol=1e-12)


def test_stable_for_large_logits():
    lg = np.zeros((6, 4))
    lg[:, 0] = 800.0
    loss, g = ctc_loss_batch(lg[None], [[1, 2]])
    assert np.isfinite(loss).all() and np.isfinite(g).all()
    assert loss[0] > 1000


def test_greedy_examples():
    ab = Alphabet("ab")

    def onehot(path):
        lg = np.full((len(path), 3), -5.0)
        lg[np.arange(len(path)), path] = 5.0
        return lg
    assert ctc_greedy_decode(onehot([0, 0, 0]), ab) == ""
    assert ctc_greedy_decode(onehot([1, 1, 0, 1]), ab) == "aa"
    assert ctc_greedy_decode(onehot([2, 0, 2, 2, 1]), ab) == "bba"
    assert rule_collapse([2, 0, 2, 2, 1]) == collapse([2, 0, 2, 2, 1])


def test_greedy_ties_resolve_to_lowest_index():
    assert ctc_greedy_decode(np.zeros((3, 3)), Alphabet("ab")) == ""
    lg = np.array([[0.0, 1.0, 1.0]])
    assert ctc_greedy_decode(lg, Alphabet("ab")) == "a"


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 4), max_size=12))
def test_collapse_matches_rule_oracle(path):
    assert collapse(path) == rule_collapse(path)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 3), max_size=12))
def test_decode_of_collapsed_sequence_is_idempotent(path):
    ab = Alphabet("abc")
    text = ab.decode(collapse(path))
    # an already collapsed labelling, separated by blanks, decodes to itself
    seq = []
    for k in ab.encode(text):
        seq += [k, 0]
    lg = np.full((max(len(seq), 1), 4), -3.0)
    if seq:
        lg[np.arange(len(seq)), seq] = 3.0
    else:
        lg[:, 0] = 3.0
    assert ctc_greedy_decode(lg, ab) == text


def test_errors():
    ab = Alphabet("ab")
    with pytest.raises(CTCError):
        ctc_loss(np.zeros((1, 3)), "aa", ab)  # repeat needs a separating blank
    with pytest.raises(CTCError):
        ctc_loss(np.zeros((4, 3)), "ax", ab)
    with pytest.raises(CTCError):
        ctc_loss_batch(np.zeros((1, 4, 3)), [[0]])
    with pytest.raises(CTCError):
        ctc_loss_batch(np.zeros((2, 4, 3)), [[1]])
    with pytest.raises(CTCError):
        Alphabet("aa")
    with pytest.raises(CTCError):
        Alphabet("ab", blank_index=1)


def test_min_frames():
    assert min_frames([]) == 0
    assert min_frames([1, 2]) == 2
    assert min_frames([1, 1, 2, 2]) == 6
    loss, _ = ctc_loss(np.zeros((3, 2)), "aa", Alphabet("a"))
    assert loss == pytest.approx(-math.log(1 / 8), abs=1e-12)
