"""Vocabulary, lexical priors, edit distance and PHOC encoding."""

from __future__ import annotations

import json
import string
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DEFAULT_ALPHABET = string.ascii_lowercase
DEFAULT_LEVELS = (1, 2, 3, 4)
PRIOR_MODES = ("empirical", "uniform", "zipf")


class LexiconError(ValueError):
    pass


@dataclass(frozen=True)
class Lexicon:
    """Sorted unique words with their corpus counts and a prior over them.

    ``prior[i]`` is the probability of ``words[i]``.
    """

    words: tuple[str, ...]
    counts: tuple[int, ...]
    prior: np.ndarray
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(self.words) != len(self.counts) or len(self.words) != len(self.prior):
            raise LexiconError("words, counts and prior must be index-aligned")
        if list(self.words) != sorted(set(self.words)):
            raise LexiconError("words must be unique and lexicographically sorted")
        if any(not w for w in self.words):
            raise LexiconError("empty word in lexicon")
        prior = np.asarray(self.prior, dtype=np.float64)
        if np.any(prior < 0) or abs(prior.sum() - 1.0) > 1e-12:
            raise LexiconError("prior must be nonnegative and sum to 1")
        prior.setflags(write=False)
        object.__setattr__(self, "prior", prior)
        object.__setattr__(self, "_index", {w: i for i, w in enumerate(self.words)})

    def __len__(self):
        return len(self.words)

    def __contains__(self, word):
        return word in self._index

    def index(self, word: str) -> int:
        try:
            return self._index[word]
        except KeyError:
            raise LexiconError(f"word {word!r} is not in the lexicon") from None

    def with_prior(self, mode: str, zipf_s: float = 1.0) -> "Lexicon":
        """Same words and counts, prior recomputed under ``mode``."""
        return Lexicon(self.words, self.counts, _prior(self.counts, self.words, mode, zipf_s))

    def to_json(self) -> dict:
        return {"words": list(self.words), "counts": list(self.counts),
                "prior": [float(p) for p in self.prior]}

    @classmethod
    def from_json(cls, obj: dict) -> "Lexicon":
        return cls(tuple(obj["words"]), tuple(int(c) for c in obj["counts"]),
                   np.asarray(obj["prior"], dtype=np.float64))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json()), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Lexicon":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def _check_alphabet(word: str, alphabet: str):
    bad = set(word) - set(alphabet)
    if bad:
        raise LexiconError(f"characters {sorted(bad)} of {word!r} are outside the alphabet")


def zipf_weights(n: int, s: float) -> np.ndarray:
    """Normalized rank^-s weights for ranks 1..n."""
    w = np.arange(1, n + 1, dtype=np.float64) ** (-float(s))
    return w / w.sum()


def _prior(counts, words, mode: str, zipf_s: float) -> np.ndarray:
    counts = np.asarray(counts, dtype=np.float64)
    n = len(counts)
    if mode == "empirical":
        p = counts / counts.sum()
    elif mode == "uniform":
        p = np.full(n, 1.0 / n)
    elif mode == "zipf":
        # rank by descending count, lexicographic tie-break (words are already sorted)
        order = sorted(range(n), key=lambda i: (-counts[i], words[i]))
        p = np.empty(n)
        p[order] = zipf_weights(n, zipf_s)
    else:
        raise LexiconError(f"unknown prior mode {mode!r}; expected one of {PRIOR_MODES}")
    # renormalize so the sum is 1 to machine precision
    return p / p.sum()


def build_lexicon(tokens, mode: str = "empirical", zipf_s: float = 1.0,
                  alphabet: str = DEFAULT_ALPHABET) -> Lexicon:
    """Build a lexicon from a token list.

    Args:
        tokens: Corpus tokens; repeated tokens are counted.
        mode: ``"empirical"`` (count ratios), ``"uniform"`` or ``"zipf"``
            (``rank ** -zipf_s`` with ranks by descending count).
        zipf_s: Exponent used by the zipf mode.
        alphabet: Allowed characters.
    """
    tokens = list(tokens)
    if not tokens:
        raise LexiconError("cannot build a lexicon from an empty token list")
    for tok in set(tokens):
        if not tok:
            raise LexiconError("empty token")
        _check_alphabet(tok, alphabet)
    counter = Counter(tokens)
    words = tuple(sorted(counter))
    counts = tuple(counter[w] for w in words)
    return Lexicon(words, counts, _prior(counts, words, mode, zipf_s))


def levenshtein(a: str, b: str) -> int:
    """Unit-cost edit distance (insertions, deletions, substitutions)."""
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


@dataclass(frozen=True)
class PhocConfig:
    alphabet: str = DEFAULT_ALPHABET
    levels: tuple[int, ...] = DEFAULT_LEVELS

    def __post_init__(self):
        levels = tuple(int(l) for l in self.levels)
        if not levels or levels[0] < 1 or any(b <= a for a, b in zip(levels, levels[1:])):
            raise LexiconError(f"PHOC levels must be strictly increasing and >= 1, got {levels}")
        if len(set(self.alphabet)) != len(self.alphabet):
            raise LexiconError("PHOC alphabet has repeated characters")
        object.__setattr__(self, "levels", levels)

    @property
    def dim(self) -> int:
        return len(self.alphabet) * sum(self.levels)


def phoc_encode(word: str, cfg: PhocConfig = PhocConfig()) -> np.ndarray:
    """Binary pyramidal histogram of characters.

    Layout is level-major, then region, then alphabet position. Character
    ``i`` of an ``n``-letter word covers ``[i/n, (i+1)/n)`` and is marked in
    region ``r`` of level ``L`` when the overlap with ``[r/L, (r+1)/L)`` is
    strictly more than half of the character's width.
    """
    if not word:
        raise LexiconError("cannot PHOC-encode an empty word")
    _check_alphabet(word, cfg.alphabet)
    pos = {c: k for k, c in enumerate(cfg.alphabet)}
    n, m = len(word), len(cfg.alphabet)
    bits = np.zeros(cfg.dim, dtype=np.uint8)
    offset = 0
    for L in cfg.levels:
        for i, ch in enumerate(word):
            # scaled by n*L so every boundary is an integer
            lo, hi = i * L, (i + 1) * L
            for r in range(L):
                overlap = min(hi, (r + 1) * n) - max(lo, r * n)
                if 2 * overlap > L:
                    bits[offset + r * m + pos[ch]] = 1
        offset += L * m
    return bits
