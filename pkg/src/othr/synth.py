"""Procedural word corpora and glyph-bitmap word images.

Words are drawn from a Zipf distribution over a vocabulary and rendered
from 8x8 stroke glyphs. A ``style_seed`` perturbs the stroke endpoints of
every glyph, which plays the role of a writer: images of the same word by
two styles share structure but not pixels.

On disk a dataset is a directory holding ``manifest.json``, ``labels.tsv``
(id, split, truth) and ``images/<id>.pgm`` (binary P5, maxval 255).
"""

from __future__ import annotations

import hashlib
import json
import string
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .lexicon import DEFAULT_ALPHABET, zipf_weights

CANONICAL_H, CANONICAL_W = 32, 128
GLYPH = 8
SPLITS = ("train", "val", "test")
_VOWELS = "aeiou"
_CONSONANTS = "".join(c for c in string.ascii_lowercase if c not in _VOWELS)

# Stroke library on the 8x8 glyph grid as (r0, c0, r1, c1).
_STROKES = (
    (0, 0, 0, 7), (3, 0, 3, 7), (7, 0, 7, 7), (0, 0, 7, 0), (0, 3, 7, 3),
    (0, 7, 7, 7), (0, 0, 7, 7), (0, 7, 7, 0), (0, 0, 3, 7), (7, 0, 3, 7),
    (3, 0, 7, 7), (0, 3, 3, 7), (5, 0, 5, 7), (0, 5, 7, 5), (3, 3, 7, 0),
    (0, 0, 0, 3), (7, 4, 7, 7), (2, 2, 5, 5),
)


class SynthError(ValueError):
    pass


@dataclass(frozen=True)
class WordImage:
    pixels: np.ndarray  # (CANONICAL_H, CANONICAL_W), intensities in [0, 1]
    truth: str | None = None

    @property
    def height(self):
        return self.pixels.shape[0]

    @property
    def width(self):
        return self.pixels.shape[1]


@dataclass(frozen=True)
class CorpusSpec:
    vocab: tuple[str, ...] = ()  # empty: generate ``vocab_size`` words
    vocab_size: int = 200
    zipf_s: float = 1.0
    n_tokens: int = 2000
    seed: int = 0
    min_len: int = 2
    max_len: int = 8

    def __post_init__(self):
        object.__setattr__(self, "vocab", tuple(self.vocab))
        if self.vocab and len(set(self.vocab)) != len(self.vocab):
            raise SynthError("vocabulary words must be unique")
        if not self.vocab and self.vocab_size < 1:
            raise SynthError("vocabulary must be nonempty")
        if self.zipf_s < 0:
            raise SynthError("zipf_s must be >= 0")
        if self.n_tokens < 1:
            raise SynthError("n_tokens must be >= 1")


@dataclass(frozen=True)
class RenderSpec:
    glyph_seed: int = 0
    style_seed: int | None = None  # None: undistorted base glyphs
    style_strength: float = 0.5  # probability that a stroke endpoint moves
    max_len: int = 8  # longest word the canvas must hold
    jitter: bool = True
    shear_px: int = 2
    baseline_px: int = 2
    thickness_prob: float = 0.3
    noise_sigma: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.noise_sigma <= 0.1:
            raise SynthError("noise_sigma must lie in [0, 0.1]")
        if self.max_len < 1:
            raise SynthError("max_len must be >= 1")


def generate_vocab(size: int, seed: int, min_len: int = 2, max_len: int = 8) -> tuple[str, ...]:
    """Pronounceable pseudo-words, shortest first (so frequent ranks are short)."""
    rng = np.random.default_rng([seed, 0x766F6361])
    words: dict[str, None] = {}
    attempts = 0
    while len(words) < size:
        attempts += 1
        if attempts > 1000 * size:
            raise SynthError(f"cannot generate {size} distinct words of length {min_len}-{max_len}")
        n = int(rng.integers(min_len, max_len + 1))
        start = int(rng.integers(2))
        w = "".join(
            (_CONSONANTS[rng.integers(len(_CONSONANTS))] if (k + start) % 2 == 0
             else _VOWELS[rng.integers(len(_VOWELS))])
            for k in range(n))
        words.setdefault(w)
    order = list(words)
    return tuple(order[k] for k in sorted(range(len(order)), key=lambda k: (len(order[k]), k)))


def resolve_vocab(spec: CorpusSpec) -> tuple[str, ...]:
    if spec.vocab:
        return spec.vocab
    return generate_vocab(spec.vocab_size, spec.seed, spec.min_len, spec.max_len)


def sample_corpus(spec: CorpusSpec) -> list[str]:
    """``n_tokens`` i.i.d. draws; the i-th vocabulary word has Zipf rank i+1."""
    vocab = resolve_vocab(spec)
    rng = np.random.default_rng([spec.seed, 0x636F7270])
    idx = rng.choice(len(vocab), size=spec.n_tokens, p=zipf_weights(len(vocab), spec.zipf_s))
    return [vocab[i] for i in idx]


def _draw_line(img, r0, c0, r1, c1):
    n = max(abs(r1 - r0), abs(c1 - c0)) + 1
    rr = np.rint(np.linspace(r0, r1, n)).astype(int)
    cc = np.rint(np.linspace(c0, c1, n)).astype(int)
    img[np.clip(rr, 0, GLYPH - 1), np.clip(cc, 0, GLYPH - 1)] = 1.0


def glyph_strokes(glyph_seed: int, alphabet: str = DEFAULT_ALPHABET) -> dict[str, list[tuple]]:
    """Assign every character a distinct set of 2-4 strokes."""
    rng = np.random.default_rng([glyph_seed, 0x676C7970])
    seen = set()
    out = {}
    for ch in alphabet:
        while True:
            k = int(rng.integers(2, 5))
            pick = tuple(sorted(rng.choice(len(_STROKES), size=k, replace=False).tolist()))
            if pick not in seen:
                seen.add(pick)
                break
        out[ch] = [_STROKES[i] for i in pick]
    return out


def glyph_set(glyph_seed: int, style_seed: int | None = None, style_strength: float = 0.5,
              alphabet: str = DEFAULT_ALPHABET) -> dict[str, np.ndarray]:
    """8x8 bitmaps per character, optionally distorted by a writer style."""
    strokes = glyph_strokes(glyph_seed, alphabet)
    rng = None if style_seed is None else np.random.default_rng([glyph_seed, style_seed, 0x7374796C])
    glyphs = {}
    for ch in alphabet:
        img = np.zeros((GLYPH, GLYPH))
        for r0, c0, r1, c1 in strokes[ch]:
            if rng is not None:
                move = rng.random(4) < style_strength
                delta = rng.integers(-1, 2, size=4) * move
                r0, c0, r1, c1 = (int(np.clip(v + d, 0, GLYPH - 1))
                                  for v, d in zip((r0, c0, r1, c1), delta))
            _draw_line(img, r0, c0, r1, c1)
        glyphs[ch] = img
    return glyphs


def canvas_shape(max_len: int) -> tuple[int, int]:
    """Source canvas with the canonical 1:4 aspect, wide enough for ``max_len`` glyphs."""
    width = (GLYPH + 1) * max_len - 1 + 4
    height = max(int(np.ceil(width / 4)), GLYPH + 6)
    return height, 4 * height


def _interp_matrix(n_out: int, n_in: int) -> np.ndarray:
    # bilinear weights with half-pixel centres
    scale = n_in / n_out
    src = (np.arange(n_out) + 0.5) * scale - 0.5
    src = np.clip(src, 0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    w = src - lo
    M = np.zeros((n_out, n_in))
    M[np.arange(n_out), lo] += 1 - w
    M[np.arange(n_out), hi] += w
    return M


def resize_bilinear(img: np.ndarray, shape=(CANONICAL_H, CANONICAL_W)) -> np.ndarray:
    return _interp_matrix(shape[0], img.shape[0]) @ img @ _interp_matrix(shape[1], img.shape[1]).T


def concat_glyphs(word: str, glyphs: dict[str, np.ndarray]) -> np.ndarray:
    """Glyphs side by side with 1-px gaps."""
    try:
        parts = [glyphs[c] for c in word]
    except KeyError as e:
        raise SynthError(f"no glyph for character {e.args[0]!r}") from None
    out = np.zeros((GLYPH, (GLYPH + 1) * len(word) - 1))
    for k, g in enumerate(parts):
        out[:, k * (GLYPH + 1):k * (GLYPH + 1) + GLYPH] = g
    return out


def _shear(strip: np.ndarray, shear: int, pad: int) -> np.ndarray:
    # top row moves ``shear`` px right relative to the bottom row
    h = strip.shape[0]
    out = np.zeros((h, strip.shape[1] + 2 * pad))
    for r in range(h):
        off = int(round(shear * (h - 1 - r) / max(h - 1, 1)))
        out[r, pad + off:pad + off + strip.shape[1]] = strip[r]
    return out


def _quantize(img: np.ndarray) -> np.ndarray:
    return np.rint(np.clip(img, 0.0, 1.0) * 255.0) / 255.0


def render_word(word: str, spec: RenderSpec, instance_seed: int = 0,
                glyphs: dict[str, np.ndarray] | None = None) -> WordImage:
    """Render ``word`` onto the canonical 32x128 canvas.

    Deterministic in ``(word, spec, instance_seed)``. Intensities are
    quantized to multiples of 1/255 so the PGM round trip is exact.
    """
    if len(word) > spec.max_len:
        raise SynthError(f"word {word!r} longer than the canvas max_len={spec.max_len}")
    if glyphs is None:
        glyphs = glyph_set(spec.glyph_seed, spec.style_seed, spec.style_strength)
    strip = concat_glyphs(word, glyphs)
    rng = np.random.default_rng([spec.seed, instance_seed, 0x72656E64])
    hc, wc = canvas_shape(spec.max_len)
    dy = 0
    if spec.jitter:
        if rng.random() < spec.thickness_prob:
            strip = np.maximum(strip, np.pad(strip, ((0, 0), (1, 0)))[:, :-1])
        strip = _shear(strip, int(rng.integers(-spec.shear_px, spec.shear_px + 1)), spec.shear_px)
        dy = int(rng.integers(-spec.baseline_px, spec.baseline_px + 1))
    else:
        strip = _shear(strip, 0, spec.shear_px)
    canvas = np.zeros((hc, wc))
    top = (hc - GLYPH) // 2 + dy
    strip = strip[:, :wc]
    canvas[top:top + GLYPH, :strip.shape[1]] = strip
    img = resize_bilinear(canvas)
    if spec.jitter and spec.noise_sigma > 0:
        img = img + rng.normal(0.0, spec.noise_sigma, size=img.shape)
    return WordImage(_quantize(img), word)


def render_batch(words, spec: RenderSpec, seeds) -> np.ndarray:
    glyphs = glyph_set(spec.glyph_seed, spec.style_seed, spec.style_strength)
    return np.stack([render_word(w, spec, int(s), glyphs).pixels for w, s in zip(words, seeds)])


def split_sizes(n: int, fractions) -> list[int]:
    """Largest-remainder apportionment of ``n`` items; ties go to the earlier split."""
    fr = np.asarray(fractions, dtype=np.float64)
    if fr.shape != (3,) or np.any(fr < 0) or abs(fr.sum() - 1.0) > 1e-9:
        raise SynthError(f"split fractions must be 3 nonnegative numbers summing to 1, got {fractions}")
    quotas = fr * n
    sizes = np.floor(quotas).astype(int)
    rest = n - sizes.sum()
    order = sorted(range(3), key=lambda k: (-(quotas[k] - sizes[k]), k))
    for k in order[:rest]:
        sizes[k] += 1
    return sizes.tolist()


def _hash_key(item_id: int, split_seed: int) -> bytes:
    return hashlib.blake2b(f"{split_seed}:{item_id}".encode(), digest_size=8).digest()


@dataclass
class Dataset:
    ids: np.ndarray  # int64
    images: np.ndarray  # (n, 32, 128) float64
    truths: list[str]
    splits: list[str]
    manifest: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.ids)

    def indices(self, split: str | None = None) -> np.ndarray:
        if split is None:
            return np.arange(len(self.ids))
        return np.array([i for i, s in enumerate(self.splits) if s == split], dtype=int)

    def item(self, i: int) -> WordImage:
        return WordImage(self.images[i], self.truths[i])


def gen_dataset(corpus: CorpusSpec, render: RenderSpec, fractions=(0.7, 0.1, 0.2),
                split_seed: int = 0) -> Dataset:
    """One rendered image per corpus token, hashed into train/val/test."""
    sizes = split_sizes(corpus.n_tokens, fractions)
    tokens = sample_corpus(corpus)
    n = len(tokens)
    ids = np.arange(n, dtype=np.int64)
    images = render_batch(tokens, render, ids)
    order = sorted(range(n), key=lambda i: _hash_key(i, split_seed))
    splits = [""] * n
    pos = 0
    for name, size in zip(SPLITS, sizes):
        for i in order[pos:pos + size]:
            splits[i] = name
        pos += size
    manifest = {
        "format": 1,
        "corpus": asdict(corpus),
        "render": asdict(render),
        "fractions": [float(f) for f in fractions],
        "split_seed": split_seed,
        "n_items": n,
        "vocab": list(resolve_vocab(corpus)),
    }
    return Dataset(ids, images, tokens, splits, manifest)


def from_manifest(manifest: dict) -> Dataset:
    c = dict(manifest["corpus"])
    c["vocab"] = tuple(c.get("vocab", ()))
    return gen_dataset(CorpusSpec(**c), RenderSpec(**manifest["render"]),
                       tuple(manifest["fractions"]), manifest["split_seed"])


def write_pgm(path, img: np.ndarray):
    data = np.rint(np.clip(img, 0, 1) * 255).astype(np.uint8)
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos)
            continue
        end = pos
        while not raw[end:end + 1].isspace():
            end += 1
        tokens.append(raw[pos:end])
        pos = end
    if tokens[0] != b"P5":
        raise SynthError(f"{path}: not a binary PGM")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise SynthError(f"{path}: unsupported maxval {maxval}")
    data = np.frombuffer(raw[pos + 1:pos + 1 + w * h], dtype=np.uint8).reshape(h, w)
    return data.astype(np.float64) / 255.0


def save_dataset(ds: Dataset, root, force: bool = False):
    root = Path(root)
    if (root / "manifest.json").exists() and not force:
        raise FileExistsError(f"{root} already holds a dataset (use force to overwrite)")
    (root / "images").mkdir(parents=True, exist_ok=True)
    for i, img in zip(ds.ids, ds.images):
        write_pgm(root / "images" / f"{int(i):06d}.pgm", img)
    with open(root / "labels.tsv", "w", encoding="utf-8", newline="\n") as fh:
        for i, s, t in zip(ds.ids, ds.splits, ds.truths):
            fh.write(f"{int(i)}\t{s}\t{t}\n")
    (root / "manifest.json").write_text(json.dumps(ds.manifest, indent=2, sort_keys=True),
                                        encoding="utf-8")


def load_dataset(root, with_labels: bool = True) -> Dataset:
    """Read a dataset directory; ``with_labels=False`` never opens labels.tsv."""
    root = Path(root)
    manifest = json.loads((root / "manifest.json").read_text(encoding="utf-8"))
    n = manifest["n_items"]
    ids = np.arange(n, dtype=np.int64)
    images = np.stack([read_pgm(root / "images" / f"{i:06d}.pgm") for i in range(n)])
    truths, splits = [""] * n, [""] * n
    if with_labels:
        for line in (root / "labels.tsv").read_text(encoding="utf-8").splitlines():
            i, s, t = line.split("\t")
            splits[int(i)], truths[int(i)] = s, t
    return Dataset(ids, images, truths, splits, manifest)
