"""Compact word recognizer with hand-written gradients.

Layout of the forward pass for a ``32 x 128`` image:

1. max-pool pairs of rows, giving 128 columns of 16 features;
2. window encoder: 5 columns at stride 2 -> 62 frames, affine + ReLU;
3. context encoder: 5 neighbouring frames (zero padded), affine + ReLU,
   giving the frame hidden states ``h``;
4. frame logits ``h @ Wc + bc`` over ``blank + alphabet``;
5. descriptor ``z = mean_t(h) @ B``;
6. PHOC prediction ``sigmoid(z @ Wp + bp)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .ctc import Alphabet, ctc_greedy_decode, ctc_loss_batch
from .lexicon import PhocConfig, phoc_encode
from .nn import Adam, TrainingError, he_init, load_params, relu, save_params, sigmoid
from .synth import CANONICAL_H, CANONICAL_W

log = logging.getLogger(__name__)

PHOC_CLAMP = 1e-7


@dataclass(frozen=True)
class RecognizerConfig:
    height: int = CANONICAL_H
    width: int = CANONICAL_W
    pool_h: int = 2
    window: int = 5
    stride: int = 2
    context: int = 5
    hidden1: int = 64
    hidden: int = 128
    descriptor_dim: int = 64
    alphabet: str = "abcdefghijklmnopqrstuvwxyz"
    phoc_levels: tuple[int, ...] = (1, 2, 3, 4)

    def __post_init__(self):
        object.__setattr__(self, "phoc_levels", tuple(self.phoc_levels))
        if self.height % self.pool_h:
            raise ValueError("image height must be a multiple of pool_h")
        if self.context % 2 == 0:
            raise ValueError("context window must be odd")
        if self.frames < 1:
            raise ValueError("image narrower than one window")

    @property
    def features(self) -> int:
        return self.height // self.pool_h

    @property
    def frames(self) -> int:
        return (self.width - self.window) // self.stride + 1

    @property
    def n_classes(self) -> int:
        return len(self.alphabet) + 1

    @property
    def phoc(self) -> PhocConfig:
        return PhocConfig(self.alphabet, self.phoc_levels)


def init_params(cfg: RecognizerConfig, rng: np.random.Generator) -> dict:
    p = {
        "W1": he_init(rng, cfg.window * cfg.features, cfg.hidden1),
        "b1": np.zeros(cfg.hidden1),
        "W2": he_init(rng, cfg.context * cfg.hidden1, cfg.hidden),
        "b2": np.zeros(cfg.hidden),
        "Wc": rng.normal(0.0, np.sqrt(1.0 / cfg.hidden), size=(cfg.hidden, cfg.n_classes)),
        "bc": np.zeros(cfg.n_classes),
        "B": rng.normal(0.0, np.sqrt(1.0 / cfg.hidden), size=(cfg.hidden, cfg.descriptor_dim)),
        "Wp": rng.normal(0.0, np.sqrt(1.0 / cfg.descriptor_dim), size=(cfg.descriptor_dim, cfg.phoc.dim)),
        "bp": np.full(cfg.phoc.dim, -2.0),  # PHOC bits are sparse
    }
    return p


@dataclass
class Forward:
    logits: np.ndarray  # (B, T, n_classes)
    z: np.ndarray  # (B, D)
    phoc: np.ndarray  # (B, P) probabilities
    cache: dict = field(repr=False, default_factory=dict)


def _windows(cfg: RecognizerConfig) -> np.ndarray:
    return np.arange(cfg.frames)[:, None] * cfg.stride + np.arange(cfg.window)[None, :]


def forward(params: dict, images: np.ndarray, cfg: RecognizerConfig) -> Forward:
    """Run a batch ``(B, H, W)`` (or a single ``(H, W)`` image) through the network."""
    x = np.asarray(images, dtype=np.float64)
    single = x.ndim == 2
    if single:
        x = x[None]
    if x.shape[1:] != (cfg.height, cfg.width):
        raise ValueError(f"expected images of shape {(cfg.height, cfg.width)}, got {x.shape[1:]}")
    n = x.shape[0]
    T, F, H1 = cfg.frames, cfg.features, cfg.hidden1
    pooled = x.reshape(n, F, cfg.pool_h, cfg.width).max(axis=2)
    cols = pooled.transpose(0, 2, 1)  # (n, W, F)
    U = cols[:, _windows(cfg)].reshape(n, T, cfg.window * F)
    a1 = U @ params["W1"] + params["b1"]
    h1 = relu(a1)
    half = cfg.context // 2
    hp = np.pad(h1, ((0, 0), (half, half), (0, 0)))
    V = np.concatenate([hp[:, k:k + T] for k in range(cfg.context)], axis=2)
    a2 = V @ params["W2"] + params["b2"]
    h = relu(a2)
    logits = h @ params["Wc"] + params["bc"]
    m = h.mean(axis=1)
    z = m @ params["B"]
    phoc = sigmoid(z @ params["Wp"] + params["bp"])
    out = Forward(logits, z, phoc, dict(U=U, a1=a1, V=V, a2=a2, h=h, m=m))
    if single:
        out = Forward(logits[0], z[0], phoc[0], {k: v for k, v in out.cache.items()})
    return out


def backward(params: dict, fw: Forward, cfg: RecognizerConfig, d_logits=None, d_z=None,
             d_phoc=None) -> dict:
    """Parameter gradients given upstream gradients on the three outputs.

    ``d_phoc`` is the gradient with respect to the PHOC *probabilities*.
    """
    c = fw.cache
    h, m = c["h"], c["m"]
    n, T, _ = h.shape
    g = {k: np.zeros_like(v) for k, v in params.items()}
    dh = np.zeros_like(h)
    if d_logits is not None:
        d_logits = d_logits.reshape(n, T, -1)
        g["Wc"] = np.einsum("nth,ntk->hk", h, d_logits)
        g["bc"] = d_logits.sum(axis=(0, 1))
        dh += d_logits @ params["Wc"].T
    dz = np.zeros((n, params["B"].shape[1])) if d_z is None else np.array(d_z).reshape(n, -1)
    if d_phoc is not None:
        p = fw.phoc.reshape(n, -1)
        dq = np.asarray(d_phoc).reshape(n, -1) * p * (1.0 - p)
        z = fw.z.reshape(n, -1)
        g["Wp"] = z.T @ dq
        g["bp"] = dq.sum(axis=0)
        dz = dz + dq @ params["Wp"].T
    g["B"] = m.T @ dz
    dh += (dz @ params["B"].T)[:, None, :] / T
    da2 = dh * (c["a2"] > 0)
    V = c["V"]
    g["W2"] = V.reshape(-1, V.shape[-1]).T @ da2.reshape(-1, da2.shape[-1])
    g["b2"] = da2.sum(axis=(0, 1))
    dV = da2 @ params["W2"].T
    H1 = cfg.hidden1
    half = cfg.context // 2
    dhp = np.zeros((n, T + 2 * half, H1))
    for k in range(cfg.context):
        dhp[:, k:k + T] += dV[:, :, k * H1:(k + 1) * H1]
    da1 = dhp[:, half:half + T] * (c["a1"] > 0)
    U = c["U"]
    g["W1"] = U.reshape(-1, U.shape[-1]).T @ da1.reshape(-1, H1)
    g["b1"] = da1.sum(axis=(0, 1))
    return g


def phoc_loss(pred, target) -> tuple[float, np.ndarray]:
    """Mean binary cross-entropy with clamped probabilities, and its gradient wrt ``pred``."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"PHOC length mismatch: {pred.shape} vs {target.shape}")
    p = np.clip(pred, PHOC_CLAMP, 1.0 - PHOC_CLAMP)
    n = pred.shape[-1]
    loss = -np.mean(target * np.log(p) + (1 - target) * np.log(1 - p), axis=-1)
    inside = (pred > PHOC_CLAMP) & (pred < 1.0 - PHOC_CLAMP)
    grad = np.where(inside, (-target / p + (1 - target) / (1 - p)) / n, 0.0)
    if np.ndim(loss) == 0:
        return float(loss), grad
    return loss, grad


def htr_loss(params: dict, images, texts, cfg: RecognizerConfig, lambda_phoc: float,
             phoc_targets=None):
    """Batch mean of ``CTC + lambda_phoc * PHOC``; returns ``(total, ctc, phoc, grads)``."""
    alphabet = Alphabet(cfg.alphabet)
    fw = forward(params, images, cfg)
    n = fw.logits.shape[0]
    targets = [alphabet.encode(t) for t in texts]
    ctc, d_logits = ctc_loss_batch(fw.logits, targets)
    d_phoc = None
    ph = np.zeros(n)
    if lambda_phoc:
        if phoc_targets is None:
            phoc_targets = np.stack([phoc_encode(t, cfg.phoc) for t in texts])
        ph, d_ph = phoc_loss(fw.phoc, phoc_targets)
        d_phoc = lambda_phoc * d_ph / n
    grads = backward(params, fw, cfg, d_logits=d_logits / n, d_phoc=d_phoc)
    total = float(np.mean(ctc + lambda_phoc * ph))
    return total, float(np.mean(ctc)), float(np.mean(ph)), grads


def decode(params: dict, images, cfg: RecognizerConfig, batch_size: int = 256) -> list[str]:
    alphabet = Alphabet(cfg.alphabet)
    out = []
    for s in range(0, len(images), batch_size):
        fw = forward(params, images[s:s + batch_size], cfg)
        out.extend(ctc_greedy_decode(lg, alphabet) for lg in fw.logits)
    return out


def descriptors(params: dict, images, cfg: RecognizerConfig, batch_size: int = 256) -> np.ndarray:
    return np.concatenate([forward(params, images[s:s + batch_size], cfg).z
                           for s in range(0, len(images), batch_size)])


@dataclass(frozen=True)
class TrainOptions:
    lr: float = 1e-3
    batch_size: int = 32
    epochs: int = 1
    steps_per_epoch: int | None = None  # None: one pass over the real samples
    rho_syn: float = 0.0
    lambda_phoc: float = 0.5
    clip_norm: float | None = 5.0
    seed: int = 0


def mix_counts(batch_size: int, rho_syn: float, have_real: bool = True) -> tuple[int, int]:
    """Synthetic and real sample counts for one batch: ``ceil(rho * B)`` synthetic."""
    if not 0.0 <= rho_syn <= 1.0:
        raise ValueError(f"rho_syn must lie in [0, 1], got {rho_syn}")
    n_syn = math.ceil(rho_syn * batch_size) if have_real else batch_size
    return n_syn, batch_size - n_syn


class RecognizerTrainer:
    """Adam training of the recognizer on a real set mixed with synthetic data.

    The optimizer state survives across :meth:`train` calls so successive
    rounds warm-start both weights and moments.
    """

    def __init__(self, params: dict, cfg: RecognizerConfig, lr: float = 1e-3,
                 clip_norm: float | None = 5.0):
        self.params = params
        self.cfg = cfg
        self.opt = Adam(params, lr=lr, clip_norm=clip_norm)
        self._phoc_cache: dict[str, np.ndarray] = {}

    def _phoc(self, texts):
        cache = self._phoc_cache
        for t in texts:
            if t not in cache:
                cache[t] = phoc_encode(t, self.cfg.phoc)
        return np.stack([cache[t] for t in texts])

    def train(self, real_images, real_texts, opts: TrainOptions, syn_images=None, syn_texts=None):
        """Run ``opts.epochs`` epochs; returns per-epoch mean losses as dicts."""
        n_real = 0 if real_images is None else len(real_images)
        n_synth = 0 if syn_images is None else len(syn_images)
        rho = opts.rho_syn if n_synth else 0.0
        if n_real == 0 and n_synth == 0:
            raise TrainingError("no training samples")
        n_syn, n_re = mix_counts(opts.batch_size, rho, have_real=n_real > 0)
        if n_syn and not n_synth:
            raise TrainingError("batch mix needs synthetic samples but none were given")
        steps = opts.steps_per_epoch
        if steps is None:
            steps = math.ceil(n_real / n_re) if n_re else math.ceil(n_synth / n_syn)
        rng = np.random.default_rng(opts.seed)
        self.opt.lr = opts.lr
        trace = []
        real_order = np.empty(0, dtype=int)
        for epoch in range(opts.epochs):
            sums = np.zeros(3)
            for _ in range(steps):
                idx_r = np.empty(0, dtype=int)
                if n_re:
                    # draw without replacement, reshuffling when the pass is exhausted
                    while len(real_order) < n_re:
                        real_order = np.concatenate([real_order, rng.permutation(n_real)])
                    idx_r, real_order = real_order[:n_re], real_order[n_re:]
                idx_s = rng.integers(0, n_synth, size=n_syn) if n_syn else np.empty(0, dtype=int)
                imgs = np.concatenate([syn_images[idx_s] if n_syn else np.empty((0, self.cfg.height, self.cfg.width)),
                                       real_images[idx_r] if n_re else np.empty((0, self.cfg.height, self.cfg.width))])
                texts = [syn_texts[i] for i in idx_s] + [real_texts[i] for i in idx_r]
                total, ctc, ph, grads = htr_loss(self.params, imgs, texts, self.cfg, opts.lambda_phoc,
                                                 self._phoc(texts) if opts.lambda_phoc else None)
                if not np.isfinite(total):
                    raise TrainingError(f"non-finite loss at epoch {epoch}: ctc={ctc}, phoc={ph}")
                self.opt.step(self.params, grads)
                sums += (total, ctc, ph)
            trace.append(dict(zip(("loss", "ctc", "phoc"), (sums / steps).tolist())))
        return trace


def train_recognizer(params: dict, cfg: RecognizerConfig, images, texts, opts: TrainOptions,
                     syn_images=None, syn_texts=None):
    """Functional wrapper: returns ``(new_params, loss_trace)`` leaving ``params`` untouched."""
    trainer = RecognizerTrainer({k: v.copy() for k, v in params.items()}, cfg, opts.lr, opts.clip_norm)
    trace = trainer.train(images, texts, opts, syn_images, syn_texts)
    return trainer.params, trace


def save_recognizer(path, params: dict, cfg: RecognizerConfig):
    meta = asdict(cfg)
    meta["phoc_levels"] = list(cfg.phoc_levels)
    save_params(path, params, "recognizer", meta)


def load_recognizer(path) -> tuple[dict, RecognizerConfig]:
    params, meta = load_params(path, "recognizer")
    return params, RecognizerConfig(**meta)
