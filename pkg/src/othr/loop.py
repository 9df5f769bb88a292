"""Iterative visual-semantic alignment.

Every round fine-tunes the recognizer on synthetic plus aligned images
(phase A), trains the projector on the frozen descriptors (phase B), solves
entropic OT between all projected descriptors and the lexicon, and promotes
the ``K`` unaligned images with the most peaked plan rows to pseudo-labels
(phase C). Rounds repeat until nothing is left unaligned.

The working pool is every dataset image regardless of split; ground truth
is read only for seeds, for scoring the evaluation split and for the
promotion-precision telemetry.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .ctc import Alphabet
from .embedding import EmbeddingSpace
from .lexicon import Lexicon, levenshtein
from .ot import SinkhornOptions, TransportPlan, cost_matrix, row_distributions, row_entropies, sinkhorn
from . import projector as proj
from . import recognizer as rec
from .seeding import derive_seed
from .synth import Dataset

log = logging.getLogger(__name__)


class LoopError(ValueError):
    pass


@dataclass(frozen=True)
class LoopConfig:
    K: int = 200
    rho_syn: float = 0.5
    rounds_max: int = 50  # cap on promotion rounds
    batch_size: int = 32
    lr: float = 1e-3
    lambda_phoc: float = 0.5
    phase_a_epochs: int = 1
    phase_a_steps: int = 100
    pretrain_steps: int = 800
    projector: proj.ProjectorOptions = field(default_factory=proj.ProjectorOptions)
    eval_split: str = "test"
    seed: int = 0

    def __post_init__(self):
        if self.K < 1:
            raise LoopError("K must be >= 1")
        if not 0.0 <= self.rho_syn <= 1.0:
            raise LoopError("rho_syn must lie in [0, 1]")
        if self.rounds_max < 0:
            raise LoopError("rounds_max must be >= 0")


@dataclass
class Pool:
    """Aligned/unaligned partition of the working pool.

    ``ids`` fixes the row order of every transport plan. ``aligned`` maps an
    image id to ``(label, provenance)`` where provenance is ``"seed"`` or
    ``"pseudo:<round>"``.
    """

    ids: tuple[int, ...]
    aligned: dict[int, tuple[str, str]] = field(default_factory=dict)

    @classmethod
    def from_seeds(cls, ids, seed_labels: dict[int, str]) -> "Pool":
        ids = tuple(int(i) for i in ids)
        known = set(ids)
        bad = [i for i in seed_labels if i not in known]
        if bad:
            raise LoopError(f"seed ids {bad[:5]} are not in the working pool")
        return cls(ids, {int(i): (w, "seed") for i, w in sorted(seed_labels.items())})

    @property
    def unaligned(self) -> list[int]:
        return [i for i in self.ids if i not in self.aligned]

    def add_pseudo(self, pairs, round_k: int):
        for i, w in pairs:
            if i in self.aligned:
                raise LoopError(f"image {i} is already aligned; labels are never revised")
            self.aligned[i] = (w, f"pseudo:{round_k}")

    def to_json(self) -> dict:
        return {"ids": list(self.ids),
                "aligned": [[i, w, p] for i, (w, p) in sorted(self.aligned.items())]}

    @classmethod
    def from_json(cls, obj) -> "Pool":
        return cls(tuple(obj["ids"]), {int(i): (w, p) for i, w, p in obj["aligned"]})


@dataclass(frozen=True)
class Promotion:
    image_id: int
    word: str
    entropy: float


def promote(plan, pool: Pool, lexicon: Lexicon, K: int, round_k: int) -> list[Promotion]:
    """Move the ``K`` lowest-entropy unaligned rows into the aligned set.

    Plan rows follow ``pool.ids``. Entropy ties go to the lower image id and
    the pseudo-label is the row argmax (ties to the lower word index).
    Returns the promotions in selection order; an empty list means the
    unaligned pool was already empty.
    """
    if K < 1:
        raise LoopError("K must be >= 1")
    T = np.asarray(getattr(plan, "t", plan))
    if T.shape != (len(pool.ids), len(lexicon)):
        raise LoopError(f"plan shape {T.shape} does not match pool/lexicon "
                        f"({len(pool.ids)}, {len(lexicon)})")
    row_of = {i: r for r, i in enumerate(pool.ids)}
    todo = pool.unaligned
    if not todo:
        return []
    rows = np.array([row_of[i] for i in todo])
    Q = row_distributions(T[rows])
    H = row_entropies(Q)
    best = np.argmax(Q, axis=1)
    order = sorted(range(len(todo)), key=lambda j: (H[j], todo[j]))[:min(K, len(todo))]
    picked = [Promotion(todo[j], lexicon.words[best[j]], float(H[j])) for j in order]
    pool.add_pseudo([(p.image_id, p.word) for p in picked], round_k)
    return picked


def evaluate(params: dict, cfg: rec.RecognizerConfig, images, truths) -> tuple[float, float]:
    """Greedy-CTC ``(CER, WER)`` over labeled images."""
    if len(truths) == 0:
        raise LoopError("cannot evaluate on an empty split")
    decoded = rec.decode(params, images, cfg)
    errors = sum(levenshtein(d, t) for d, t in zip(decoded, truths))
    chars = sum(len(t) for t in truths)
    wrong = sum(d != t for d, t in zip(decoded, truths))
    return errors / chars, wrong / len(truths)


@dataclass
class RoundReport:
    round: int
    promotions: int
    precision: float | None
    n_aligned: int
    n_unaligned: int
    cer: float
    wer: float
    phase_a: dict
    phase_b: dict | None = None
    sinkhorn: dict | None = None

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class SyntheticSet:
    images: np.ndarray
    texts: list[str]


class AlignmentLoop:
    """Stateful driver of the alignment rounds.

    ``pretrained`` recognizer parameters skip stage-I pre-training. All
    per-round randomness is derived from ``cfg.seed`` and the round index, so
    a loop restored with :meth:`load_state` continues bit-identically.
    """

    def __init__(self, dataset: Dataset, seed_labels: dict[int, str], lexicon: Lexicon,
                 embedding: EmbeddingSpace, cfg: LoopConfig, rec_cfg: rec.RecognizerConfig,
                 synthetic: SyntheticSet | None = None, pretrained: dict | None = None):
        if not seed_labels:
            raise LoopError("at least one seed label is required")
        if len(embedding) != len(lexicon):
            raise LoopError(f"embedding has {len(embedding)} points for {len(lexicon)} words")
        if dataset.images.shape[1:] != (rec_cfg.height, rec_cfg.width):
            raise LoopError("dataset images do not match the recognizer input size")
        alphabet = Alphabet(rec_cfg.alphabet)
        for w in set(seed_labels.values()):
            lexicon.index(w)
            alphabet.encode(w)
        if cfg.rho_syn > 0 and synthetic is None:
            raise LoopError("rho_syn > 0 needs a synthetic set")
        self.dataset = dataset
        self.lexicon = lexicon
        self.embedding = embedding
        self.cfg = cfg
        self.rec_cfg = rec_cfg
        self.synthetic = synthetic
        self.pool = Pool.from_seeds(dataset.ids, seed_labels)
        self.eval_idx = dataset.indices(cfg.eval_split)
        if len(self.eval_idx) == 0:
            raise LoopError(f"evaluation split {cfg.eval_split!r} is empty")
        self.row_index = {int(i): r for r, i in enumerate(dataset.ids)}
        if pretrained is None:
            pretrained = self.pretrain()
        self.recognizer = rec.RecognizerTrainer({k: v.copy() for k, v in pretrained.items()},
                                                rec_cfg, cfg.lr)
        self.projector = proj.ProjectorTrainer(
            proj.init_params(rec_cfg.descriptor_dim, embedding.dim,
                             np.random.default_rng(derive_seed(cfg.seed, "init", "projector"))),
            cfg.projector.lr)
        self.round = 0
        self.promotion_rounds = 0
        self.reports: list[RoundReport] = []
        self.done = False
        self.last_plan: TransportPlan | None = None  # plan of the latest promotion round

    def pretrain(self) -> dict:
        """Stage I: warm-start on the synthetic set alone."""
        params = rec.init_params(self.rec_cfg, np.random.default_rng(derive_seed(self.cfg.seed, "init", "recognizer")))
        if self.synthetic is None or self.cfg.pretrain_steps == 0:
            return params
        opts = rec.TrainOptions(lr=self.cfg.lr, batch_size=self.cfg.batch_size, epochs=1,
                                steps_per_epoch=self.cfg.pretrain_steps, rho_syn=1.0,
                                lambda_phoc=self.cfg.lambda_phoc,
                                seed=derive_seed(self.cfg.seed, "batch", "pretrain"))
        params, _ = rec.train_recognizer(params, self.rec_cfg, None, None, opts,
                                         self.synthetic.images, self.synthetic.texts)
        return params

    def _aligned_arrays(self):
        ids = sorted(self.pool.aligned)
        rows = [self.row_index[i] for i in ids]
        return ids, rows, [self.pool.aligned[i][0] for i in ids]

    def phase_a(self) -> list[dict]:
        _, rows, labels = self._aligned_arrays()
        syn = self.synthetic
        opts = rec.TrainOptions(lr=self.cfg.lr, batch_size=self.cfg.batch_size,
                                epochs=self.cfg.phase_a_epochs, steps_per_epoch=self.cfg.phase_a_steps,
                                rho_syn=self.cfg.rho_syn, lambda_phoc=self.cfg.lambda_phoc,
                                seed=derive_seed(self.cfg.seed, "batch", "phase_a", self.round))
        return self.recognizer.train(self.dataset.images[rows], labels, opts,
                                     syn.images if syn else None, syn.texts if syn else None)

    def evaluate(self) -> tuple[float, float]:
        return evaluate(self.recognizer.params, self.rec_cfg, self.dataset.images[self.eval_idx],
                        [self.dataset.truths[i] for i in self.eval_idx])

    def phase_b(self) -> tuple[list[dict], TransportPlan]:
        Z = rec.descriptors(self.recognizer.params, self.dataset.images, self.rec_cfg)
        _, rows, labels = self._aligned_arrays()
        word_idx = [self.lexicon.index(w) for w in labels]
        opts = replace(self.cfg.projector, seed=derive_seed(self.cfg.seed, "batch", "phase_b", self.round))
        trace = self.projector.train(Z[rows], word_idx, Z, self.embedding.points, self.lexicon.prior, opts)
        plan = self.projector.last_plan
        if plan is None:
            C = cost_matrix(proj.project(self.projector.params, Z), self.embedding.points)
            plan = sinkhorn(C, None, self.lexicon.prior, opts.sinkhorn)
        return trace, plan

    def step(self) -> RoundReport:
        """Run one round and return its report."""
        if self.done:
            raise LoopError("loop already finished")
        k = self.round
        trace_a = self.phase_a()
        cer, wer = self.evaluate()
        report = RoundReport(k, 0, None, len(self.pool.aligned), len(self.pool.unaligned),
                             cer, wer, {"epochs": trace_a})
        if not self.pool.unaligned or self.promotion_rounds >= self.cfg.rounds_max:
            self.done = True
        else:
            trace_b, plan = self.phase_b()
            self.last_plan = plan
            picked = promote(plan, self.pool, self.lexicon, self.cfg.K, k + 1)
            self.promotion_rounds += 1
            truths = self.dataset.truths
            correct = sum(truths[self.row_index[p.image_id]] == p.word for p in picked)
            report.promotions = len(picked)
            report.precision = correct / len(picked) if picked else None
            report.n_aligned = len(self.pool.aligned)
            report.n_unaligned = len(self.pool.unaligned)
            report.phase_b = {"initial": trace_b[0], "final": trace_b[-1]}
            report.sinkhorn = {"converged": bool(plan.converged), "iterations": plan.n_iters,
                               "marginal_violation": plan.marginal_violation}
        self.reports.append(report)
        self.round += 1
        log.info("round %d: +%d pseudo-labels (precision %s), CER %.4f WER %.4f",
                 k, report.promotions, report.precision, cer, wer)
        return report

    def run(self, on_round=None) -> list[RoundReport]:
        """Iterate until the pool is exhausted or ``rounds_max`` promotion rounds ran."""
        while not self.done:
            report = self.step()
            if on_round is not None:
                on_round(self, report)
        return self.reports

    def state(self) -> dict:
        """Everything needed to resume, as arrays plus a JSON-able dict."""
        arrays = {}
        for prefix, trainer in (("rec", self.recognizer), ("proj", self.projector)):
            for k, v in trainer.params.items():
                arrays[f"{prefix}.param.{k}"] = v
            for k in trainer.params:
                arrays[f"{prefix}.m.{k}"] = trainer.opt.m[k]
                arrays[f"{prefix}.v.{k}"] = trainer.opt.v[k]
        if self.projector.potentials is not None:
            arrays["proj.f"], arrays["proj.g"] = self.projector.potentials
        meta = {"round": self.round, "promotion_rounds": self.promotion_rounds, "done": self.done,
                "rec_t": self.recognizer.opt.t, "proj_t": self.projector.opt.t,
                "pool": self.pool.to_json(), "reports": [r.to_json() for r in self.reports]}
        return {"arrays": arrays, "meta": meta}

    def load_state(self, arrays: dict, meta: dict):
        for prefix, trainer in (("rec", self.recognizer), ("proj", self.projector)):
            for k in trainer.params:
                trainer.params[k][...] = arrays[f"{prefix}.param.{k}"]
                trainer.opt.m[k] = arrays[f"{prefix}.m.{k}"].copy()
                trainer.opt.v[k] = arrays[f"{prefix}.v.{k}"].copy()
        self.recognizer.opt.t = meta["rec_t"]
        self.projector.opt.t = meta["proj_t"]
        self.projector.potentials = (arrays["proj.f"], arrays["proj.g"]) if "proj.f" in arrays else None
        self.round = meta["round"]
        self.promotion_rounds = meta["promotion_rounds"]
        self.done = meta["done"]
        self.pool = Pool.from_json(meta["pool"])
        self.reports = [RoundReport(**r) for r in meta["reports"]]


def run(dataset: Dataset, seed_labels: dict[int, str], lexicon: Lexicon, embedding: EmbeddingSpace,
        cfg: LoopConfig, rec_cfg: rec.RecognizerConfig, synthetic: SyntheticSet | None = None,
        pretrained: dict | None = None) -> list[RoundReport]:
    """Run the whole loop; see :class:`AlignmentLoop`."""
    return AlignmentLoop(dataset, seed_labels, lexicon, embedding, cfg, rec_cfg,
                         synthetic, pretrained).run()
