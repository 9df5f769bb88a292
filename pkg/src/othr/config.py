"""Experiment configuration: a JSON document mapped onto frozen dataclasses.

Every section has defaults, so ``{}`` is a valid config. Unknown keys and
wrongly typed values are rejected before any work starts, and
:meth:`ExperimentConfig.to_dict` yields the fully resolved form that runs
write next to their outputs.
"""

import dataclasses
import json
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

from . import projector as proj
from .loop import LoopConfig
from .ot import SinkhornOptions
from .recognizer import RecognizerConfig
from .seeding import derive_seed
from .synth import CorpusSpec, RenderSpec

PRIORS = ("empirical", "uniform", "zipf")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DataConfig:
    vocab_size: int = 200
    zipf_s: float = 1.0
    n_tokens: int = 2000
    min_len: int = 2
    max_len: int = 8
    splits: tuple[float, ...] = (0.7, 0.1, 0.2)
    style_strength: float = 0.5  # writer distortion of the target pool
    shear_px: int = 2
    baseline_px: int = 2
    thickness_prob: float = 0.3
    noise_sigma: float = 0.05


@dataclass(frozen=True)
class SyntheticConfig:
    n_images: int = 3000
    pretrain_steps: int = 800


@dataclass(frozen=True)
class LexiconConfig:
    prior: str = "empirical"
    zipf_s: float = 1.0


@dataclass(frozen=True)
class EmbeddingConfig:
    dim: int = 100
    max_iters: int = 500
    tol: float = 1e-9
    n_init: int = 4


@dataclass(frozen=True)
class SinkhornConfig:
    epsilon: float = 0.1
    max_iters: int = 2000
    tol: float = 1e-6


@dataclass(frozen=True)
class RecognizerSection:
    lr: float = 1e-3
    batch_size: int = 32
    lambda_phoc: float = 0.5
    phase_a_epochs: int = 1
    phase_a_steps: int = 100


@dataclass(frozen=True)
class ProjectorSection:
    lr: float = 1e-4
    lambda_ot: float = 1e-2
    epochs: int = 5
    steps_per_epoch: int = 100
    batch_size: int = 32


@dataclass(frozen=True)
class LoopSection:
    K: int = 200
    rho_syn: float = 0.5
    rounds_max: int = 50
    seed_fraction: float = 0.05
    eval_split: str = "test"


@dataclass(frozen=True)
class AblateSection:
    lambda_phoc: tuple[float, ...] = (0.5, 0.0)
    priors: tuple[str, ...] = ("empirical", "uniform")
    seed_fractions: tuple[float, ...] = (0.05,)
    seeds: tuple[int, ...] = (0, 1, 2)


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    dataset: str = "data"
    out: str = "runs/default"
    data: DataConfig = field(default_factory=DataConfig)
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)
    lexicon: LexiconConfig = field(default_factory=LexiconConfig)
    embedding: EmbeddingConfig = field(default_factory=EmbeddingConfig)
    sinkhorn: SinkhornConfig = field(default_factory=SinkhornConfig)
    recognizer: RecognizerSection = field(default_factory=RecognizerSection)
    projector: ProjectorSection = field(default_factory=ProjectorSection)
    loop: LoopSection = field(default_factory=LoopSection)
    ablate: AblateSection = field(default_factory=AblateSection)

    @classmethod
    def from_dict(cls, obj: dict) -> "ExperimentConfig":
        cfg = _build(cls, obj, "")
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            obj = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        return cls.from_dict(obj)

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def override(self, **changes) -> "ExperimentConfig":
        """Apply dotted-path overrides, e.g. ``override(**{"loop.K": 50})``."""
        obj = self.to_dict()
        for path, value in changes.items():
            node = obj
            *parents, leaf = path.split(".")
            for p in parents:
                node = node[p]
            if leaf not in node:
                raise ConfigError(f"unknown config field {path!r}")
            node[leaf] = value
        return ExperimentConfig.from_dict(obj)

    def validate(self):
        d, lp = self.data, self.loop

        def need(ok, msg):
            if not ok:
                raise ConfigError(msg)

        need(self.seed >= 0, "seed must be >= 0")
        need(d.vocab_size >= 1 and d.n_tokens >= 1, "data.vocab_size and data.n_tokens must be >= 1")
        need(1 <= d.min_len <= d.max_len, "need 1 <= data.min_len <= data.max_len")
        need(len(d.splits) == 3 and all(f >= 0 for f in d.splits) and abs(sum(d.splits) - 1) < 1e-9,
             "data.splits must be three nonnegative fractions summing to 1")
        need(0 <= d.style_strength <= 1 and 0 <= d.thickness_prob <= 1,
             "data.style_strength and data.thickness_prob are probabilities")
        need(d.noise_sigma >= 0 and d.shear_px >= 0 and d.baseline_px >= 0,
             "data noise/shear/baseline must be >= 0")
        need(self.synthetic.n_images >= 0 and self.synthetic.pretrain_steps >= 0,
             "synthetic sizes must be >= 0")
        need(self.lexicon.prior in PRIORS, f"lexicon.prior must be one of {PRIORS}")
        need(self.lexicon.zipf_s >= 0, "lexicon.zipf_s must be >= 0")
        need(self.embedding.dim >= 1 and self.embedding.n_init >= 1, "embedding.dim and n_init must be >= 1")
        need(self.sinkhorn.epsilon > 0 and self.sinkhorn.tol > 0 and self.sinkhorn.max_iters >= 1,
             "sinkhorn needs epsilon > 0, tol > 0, max_iters >= 1")
        r, p = self.recognizer, self.projector
        need(r.lr > 0 and r.batch_size >= 1 and r.lambda_phoc >= 0, "bad recognizer hyperparameters")
        need(r.phase_a_epochs >= 1 and r.phase_a_steps >= 1, "phase A needs at least one step")
        need(p.lr > 0 and p.lambda_ot >= 0 and p.epochs >= 1 and p.steps_per_epoch >= 1 and p.batch_size >= 1,
             "bad projector hyperparameters")
        need(lp.K >= 1, "loop.K must be >= 1")
        need(0 <= lp.rho_syn <= 1, "loop.rho_syn must lie in [0, 1]")
        need(lp.rounds_max >= 0, "loop.rounds_max must be >= 0")
        need(0 < lp.seed_fraction <= 1, "loop.seed_fraction must lie in (0, 1]")
        need(lp.eval_split in ("train", "val", "test"), "loop.eval_split must be train, val or test")
        need(lp.rho_syn == 0 or self.synthetic.n_images > 0, "loop.rho_syn > 0 needs synthetic images")
        a = self.ablate
        need(all(x >= 0 for x in a.lambda_phoc) and a.lambda_phoc, "ablate.lambda_phoc must be nonempty, >= 0")
        need(a.priors and all(x in PRIORS for x in a.priors), f"ablate.priors must be drawn from {PRIORS}")
        need(a.seed_fractions and all(0 < x <= 1 for x in a.seed_fractions), "ablate.seed_fractions in (0, 1]")
        need(a.seeds and all(x >= 0 for x in a.seeds), "ablate.seeds must be nonempty, >= 0")

    # derived component options; every random stream hangs off ``seed``

    def corpus_spec(self) -> CorpusSpec:
        d = self.data
        return CorpusSpec(vocab_size=d.vocab_size, zipf_s=d.zipf_s, n_tokens=d.n_tokens,
                          seed=derive_seed(self.seed, "corpus"), min_len=d.min_len, max_len=d.max_len)

    def render_spec(self) -> RenderSpec:
        d = self.data
        return RenderSpec(glyph_seed=derive_seed(self.seed, "glyph"),
                          style_seed=derive_seed(self.seed, "style"),
                          style_strength=d.style_strength, max_len=d.max_len,
                          shear_px=d.shear_px, baseline_px=d.baseline_px,
                          thickness_prob=d.thickness_prob, noise_sigma=d.noise_sigma,
                          seed=derive_seed(self.seed, "render"))

    def synthetic_render_spec(self) -> RenderSpec:
        # same base glyphs, no writer distortion
        return dataclasses.replace(self.render_spec(), style_seed=None,
                                   seed=derive_seed(self.seed, "synthetic", "render"))

    def split_seed(self) -> int:
        return derive_seed(self.seed, "split")

    def recognizer_config(self) -> RecognizerConfig:
        return RecognizerConfig()

    def loop_config(self) -> LoopConfig:
        r, p, lp, s = self.recognizer, self.projector, self.loop, self.sinkhorn
        return LoopConfig(
            K=lp.K, rho_syn=lp.rho_syn, rounds_max=lp.rounds_max, batch_size=r.batch_size,
            lr=r.lr, lambda_phoc=r.lambda_phoc, phase_a_epochs=r.phase_a_epochs,
            phase_a_steps=r.phase_a_steps, pretrain_steps=self.synthetic.pretrain_steps,
            projector=proj.ProjectorOptions(
                lr=p.lr, lambda_ot=p.lambda_ot, epochs=p.epochs, batch_size=p.batch_size,
                steps_per_epoch=p.steps_per_epoch,
                sinkhorn=SinkhornOptions(s.epsilon, s.max_iters, s.tol)),
            eval_split=lp.eval_split, seed=self.seed)


def _plain(x):
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    return x


def _build(cls, obj, where: str):
    if not isinstance(obj, dict):
        raise ConfigError(f"{where or 'config'} must be a JSON object")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(obj) - names)
    if unknown:
        raise ConfigError(f"unknown field(s) in {where or 'config'}: {', '.join(unknown)}")
    kwargs = {}
    for name in names & set(obj):
        path = f"{where}.{name}" if where else name
        tp = hints[name]
        if dataclasses.is_dataclass(tp):
            kwargs[name] = _build(tp, obj[name], path)
        else:
            kwargs[name] = _coerce(obj[name], tp, path)
    return cls(**kwargs)


def _coerce(value, tp, path):
    origin = typing.get_origin(tp)
    if origin is tuple:
        inner = typing.get_args(tp)[0]
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path} must be a list")
        return tuple(_coerce(v, inner, f"{path}[{i}]") for i, v in enumerate(value))
    if origin in (typing.Union, types.UnionType):
        raise ConfigError(f"{path}: unsupported field type")  # not used by the schema
    if tp is bool:
        ok = isinstance(value, bool)
    elif tp is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif tp is float:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif tp is str:
        ok = isinstance(value, str)
    else:
        ok = False
    if not ok:
        raise ConfigError(f"{path} must be of type {tp.__name__}, got {value!r}")
    return value
