"""End-to-end experiment plumbing shared by the CLI and the benchmark tests.

A run directory holds::

    resolved-config.json   the config every output was produced from
    lexicon.json, embedding.json
    reports.jsonl          one round report per line
    summary.csv            the scalar columns of the reports
    metrics.json           headline numbers
    checkpoints/round-NNN/ state.bin (all weights + Adam moments), pool.json,
                           recognizer.bin, projector.bin, plan.csv (with dump_plans;
                           rows follow the dataset ids)
"""

import csv
import json
import logging
import shutil
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig
from .embedding import EmbeddingSpace, embed_lexicon
from .lexicon import Lexicon, build_lexicon
from .loop import AlignmentLoop, RoundReport, SyntheticSet
from .nn import load_params, save_params
from .ot import dump_plan_csv
from . import projector as proj
from . import recognizer as rec
from .seeding import derive_seed, rng_for
from .synth import Dataset, gen_dataset, generate_vocab, render_batch

log = logging.getLogger(__name__)

SUMMARY_COLUMNS = ("round", "promotions", "precision", "n_aligned", "n_unaligned", "cer", "wer")


@dataclass
class Setup:
    dataset: Dataset
    synthetic: SyntheticSet | None
    lexicon: Lexicon
    embedding: EmbeddingSpace
    seed_labels: dict[int, str]


def build_dataset(cfg: ExperimentConfig) -> Dataset:
    return gen_dataset(cfg.corpus_spec(), cfg.render_spec(), cfg.data.splits, cfg.split_seed())


def build_synthetic(cfg: ExperimentConfig) -> SyntheticSet | None:
    """Clean renders of pronounceable pseudo-words for pre-training and mixing."""
    n = cfg.synthetic.n_images
    if n == 0:
        return None
    d = cfg.data
    words = list(generate_vocab(n, derive_seed(cfg.seed, "synthetic", "words"), d.min_len, d.max_len))
    images = render_batch(words, cfg.synthetic_render_spec(), np.arange(n))
    return SyntheticSet(images, words)


def choose_seed_labels(dataset: Dataset, fraction: float, seed: int) -> dict[int, str]:
    """Reveal the labels of ``round(fraction * |train|)`` (at least one) train images."""
    train = dataset.indices("train")
    if len(train) == 0:
        raise ConfigError("the dataset has no train split to draw seed labels from")
    n = min(len(train), max(1, round(fraction * len(train))))
    picked = np.sort(rng_for(seed, "seeds").choice(train, size=n, replace=False))
    return {int(dataset.ids[i]): dataset.truths[i] for i in picked}


def prepare(cfg: ExperimentConfig, dataset: Dataset | None = None,
            embedding: EmbeddingSpace | None = None) -> Setup:
    if dataset is None:
        dataset = build_dataset(cfg)
    if any(not t for t in dataset.truths):
        raise ConfigError("the dataset was loaded without labels")
    lex = build_lexicon(dataset.truths, cfg.lexicon.prior, cfg.lexicon.zipf_s)
    if embedding is None:
        e = cfg.embedding
        embedding = embed_lexicon(lex, e.dim, e.max_iters, e.tol, derive_seed(cfg.seed, "mds"), e.n_init)
    seeds = choose_seed_labels(dataset, cfg.loop.seed_fraction, cfg.seed)
    return Setup(dataset, build_synthetic(cfg), lex, embedding, seeds)


def make_loop(cfg: ExperimentConfig, setup: Setup, pretrained: dict | None = None) -> AlignmentLoop:
    return AlignmentLoop(setup.dataset, setup.seed_labels, setup.lexicon, setup.embedding,
                         cfg.loop_config(), cfg.recognizer_config(), setup.synthetic, pretrained)


# -- run directory --------------------------------------------------------------------------

def _report_line(report: RoundReport) -> str:
    return json.dumps(report.to_json(), sort_keys=True)


def write_reports(out: Path, reports: list[RoundReport]):
    with open(out / "reports.jsonl", "w", encoding="utf-8", newline="\n") as fh:
        for r in reports:
            fh.write(_report_line(r) + "\n")
    with open(out / "summary.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for r in reports:
            w.writerow(["" if getattr(r, c) is None else getattr(r, c) for c in SUMMARY_COLUMNS])


def run_metrics(reports: list[RoundReport]) -> dict:
    first, last = reports[0], reports[-1]
    return {
        "rounds": len(reports),
        "promotion_rounds": sum(1 for r in reports if r.promotions),
        "round0": {"cer": first.cer, "wer": first.wer},
        "final": {"cer": last.cer, "wer": last.wer},
        "precision": [r.precision for r in reports if r.precision is not None],
        "n_aligned": last.n_aligned,
        "n_unaligned": last.n_unaligned,
    }


def save_checkpoint(loop: AlignmentLoop, root: Path) -> Path:
    path = root / "checkpoints" / f"round-{loop.round - 1:03d}"
    path.mkdir(parents=True, exist_ok=True)
    state = loop.state()
    save_params(path / "state.bin", state["arrays"], "loop-state", state["meta"])
    (path / "pool.json").write_text(json.dumps(loop.pool.to_json(), sort_keys=True), encoding="utf-8")
    rec.save_recognizer(path / "recognizer.bin", loop.recognizer.params, loop.rec_cfg)
    proj.save_projector(path / "projector.bin", loop.projector.params)
    return path


def latest_checkpoint(root: Path) -> Path | None:
    found = sorted((root / "checkpoints").glob("round-*"))
    found = [p for p in found if (p / "state.bin").exists()]
    return found[-1] if found else None


def _resume_arrays(path: Path):
    arrays, meta = load_params(path / "state.bin", "loop-state")
    pretrained = {k[len("rec.param."):]: v for k, v in arrays.items() if k.startswith("rec.param.")}
    return arrays, meta, pretrained


def run_experiment(cfg: ExperimentConfig, setup: Setup, out=None, resume: bool = False,
                   force: bool = False, pretrained: dict | None = None,
                   dump_plans: bool = False) -> list[RoundReport]:
    """Run the loop; with ``out`` set, checkpoint every round and write the run files."""
    if out is None:
        return make_loop(cfg, setup, pretrained).run()
    out = Path(out)
    resolved = cfg.dumps()
    state = None
    if resume:
        old = out / "resolved-config.json"
        if not old.exists():
            raise ConfigError(f"nothing to resume in {out}")
        if old.read_text(encoding="utf-8") != resolved:
            raise ConfigError(f"config differs from the one recorded in {old}")
        ckpt = latest_checkpoint(out)
        if ckpt is not None:
            state = _resume_arrays(ckpt)
    elif (out / "reports.jsonl").exists() or (out / "checkpoints").exists():
        if not force:
            raise FileExistsError(f"{out} already holds a run (use --force or --resume)")
        for name in ("checkpoints", "reports.jsonl", "summary.csv", "metrics.json"):
            p = out / name
            if p.is_dir():
                shutil.rmtree(p)
            elif p.exists():
                p.unlink()
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved-config.json").write_text(resolved, encoding="utf-8")
    setup.lexicon.save(out / "lexicon.json")
    setup.embedding.save(out / "embedding.json")

    if state is None:
        loop = make_loop(cfg, setup, pretrained)
    else:
        arrays, meta, params = state
        loop = make_loop(cfg, setup, params)
        loop.load_state(arrays, meta)
        log.info("resumed at round %d", loop.round)

    def on_round(lp, report):
        path = save_checkpoint(lp, out)
        if dump_plans and report.promotions:
            dump_plan_csv(lp.last_plan, path / "plan.csv", min_mass=1e-12)
        write_reports(out, lp.reports)

    reports = loop.run(on_round)
    write_reports(out, reports)
    (out / "metrics.json").write_text(json.dumps(run_metrics(reports), indent=2, sort_keys=True) + "\n",
                                      encoding="utf-8")
    return reports


# -- ablation grid ----------------------------------------------------------------------------

def ablation_label(lambda_phoc: float) -> str:
    return "CTC only" if lambda_phoc == 0 else "CTC + PHOC"


def _mean_std(xs):
    xs = [x for x in xs if x is not None]
    if not xs:
        return None, None
    a = np.asarray(xs, dtype=np.float64)
    return float(a.mean()), float(a.std(ddof=1)) if len(a) > 1 else 0.0


ABLATION_COLUMNS = ("method", "lambda_phoc", "prior", "seed_fraction", "runs", "failures",
                    "cer_mean", "cer_std", "wer_mean", "wer_std", "round0_wer_mean", "round0_wer_std",
                    "precision1_mean", "precision1_std")


def run_ablation(cfg: ExperimentConfig, out) -> list[dict]:
    """Run every (lambda_phoc, prior, seed fraction) cell over ``cfg.ablate.seeds``.

    Data, embedding and pre-training are shared between cells where the
    grid axis does not affect them. A failing run is recorded and the grid
    carries on. Writes ``ablation.csv`` (one row per cell) and
    ``reports.jsonl`` (every round of every run, tagged with its cell).
    """
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved-config.json").write_text(cfg.dumps(), encoding="utf-8")
    a = cfg.ablate
    datasets, embeddings, pretrained = {}, {}, {}
    rows, lines = [], []
    for lam in a.lambda_phoc:
        for prior in a.priors:
            for frac in a.seed_fractions:
                runs, failures = [], 0
                for s in a.seeds:
                    run_cfg = cfg.override(**{"seed": s, "recognizer.lambda_phoc": lam,
                                              "lexicon.prior": prior, "loop.seed_fraction": frac})
                    cell = {"lambda_phoc": lam, "prior": prior, "seed_fraction": frac, "seed": s}
                    try:
                        if s not in datasets:
                            datasets[s] = build_dataset(run_cfg)
                        setup = prepare(run_cfg, datasets[s], embeddings.get(s))
                        embeddings[s] = setup.embedding
                        loop = make_loop(run_cfg, setup, pretrained.get((s, lam)))
                        pretrained.setdefault((s, lam), {k: v.copy() for k, v in loop.recognizer.params.items()})
                        reports = loop.run()
                    except Exception as e:  # recorded, grid continues
                        log.error("ablation run %s failed: %s", cell, e)
                        failures += 1
                        lines.append(json.dumps({**cell, "error": str(e)}, sort_keys=True))
                        continue
                    for r in reports:
                        lines.append(json.dumps({**cell, **r.to_json()}, sort_keys=True))
                    runs.append({"cer": reports[-1].cer, "wer": reports[-1].wer,
                                 "round0_wer": reports[0].wer,
                                 "precision1": reports[0].precision})
                row = {"method": ablation_label(lam), "lambda_phoc": lam, "prior": prior,
                       "seed_fraction": frac, "runs": len(runs), "failures": failures}
                for key in ("cer", "wer", "round0_wer", "precision1"):
                    row[f"{key}_mean"], row[f"{key}_std"] = _mean_std([r[key] for r in runs])
                rows.append(row)
    with open(out / "reports.jsonl", "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(line + "\n" for line in lines)
    with open(out / "ablation.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ABLATION_COLUMNS)
        for row in rows:
            w.writerow(["" if row[c] is None else row[c] for c in ABLATION_COLUMNS])
    return rows
