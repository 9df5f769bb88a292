"""Command-line entry point.

    othr gen-data [--config C] [--seed S] [--out DATASET_DIR] [--force]
    othr run      [--config C] [--prior P] [--rounds-max R] [--seed S] [--out RUN_DIR] [--force | --resume]
                  [--dump-plans]
    othr eval     --checkpoint CKPT --dataset DATASET_DIR [--split test] [--out FILE]
    othr ablate   [--config C] [--out DIR]

Exit codes: 0 success, 1 runtime failure, 2 usage or config error.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import PRIORS, ConfigError, ExperimentConfig
from .experiment import build_dataset, latest_checkpoint, prepare, run_ablation, run_experiment
from .loop import LoopError, evaluate
from . import recognizer as rec
from .synth import Dataset, load_dataset, save_dataset

log = logging.getLogger("othr")


class UsageError(Exception):
    pass


def _config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "prior", None) is not None:
        changes["lexicon.prior"] = args.prior
    if getattr(args, "rounds_max", None) is not None:
        changes["loop.rounds_max"] = args.rounds_max
    if getattr(args, "out", None) is not None:
        changes["dataset" if args.command == "gen-data" else "out"] = args.out
    return cfg.override(**changes) if changes else cfg


def cmd_gen_data(args) -> int:
    cfg = _config(args)
    root = Path(cfg.dataset)
    if (root / "manifest.json").exists() and not args.force:
        raise UsageError(f"{root} already holds a dataset; pass --force to regenerate it")
    ds = build_dataset(cfg)
    save_dataset(ds, root, force=True)
    (root / "resolved-config.json").write_text(cfg.dumps(), encoding="utf-8")
    log.info("wrote %d images to %s", len(ds), root)
    return 0


def _load_dataset(path) -> Dataset:
    root = Path(path)
    if not (root / "manifest.json").exists():
        raise UsageError(f"no dataset at {root}; run `othr gen-data` first")
    return load_dataset(root)


def cmd_run(args) -> int:
    if args.force and args.resume:
        raise UsageError("--force and --resume are mutually exclusive")
    cfg = _config(args)
    setup = prepare(cfg, _load_dataset(cfg.dataset))
    reports = run_experiment(cfg, setup, cfg.out, resume=args.resume, force=args.force,
                             dump_plans=args.dump_plans)
    last = reports[-1]
    print(json.dumps({"rounds": len(reports), "cer": last.cer, "wer": last.wer}))
    return 0


def cmd_eval(args) -> int:
    ckpt = Path(args.checkpoint)
    if ckpt.is_dir() and not (ckpt / "recognizer.bin").exists():
        found = latest_checkpoint(ckpt)
        if found is None:
            raise UsageError(f"no checkpoint under {ckpt}")
        ckpt = found
    path = ckpt / "recognizer.bin" if ckpt.is_dir() else ckpt
    if not path.exists():
        raise UsageError(f"no recognizer checkpoint at {path}")
    params, rcfg = rec.load_recognizer(path)
    ds = _load_dataset(args.dataset)
    idx = ds.indices(args.split)
    if len(idx) == 0:
        raise UsageError(f"split {args.split!r} is empty")
    if ds.images.shape[1:] != (rcfg.height, rcfg.width):
        raise UsageError(f"images of shape {ds.images.shape[1:]} do not fit the recognizer")
    cer, wer = evaluate(params, rcfg, ds.images[idx], [ds.truths[i] for i in idx])
    result = {"checkpoint": str(path), "split": args.split, "n": int(len(idx)), "cer": cer, "wer": wer}
    text = json.dumps(result, sort_keys=True)
    print(text)
    out = Path(args.out) if args.out else path.parent / f"eval-{args.split}.json"
    out.write_text(text + "\n", encoding="utf-8")
    return 0


def cmd_ablate(args) -> int:
    cfg = _config(args)
    rows = run_ablation(cfg, cfg.out)
    for row in rows:
        print(json.dumps(row, sort_keys=True))
    return 1 if any(r["runs"] == 0 for r in rows) else 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="othr", description="OT-based pseudo-labelling for word recognition")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="render the synthetic word-image dataset")
    g.add_argument("--config")
    g.add_argument("--seed", type=int)
    g.add_argument("--out", help="dataset directory (overrides config 'dataset')")
    g.add_argument("--force", action="store_true", help="overwrite an existing dataset")
    g.set_defaults(func=cmd_gen_data)

    r = sub.add_parser("run", help="run the alignment loop on a generated dataset")
    r.add_argument("--config")
    r.add_argument("--seed", type=int)
    r.add_argument("--prior", choices=PRIORS)
    r.add_argument("--rounds-max", type=int)
    r.add_argument("--out", help="run directory (overrides config 'out')")
    r.add_argument("--force", action="store_true", help="discard an existing run in --out")
    r.add_argument("--resume", action="store_true", help="continue from the latest checkpoint")
    r.add_argument("--dump-plans", action="store_true",
                   help="write each promotion round's transport plan as plan.csv next to its checkpoint")
    r.set_defaults(func=cmd_run)

    e = sub.add_parser("eval", help="greedy-CTC CER/WER of a checkpoint")
    e.add_argument("--checkpoint", required=True, help="run dir, round dir or recognizer.bin")
    e.add_argument("--dataset", required=True)
    e.add_argument("--split", default="test")
    e.add_argument("--out", help="metrics file (default: next to the checkpoint)")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="PHOC on/off x prior x seed-fraction grid")
    a.add_argument("--config")
    a.add_argument("--out", help="output directory (overrides config 'out')")
    a.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with 2 on bad usage
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError, FileExistsError, LoopError) as e:
        print(f"othr: error: {e}", file=sys.stderr)
        return 2
    except Exception as e:
        log.debug("failure", exc_info=True)
        print(f"othr: failed: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
