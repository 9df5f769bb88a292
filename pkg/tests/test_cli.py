import csv
import hashlib
import json
import shutil

import pytest

from othr.cli import main
from conftest import TINY


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def tree_digest(root):
    return {str(p.relative_to(root)): sha(p) for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture
def env(tmp_path):
    cfg = {**TINY, "dataset": str(tmp_path / "data"), "out": str(tmp_path / "run")}
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(cfg))
    assert main(["gen-data", "--config", str(path)]) == 0
    return tmp_path, str(path)


def read_reports(run):
    return [json.loads(line) for line in (run / "reports.jsonl").read_text().splitlines()]


def test_gen_data_writes_dataset_and_guards_overwrite(env, capsys):
    root, cfg = env
    data = root / "data"
    assert (data / "manifest.json").exists() and (data / "labels.tsv").exists()
    assert len(list((data / "images").glob("*.pgm"))) == 120
    before = tree_digest(data)
    assert main(["gen-data", "--config", cfg]) == 2
    assert "already holds a dataset" in capsys.readouterr().err
    assert main(["gen-data", "--config", cfg, "--force"]) == 0
    assert tree_digest(data) == before


def test_run_writes_outputs_and_is_deterministic(env, capsys):
    root, cfg = env
    run = root / "run"
    assert main(["run", "--config", cfg]) == 0
    for name in ("resolved-config.json", "lexicon.json", "embedding.json", "reports.jsonl", "summary.csv",
                 "metrics.json"):
        assert (run / name).exists(), name
    first = (run / "reports.jsonl").read_bytes()
    reports = read_reports(run)
    assert reports[-1]["n_unaligned"] == 0
    with open(run / "summary.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == len(reports) and list(rows[0])[:3] == ["round", "promotions", "precision"]

    assert main(["run", "--config", cfg]) == 2  # refuses to overwrite
    assert "already holds a run" in capsys.readouterr().err
    assert (run / "reports.jsonl").read_bytes() == first
    assert main(["run", "--config", cfg, "--force"]) == 0
    assert (run / "reports.jsonl").read_bytes() == first


def test_resolved_config_reproduces_the_run(env):
    root, cfg = env
    assert main(["run", "--config", cfg]) == 0
    resolved = root / "run" / "resolved-config.json"
    assert main(["run", "--config", str(resolved), "--out", str(root / "again")]) == 0
    assert (root / "again" / "reports.jsonl").read_bytes() == (root / "run" / "reports.jsonl").read_bytes()


def test_rounds_max_zero_gives_a_single_report(env):
    root, cfg = env
    assert main(["run", "--config", cfg, "--rounds-max", "0"]) == 0
    reports = read_reports(root / "run")
    assert len(reports) == 1 and reports[0]["promotions"] == 0


def test_eval_reproduces_the_last_report_and_is_read_only(env, capsys):
    root, cfg = env
    run = root / "run"
    assert main(["run", "--config", cfg]) == 0
    capsys.readouterr()
    last = read_reports(run)[-1]
    before = tree_digest(root / "data")
    assert main(["eval", "--checkpoint", str(run), "--dataset", str(root / "data"), "--out",
                 str(root / "eval.json")]) == 0
    out = json.loads(capsys.readouterr().out)
    assert (out["cer"], out["wer"]) == (last["cer"], last["wer"])
    assert out["n"] == sum(1 for line in (root / "data" / "labels.tsv").read_text().splitlines()
                           if line.split("\t")[1] == "test")
    assert json.loads((root / "eval.json").read_text()) == out
    assert tree_digest(root / "data") == before
    # a specific round directory evaluates that round's weights
    ckpt = run / "checkpoints" / "round-000"
    assert main(["eval", "--checkpoint", str(ckpt), "--dataset", str(root / "data")]) == 0
    out0 = json.loads(capsys.readouterr().out)
    first = read_reports(run)[0]
    assert (out0["cer"], out0["wer"]) == (first["cer"], first["wer"])
    assert (ckpt / "eval-test.json").exists()


def test_eval_errors(env, capsys):
    root, cfg = env
    assert main(["run", "--config", cfg, "--rounds-max", "0"]) == 0
    run = root / "run"
    assert main(["eval", "--checkpoint", str(run), "--dataset", str(root / "data"), "--split", "nope"]) == 2
    assert "empty" in capsys.readouterr().err
    assert main(["eval", "--checkpoint", str(root / "missing"), "--dataset", str(root / "data")]) == 2
    assert main(["eval", "--checkpoint", str(run), "--dataset", str(root / "nodata")]) == 2


def test_resume_continues_bitwise(env):
    root, cfg = env
    assert main(["run", "--config", cfg]) == 0
    full = (root / "run" / "reports.jsonl").read_bytes()
    ckpts = sorted((root / "run" / "checkpoints").glob("round-*"))
    assert len(ckpts) >= 3
    # simulate an interruption after round 1
    for p in ckpts[2:]:
        shutil.rmtree(p)
    (root / "run" / "metrics.json").unlink()
    assert main(["run", "--config", cfg, "--resume"]) == 0
    assert (root / "run" / "reports.jsonl").read_bytes() == full


def test_resume_with_a_different_config_fails(env, capsys):
    root, cfg = env
    assert main(["run", "--config", cfg, "--rounds-max", "0"]) == 0
    assert main(["run", "--config", cfg, "--resume", "--seed", "5"]) == 2
    assert "differs" in capsys.readouterr().err
    assert main(["run", "--config", cfg, "--resume", "--force"]) == 2


def test_usage_errors(env, capsys):
    root, cfg = env
    with pytest.raises(SystemExit) as e:
        main(["run", "--prior", "flat"])
    assert e.value.code == 2
    with pytest.raises(SystemExit) as e:
        main([])
    assert e.value.code == 2
    bad = root / "bad.json"
    bad.write_text(json.dumps({"loop": {"K": 0}}))
    assert main(["run", "--config", str(bad)]) == 2
    assert main(["run", "--config", cfg, "--out", str(root / "x"), "--seed", "1"]) == 0
    (root / "data" / "manifest.json").unlink()
    assert main(["run", "--config", cfg, "--force"]) == 2
    assert "gen-data" in capsys.readouterr().err


def test_ablate_grid(env, capsys):
    root, cfg = env
    out = root / "abl"
    assert main(["ablate", "--config", cfg, "--out", str(out)]) == 0
    with open(out / "ablation.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["method"] for r in rows] == ["CTC + PHOC", "CTC only"]
    assert all(r["runs"] == "2" and r["failures"] == "0" for r in rows)
    lines = [json.loads(x) for x in (out / "reports.jsonl").read_text().splitlines()]
    assert {(x["lambda_phoc"], x["seed"]) for x in lines} == {(0.5, 0), (0.5, 1), (0.0, 0), (0.0, 1)}
    first = (out / "ablation.csv").read_bytes()
    assert main(["ablate", "--config", cfg, "--out", str(out)]) == 0
    assert (out / "ablation.csv").read_bytes() == first


def test_ablate_prior_grid_bookkeeping(env, capsys):
    root, _ = env
    cfg = {**TINY, "dataset": str(root / "data"),
           "ablate": {"seeds": [0, 1, 2], "priors": ["empirical", "uniform"], "lambda_phoc": [0.5]}}
    (root / "grid.json").write_text(json.dumps(cfg))
    assert main(["ablate", "--config", str(root / "grid.json"), "--out", str(root / "grid")]) == 0
    with open(root / "grid" / "ablation.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [(r["prior"], r["runs"]) for r in rows] == [("empirical", "3"), ("uniform", "3")]
    runs = {(x["prior"], x["seed"]) for x in map(json.loads, (root / "grid" / "reports.jsonl").read_text().splitlines())}
    assert len(runs) == 6


def test_run_can_dump_transport_plans(env):
    root, cfg = env
    assert main(["run", "--config", cfg, "--dump-plans"]) == 0
    reports = read_reports(root / "run")
    for k, r in enumerate(reports):
        plan = root / "run" / "checkpoints" / f"round-{k:03d}" / "plan.csv"
        assert plan.exists() == bool(r["promotions"])
    lines = (root / "run" / "checkpoints" / "round-000" / "plan.csv").read_text().splitlines()
    assert lines[0] == "row,word,mass"
    assert abs(sum(float(x.split(",")[2]) for x in lines[1:]) - 1.0) < 1e-6
