import pytest

from othr.config import ExperimentConfig

# a run that finishes in a few seconds on one core
TINY = {
    "data": {"vocab_size": 20, "n_tokens": 120},
    "synthetic": {"n_images": 100, "pretrain_steps": 10},
    "embedding": {"dim": 5},
    "recognizer": {"phase_a_steps": 5},
    "projector": {"epochs": 1, "steps_per_epoch": 5},
    "loop": {"K": 40, "seed_fraction": 0.1},
    "ablate": {"seeds": [0, 1], "priors": ["empirical"], "lambda_phoc": [0.5, 0.0]},
}


@pytest.fixture
def tiny_cfg(tmp_path):
    return ExperimentConfig.from_dict({**TINY, "dataset": str(tmp_path / "data"), "out": str(tmp_path / "run")})


# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
