import shutil
from pathlib import Path

import numpy as np
import pytest

from fare.cli import main

ACCEPTANCE_LINES: list[str] = []

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
SMOKE = CONFIGS / "smoke.yaml"
CHAIN = ("simulate", "preprocess", "train-pp", "train-ip", "calibrate", "evaluate", "ablate")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def run_cli(*args) -> int:
    return main([str(a) for a in args])


def run_chain(out: Path, config: Path | None = SMOKE, seed: int | None = None, chain=CHAIN) -> None:
    extra = [] if seed is None else ["--seed", seed]
    if config is not None:
        extra += ["--config", config]
    for cmd in chain:
        code = run_cli(cmd, "--out", out, *extra)
        if code != 0:
            raise RuntimeError(f"`fare {cmd}` exited with {code}")


@pytest.fixture(scope="session")
def smoke_workspace(tmp_path_factory):
    out = tmp_path_factory.mktemp("smoke") / "ws"
    run_chain(out)
    return out


@pytest.fixture
def smoke_copy(smoke_workspace, tmp_path):
    dst = tmp_path / "ws"
    shutil.copytree(smoke_workspace, dst)
    return dst


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
