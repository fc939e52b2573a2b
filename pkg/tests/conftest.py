from __future__ import annotations

import os
import subprocess
import sys
from pathlib import Path

import pytest

from stopgrad import ReplicationStreams, StoppingModel, build_model, load_config

REPO_ROOT = Path(__file__).resolve().parents[1]


class ReplayRng:
    """Feeds a fixed sequence of uniforms to scalar simulation code."""

    def __init__(self, values):
        self._values = list(float(v) for v in values)
        self.consumed = 0

    def random(self):
        v = self._values[self.consumed]
        self.consumed += 1
        return v


@pytest.fixture(scope="session")
def wsc_model() -> StoppingModel:
    return build_model(load_config("wsc-example"))


@pytest.fixture()
def streams():
    return lambda seed, **kw: ReplicationStreams(seed, **kw)


def run_cli(args, cwd: Path) -> subprocess.CompletedProcess:
    env = dict(os.environ)
    env["PYTHONPATH"] = str(REPO_ROOT / "src") + os.pathsep + env.get("PYTHONPATH", "")
    return subprocess.run(
        [sys.executable, "-m", "stopgrad", *args],
        cwd=cwd,
        env=env,
        capture_output=True,
        text=True,
        timeout=600,
    )
