import subprocess
import sys
from pathlib import Path

import pytest


def generate_dataset(out_dir: Path, level: int, count: int, seed: int,
                     mode: str = "chain") -> Path:
    """Build fixtures through the generator's CLI; the conformance package
    never imports it."""
    cmd = [sys.executable, "-m", "tensorforge.cli", "generate",
           "--level", str(level), "--count", str(count), "--mode", mode,
           "--seed", str(seed), "--out", str(out_dir)]
    proc = subprocess.run(cmd, capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    return out_dir


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("dataset_l1")
    return generate_dataset(out, level=1, count=8, seed=101)


@pytest.fixture(scope="session")
def chain2_dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("dataset_l2")
    return generate_dataset(out, level=2, count=6, seed=202)
