"""Conformance runner: execute every program of a dataset in fresh
subprocesses and compare returned shapes against the sidecar manifests.

The runner never imports the generator package; it consumes the dataset
directory format (index.json plus per-program .py/.json files) as-is and is
read-only with respect to the dataset tree.
"""

from __future__ import annotations

import json
import os
import subprocess
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

DEFAULT_TIMEOUT = 60.0

# Ops that run with framework-default auxiliary statistics; flagged per report
# entry so failures can be triaged.
STATS_DEFAULT_OPS = {"BatchNorm", "InstanceNorm"}


class ConformanceError(Exception):
    pass


@dataclass
class ProgramResult:
    program_id: str
    status: str  # pass | exec_error | shape_mismatch
    details: str = ""
    uses_default_stats: bool = False
    integer_edges: bool = False

    def to_dict(self) -> dict:
        return {
            "id": self.program_id,
            "status": self.status,
            "details": self.details,
            "uses_default_stats": self.uses_default_stats,
            "integer_edges": self.integer_edges,
        }


@dataclass
class ConformanceReport:
    results: list[ProgramResult] = field(default_factory=list)

    @property
    def pass_rate(self) -> float:
        if not self.results:
            return 0.0
        return sum(1 for r in self.results if r.status == "pass") / len(self.results)

    def to_dict(self) -> dict:
        counts: dict[str, int] = {}
        for r in self.results:
            counts[r.status] = counts.get(r.status, 0) + 1
        return {
            "programs": len(self.results),
            "pass_rate": self.pass_rate,
            "status_counts": counts,
            "results": [r.to_dict() for r in sorted(self.results, key=lambda r: r.program_id)],
        }


def _load_index(dataset_dir: Path) -> dict:
    index_path = Path(dataset_dir) / "index.json"
    if not index_path.exists():
        raise ConformanceError(f"no index.json under {dataset_dir}")
    return json.loads(index_path.read_text())


def _child_env() -> dict:
    env = dict(os.environ)
    env.setdefault("OMP_NUM_THREADS", "1")
    env.setdefault("MKL_NUM_THREADS", "1")
    return env


def execute_program(source_path: Path, timeout: float = DEFAULT_TIMEOUT) -> dict:
    """Run one program in a fresh interpreter; returns the executor's verdict."""
    cmd = [sys.executable, "-m", "torch_conformance.executor", str(source_path)]
    try:
        proc = subprocess.run(cmd, capture_output=True, text=True,
                              timeout=timeout, env=_child_env())
    except subprocess.TimeoutExpired:
        return {"status": "exec_error", "error": f"timeout after {timeout}s"}
    if proc.returncode != 0 and not proc.stdout.strip():
        return {"status": "exec_error",
                "error": f"exit {proc.returncode}: {proc.stderr[-400:]}"}
    try:
        return json.loads(proc.stdout.strip().splitlines()[-1])
    except (json.JSONDecodeError, IndexError):
        return {"status": "exec_error",
                "error": f"unparseable executor output: {proc.stdout[-200:]!r}"}


def check_program(dataset_dir: Path, entry: dict,
                  timeout: float = DEFAULT_TIMEOUT) -> ProgramResult:
    dataset_dir = Path(dataset_dir)
    manifest = json.loads((dataset_dir / entry["manifest"]).read_text())
    result = ProgramResult(
        program_id=manifest["program_id"],
        status="pass",
        uses_default_stats=bool(set(manifest["ops"]) & STATS_DEFAULT_OPS),
        integer_edges=bool(manifest.get("integer_edges")),
    )
    verdict = execute_program(dataset_dir / entry["source"], timeout=timeout)
    if verdict["status"] != "ok":
        result.status = "exec_error"
        result.details = verdict.get("error", "")[:800]
        return result
    expected = [manifest["edge_shapes"][str(e)] for e in manifest["outputs"]]
    got = verdict["shapes"]
    if got != expected:
        result.status = "shape_mismatch"
        result.details = f"expected {expected}, got {got}"
    return result


def run_conformance(dataset_dir: Path, limit: Optional[int] = None,
                    device: str = "cpu", timeout: float = DEFAULT_TIMEOUT,
                    workers: int = 1) -> ConformanceReport:
    """Execute up to `limit` programs from the dataset and report per-program
    verdicts. A failing program never aborts the batch."""
    if device != "cpu":
        raise ConformanceError("only cpu execution is supported")
    dataset_dir = Path(dataset_dir)
    index = _load_index(dataset_dir)
    entries = index["entries"][: limit if limit else None]
    report = ConformanceReport()
    if workers <= 1:
        for entry in entries:
            report.results.append(check_program(dataset_dir, entry, timeout=timeout))
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(check_program, dataset_dir, e, timeout) for e in entries]
            report.results = [f.result() for f in futures]
    return report


def write_report(report: ConformanceReport, out_path: Path) -> Path:
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    return out_path
