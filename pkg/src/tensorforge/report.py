"""Dataset reporting: a delimited summary table plus rendered figures.

Reads a dataset index (and optionally solver-bench timings) and writes
report.csv alongside PNG figures: operator frequency, FLOP and element-count
distributions, and the per-level program counts.
"""

from __future__ import annotations

import csv
import json
from collections import Counter
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .datasets import load_index  # noqa: E402


def _load_manifests(dataset_dir: Path, index: dict) -> list[dict]:
    manifests = []
    for entry in index["entries"]:
        path = Path(dataset_dir) / entry["manifest"]
        manifests.append(json.loads(path.read_text()))
    return manifests


def write_report(dataset_dir: Path, out_dir: Path,
                 bench_json: Path | None = None) -> dict:
    """Produce report.csv and figures for one dataset directory."""
    dataset_dir = Path(dataset_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    index = load_index(dataset_dir)
    manifests = _load_manifests(dataset_dir, index)

    csv_path = out_dir / "report.csv"
    with csv_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["program_id", "level", "mode", "num_ops", "num_edges",
                         "total_flops", "total_numel", "ops"])
        for m in manifests:
            writer.writerow([m["program_id"], m["level"], m.get("mode", ""),
                             len(m["ops"]), len(m["edge_shapes"]),
                             m["total_flops"], m["total_numel"], " ".join(m["ops"])])

    figures = []

    op_counts = Counter(op for m in manifests for op in m["ops"])
    fig, ax = plt.subplots(figsize=(12, 4))
    names = [n for n, _ in op_counts.most_common()]
    ax.bar(names, [op_counts[n] for n in names], color="#4878d0")
    ax.set_ylabel("occurrences")
    ax.set_title("Operator frequency")
    ax.tick_params(axis="x", rotation=90, labelsize=7)
    fig.tight_layout()
    path = out_dir / "operator_frequency.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    figures.append(path.name)

    for key, fname, label in (("total_flops", "flops_hist.png", "total FLOPs"),
                              ("total_numel", "numel_hist.png", "total elements")):
        values = [m[key] for m in manifests if m[key] > 0]
        fig, ax = plt.subplots(figsize=(6, 4))
        if values:
            ax.hist(values, bins=min(40, max(5, len(values) // 5)), color="#6acc64")
            ax.set_xscale("log")
        ax.set_xlabel(label)
        ax.set_ylabel("programs")
        ax.set_title(f"Distribution of {label}")
        fig.tight_layout()
        path = out_dir / fname
        fig.savefig(path, dpi=120)
        plt.close(fig)
        figures.append(path.name)

    level_counts = Counter(m["level"] for m in manifests)
    fig, ax = plt.subplots(figsize=(5, 4))
    levels = sorted(level_counts)
    ax.bar([str(lv) for lv in levels], [level_counts[lv] for lv in levels], color="#d65f5f")
    ax.set_xlabel("difficulty level")
    ax.set_ylabel("programs")
    ax.set_title("Programs per level")
    fig.tight_layout()
    path = out_dir / "level_counts.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    figures.append(path.name)

    if bench_json is not None:
        doc = json.loads(Path(bench_json).read_text())
        times = doc.get("times_s", [])
        fig, ax = plt.subplots(figsize=(6, 4))
        if times:
            ax.hist(times, bins=min(30, max(5, len(times) // 2)), color="#956cb4")
        ax.set_xlabel("solve wall time (s)")
        ax.set_ylabel("trials")
        ax.set_title(f"Solver timing, level {doc.get('level', '?')}")
        fig.tight_layout()
        path = out_dir / "solver_times.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        figures.append(path.name)

    return {
        "csv": csv_path.name,
        "figures": figures,
        "programs": len(manifests),
        "levels": {str(k): v for k, v in sorted(level_counts.items())},
        "distinct_operators": len(op_counts),
    }
