"""Standalone CLI: run conformance over a generated dataset directory.

Exit status is 0 when the pass rate meets --min-pass-rate, 1 otherwise, 2 for
usage problems.
"""

from __future__ import annotations

import argparse
import json
import sys
import tempfile
from pathlib import Path

from .runner import ConformanceError, check_program, run_conformance, write_report
from .shrink import shrink_program


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="torch-conformance",
        description="Execute generated tensor programs and compare output shapes "
                    "against their manifests")
    parser.add_argument("dataset_dir")
    parser.add_argument("--limit", type=int, default=None)
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--timeout", type=float, default=60.0)
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--min-pass-rate", dest="min_pass_rate", type=float, default=0.99)
    parser.add_argument("--out", default="conformance_report.json")
    parser.add_argument("--shrink", action="store_true",
                        help="halve shapes (when consistent) before executing")
    return parser


def _run_shrunk(args) -> "ConformanceReport":
    from .runner import ConformanceReport

    dataset_dir = Path(args.dataset_dir)
    index = json.loads((dataset_dir / "index.json").read_text())
    entries = index["entries"][: args.limit if args.limit else None]
    report = ConformanceReport()
    with tempfile.TemporaryDirectory(prefix="conformance_shrink_") as td:
        scratch = Path(td)
        for entry in entries:
            shrunk = shrink_program(dataset_dir, entry, scratch)
            if shrunk is None:
                report.results.append(check_program(dataset_dir, entry, timeout=args.timeout))
                continue
            src, man = shrunk
            surrogate = {"source": src.name, "manifest": man.name}
            report.results.append(check_program(scratch, surrogate, timeout=args.timeout))
    return report


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.shrink:
            report = _run_shrunk(args)
        else:
            report = run_conformance(Path(args.dataset_dir), limit=args.limit,
                                     device=args.device, timeout=args.timeout,
                                     workers=args.workers)
    except ConformanceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    path = write_report(report, Path(args.out))
    doc = report.to_dict()
    print(json.dumps({"pass_rate": doc["pass_rate"], "programs": doc["programs"],
                      "status_counts": doc["status_counts"], "report": str(path)},
                     indent=2))
    return 0 if report.pass_rate >= args.min_pass_rate else 1


if __name__ == "__main__":
    sys.exit(main())
