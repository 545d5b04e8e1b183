"""Small-shape override: proportionally halve a program's dimensions for
memory-limited machines, re-checking constraints through the generator CLI.

Only programs whose statements carry no shape-dependent literals besides the
input constructors can be shrunk; anything else (or a failed re-check) falls
back to the original program. Shrinking writes to a scratch directory, never
into the dataset tree.
"""

from __future__ import annotations

import json
import re
import subprocess
import sys
from pathlib import Path
from typing import Optional

# LayerNorm bakes trailing dims into its call; rewriting those is out of scope.
UNSHRINKABLE_OPS = {"LayerNorm"}

_CREATE_LINE = re.compile(
    r"^(    tensor_(\d+) = torch\.(?:randn|ones|zeros)\()\[([0-9, ]*)\](\).*)$")


def _halve(shape: list[int], k: int = 1) -> list[int]:
    return [max(1, -(-d // (2 ** k))) for d in shape]


def shrink_program(dataset_dir: Path, entry: dict, scratch: Path,
                   verify_cmd: Optional[list[str]] = None,
                   halvings: int = 1) -> Optional[tuple[Path, Path]]:
    """Write a shrunk (source, manifest) pair under scratch, or return None
    when the program cannot be shrunk consistently."""
    dataset_dir = Path(dataset_dir)
    scratch = Path(scratch)
    manifest = json.loads((dataset_dir / entry["manifest"]).read_text())
    if set(manifest["ops"]) & UNSHRINKABLE_OPS:
        return None
    shrunk = dict(manifest)
    shrunk["edge_shapes"] = {e: _halve(s, halvings)
                             for e, s in manifest["edge_shapes"].items()}
    scratch.mkdir(parents=True, exist_ok=True)
    man_path = scratch / f"{manifest['program_id']}.json"
    man_path.write_text(json.dumps(shrunk, indent=2, sort_keys=True) + "\n")

    # The shrunk assignment must still satisfy every per-node constraint; the
    # generator CLI is the authority on that.
    cmd = list(verify_cmd or [sys.executable, "-m", "tensorforge.cli"])
    cmd += ["verify", str(man_path), "--min-flops", "0", "--min-size-tensor", "1"]
    proc = subprocess.run(cmd, capture_output=True, text=True)
    if proc.returncode != 0:
        man_path.unlink(missing_ok=True)
        return None

    source = (dataset_dir / entry["source"]).read_text()
    lines = []
    for line in source.splitlines():
        m = _CREATE_LINE.match(line)
        if m:
            edge = m.group(2)
            dims = ", ".join(str(d) for d in shrunk["edge_shapes"][edge])
            line = f"{m.group(1)}[{dims}]{m.group(4)}"
        lines.append(line)
    src_path = scratch / f"{manifest['program_id']}.py"
    src_path.write_text("\n".join(lines) + "\n")
    return src_path, man_path
