"""Child-process entry point: execute one generated program and report shapes.

Loads the source file in an isolated namespace, builds the inputs, runs the
operator function, and prints a single JSON line with the returned tensors'
shapes (or the error). The parent process owns timeouts and comparison.
"""

from __future__ import annotations

import json
import sys
import traceback


def run_one(source_path: str) -> dict:
    try:
        with open(source_path) as fh:
            source = fh.read()
        namespace: dict = {}
        exec(compile(source, source_path, "exec"), namespace)
        inputs = namespace["get_inputs"]()
        outputs = namespace["fused_operator"](*inputs)
        shapes = []
        for out in outputs:
            shape = getattr(out, "shape", None)
            if shape is None:
                return {"status": "exec_error",
                        "error": f"returned non-tensor of type {type(out).__name__}"}
            shapes.append(list(shape))
        return {"status": "ok", "shapes": shapes}
    except Exception:
        return {"status": "exec_error", "error": traceback.format_exc(limit=4)}


def main() -> int:
    if len(sys.argv) != 2:
        print(json.dumps({"status": "exec_error", "error": "usage: executor SOURCE.py"}))
        return 2
    print(json.dumps(run_one(sys.argv[1])))
    return 0


if __name__ == "__main__":
    sys.exit(main())
