"""Test-time search scaffolding: fragment enumeration over the operator body,
hybrid-source reconstruction, and best-candidate selection.

The kernel generator, the verifier, and the benchmark are abstract callables;
the repo ships deterministic test doubles in their place.
"""

from __future__ import annotations

import ast
from dataclasses import dataclass
from typing import Callable, Optional

from .emitter import EmittedProgram

FRAGMENT_MAX_LEN = 5
FRAGMENT_CAP = 1024


class FragmentError(Exception):
    pass


class FragmentOutOfRange(FragmentError):
    pass


class BindingMismatch(FragmentError):
    pass


class NoneVerified(FragmentError):
    """No candidate survived verification (m' = 0)."""


@dataclass(frozen=True)
class Fragment:
    start: int
    length: int


@dataclass(frozen=True)
class FragmentPlan:
    fragments: tuple[Fragment, ...]

    def __len__(self) -> int:
        return len(self.fragments)

    def __iter__(self):
        return iter(self.fragments)


@dataclass
class Candidate:
    fragment: Fragment
    replacement_source: Optional[str] = None
    verified: bool = False
    measured_time: Optional[float] = None
    hybrid_source: Optional[str] = None


@dataclass(frozen=True)
class SearchResult:
    best: Optional[Candidate]
    candidates: tuple[Candidate, ...]
    plan: FragmentPlan

    @property
    def none_verified(self) -> bool:
        return self.best is None


def plan_size(n: int, max_len: int = FRAGMENT_MAX_LEN, cap: int = FRAGMENT_CAP) -> int:
    """Closed-form fragment count: min(sum over lengths of (n - l + 1), cap)."""
    total = sum(n - l + 1 for l in range(1, min(max_len, n) + 1))
    return min(total, cap)


def extract(n: int, max_len: int = FRAGMENT_MAX_LEN, cap: int = FRAGMENT_CAP) -> FragmentPlan:
    """All contiguous operator subsequences up to max_len, shortest first,
    truncated to the cap in that same order."""
    if n < 1:
        raise FragmentError("program must contain at least one operator")
    frags: list[Fragment] = []
    for length in range(1, min(max_len, n) + 1):
        for start in range(n - length + 1):
            if len(frags) == cap:
                return FragmentPlan(tuple(frags))
            frags.append(Fragment(start, length))
    return FragmentPlan(tuple(frags))


def fragment_boundary(program: EmittedProgram, fragment: Fragment) -> tuple[list[int], list[int]]:
    """Free inputs and exported outputs of a fragment, from manifest def/use chains.

    Inputs are edges consumed inside but defined outside, in first-use order.
    Outputs are edges defined inside and needed outside (or returned), in
    definition order.
    """
    nodes = program.manifest["nodes"]
    n = len(nodes)
    if not (0 <= fragment.start and fragment.start + fragment.length <= n and fragment.length >= 1):
        raise FragmentOutOfRange(f"fragment {fragment} outside 0..{n}")
    inside = nodes[fragment.start:fragment.start + fragment.length]
    defined = {node["output"] for node in inside}
    free_inputs: list[int] = []
    for node in inside:
        for e in node["inputs"]:
            if e not in defined and e not in free_inputs:
                free_inputs.append(e)
    after_uses = {e for node in nodes[fragment.start + fragment.length:] for e in node["inputs"]}
    returned = set(program.manifest["outputs"])
    exported = [node["output"] for node in inside
                if node["output"] in after_uses or node["output"] in returned]
    return free_inputs, exported


def _entry_params(replacement: str, entry: str) -> list[str]:
    try:
        tree = ast.parse(replacement)
    except SyntaxError as exc:
        raise BindingMismatch(f"replacement does not parse: {exc}") from None
    for node in tree.body:
        if isinstance(node, ast.FunctionDef) and node.name == entry:
            return [a.arg for a in node.args.args]
    raise BindingMismatch(f"replacement does not define {entry}()")


def reconstruct(program: EmittedProgram, fragment: Fragment, replacement: str,
                replacement_entry: str) -> str:
    """Splice one fused call in place of the fragment's statements.

    Every statement outside the fragment is preserved verbatim, so the def/use
    chain of the surrounding code is untouched.
    """
    free_inputs, exported = fragment_boundary(program, fragment)
    params = _entry_params(replacement, replacement_entry)
    if len(params) != len(free_inputs):
        raise BindingMismatch(
            f"{replacement_entry} takes {len(params)} tensors, fragment needs {len(free_inputs)}")

    lines = program.source.split("\n")
    header_idx = next(i for i, ln in enumerate(lines) if ln.startswith("def fused_operator("))
    body_start = header_idx + 1
    args = ", ".join(f"tensor_{e}" for e in free_inputs)
    targets = ", ".join(f"tensor_{e}" for e in exported)
    if exported:
        comma = "," if len(exported) == 1 else ""
        call_line = f"    {targets}{comma} = {replacement_entry}({args})"
    else:
        call_line = f"    {replacement_entry}({args})"
    new_body = (lines[body_start:body_start + fragment.start]
                + [call_line]
                + lines[body_start + fragment.start + fragment.length:])
    result = (lines[:header_idx - 2]
              + ["", "", replacement.rstrip("\n")]
              + lines[header_idx - 2:header_idx + 1]
              + new_body)
    return "\n".join(result)


def select_best(candidates: list[Candidate]) -> Candidate:
    """Fastest verified candidate; ties break to smaller start, then length."""
    verified = [c for c in candidates if c.verified and c.measured_time is not None]
    if not verified:
        raise NoneVerified("no candidate passed verification")
    return min(verified, key=lambda c: (c.measured_time, c.fragment.start, c.fragment.length))


# -- default test doubles ----------------------------------------------------

def passthrough_generator(program: EmittedProgram, fragment: Fragment) -> str:
    """Wraps the fragment's own statements in a function; an identity 'kernel'."""
    free_inputs, exported = fragment_boundary(program, fragment)
    lines = program.source.split("\n")
    header_idx = next(i for i, ln in enumerate(lines) if ln.startswith("def fused_operator("))
    body = lines[header_idx + 1 + fragment.start:
                 header_idx + 1 + fragment.start + fragment.length]
    params = ", ".join(f"tensor_{e}" for e in free_inputs)
    rets = ", ".join(f"tensor_{e}" for e in exported)
    out = [f"def fused_fragment({params}):"] + body + [f"    return [{rets}]"]
    return "\n".join(out)


def always_true_verifier(replacement: str) -> bool:
    return True


def statement_count_bench(source: str) -> float:
    """Deterministic cost model: one unit per statement in the operator body."""
    tree = ast.parse(source)
    for node in tree.body:
        if isinstance(node, ast.FunctionDef) and node.name == "fused_operator":
            return float(len(node.body))
    raise FragmentError("source has no fused_operator function")


def flops_remaining_bench(program: EmittedProgram) -> Callable[[str], float]:
    """Cost model charging each surviving statement its manifest FLOP share."""
    from .catalog import default_catalog, flops_of

    catalog = default_catalog()
    shapes = {int(e): tuple(s) for e, s in program.manifest["edge_shapes"].items()}
    per_line: dict[str, float] = {}
    for node in program.manifest["nodes"]:
        spec = catalog.lookup(node["op"])
        cost = flops_of(spec, [shapes[e] for e in node["inputs"]],
                        shapes[node["output"]], node["attrs"])
        per_line[f"tensor_{node['output']}"] = float(cost)

    def bench(source: str) -> float:
        tree = ast.parse(source)
        total = 1.0
        for fn in tree.body:
            if isinstance(fn, ast.FunctionDef) and fn.name == "fused_operator":
                for stmt in fn.body:
                    if isinstance(stmt, ast.Assign) and isinstance(stmt.targets[0], ast.Name):
                        total += per_line.get(stmt.targets[0].id, 1.0)
        return total

    return bench


def run_search(program: EmittedProgram,
               generator: Callable[[EmittedProgram, Fragment], Optional[str]] = passthrough_generator,
               verifier: Callable[[str], bool] = always_true_verifier,
               bench: Callable[[str], float] = statement_count_bench,
               entry: str = "fused_fragment",
               max_len: int = FRAGMENT_MAX_LEN,
               cap: int = FRAGMENT_CAP) -> SearchResult:
    """extract -> generate/verify per fragment -> reconstruct -> bench -> select.

    Deterministic given deterministic interfaces; NoneVerified comes back as a
    result state rather than an exception.
    """
    n = len(program.manifest["nodes"])
    plan = extract(n, max_len=max_len, cap=cap)
    candidates: list[Candidate] = []
    for fragment in plan:
        cand = Candidate(fragment=fragment)
        replacement = generator(program, fragment)
        if replacement is not None:
            cand.replacement_source = replacement
            if verifier(replacement):
                cand.verified = True
                cand.hybrid_source = reconstruct(program, fragment, replacement, entry)
                cand.measured_time = bench(cand.hybrid_source)
        candidates.append(cand)
    try:
        best = select_best(candidates)
    except NoneVerified:
        best = None
    return SearchResult(best=best, candidates=tuple(candidates), plan=plan)
