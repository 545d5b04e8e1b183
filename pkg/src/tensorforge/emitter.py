"""Rendering of solved graphs into functional source text plus a manifest.

The emitted module defines exactly two entry points: get_inputs(), which
constructs every input tensor with its solved shape, and fused_operator(),
whose body is one operator call per graph node and which returns the list of
unconsumed tensors.
"""

from __future__ import annotations

import ast
import json
from dataclasses import dataclass

from .catalog import Catalog, ConstraintKind
from .graph import ProgramGraph, structural_hash
from .oracle import verify_program
from .solver import ShapeSolution


class EmitError(Exception):
    pass


class UnverifiedSolution(EmitError):
    pass


class MalformedManifest(EmitError):
    pass


MANIFEST_REQUIRED = ("program_id", "level", "seed", "ops", "edge_shapes", "outputs",
                     "total_flops", "nodes", "create_statements")


@dataclass(frozen=True)
class EmittedProgram:
    source: str
    manifest: dict


def _name(edge_id: int) -> str:
    return f"tensor_{edge_id}"


def _fmt_dims(dims, m: int) -> str:
    if m == 1:
        return str(dims[0])
    return "(" + ", ".join(str(d) for d in dims) + ")"


def _qualify(qualified_name: str) -> str:
    if qualified_name.startswith("torch.nn.functional."):
        return "F." + qualified_name[len("torch.nn.functional."):]
    return qualified_name


def _render_call(spec, args: list[str], attrs: dict, m: int) -> str:
    kind = spec.constraint_kind
    fn = _qualify(spec.qualified_name)
    K = ConstraintKind
    if kind is K.REDUCE:
        call = f"{fn}({args[0]}, dim={attrs['dim']}, keepdim={attrs['keepdim']})"
    elif kind is K.DIM_PRESERVING:
        call = f"{fn}({args[0]}, dim={attrs['dim']})"
    elif kind is K.TRANSPOSE:
        call = f"{fn}({args[0]}, dim0={attrs['dim0']}, dim1={attrs['dim1']})"
    elif kind is K.CONV:
        s, p, d = attrs["stride"], attrs["padding"], attrs["dilation"]
        call = (f"{fn}({args[0]}, {args[1]}, None, {_fmt_dims([s] * m, m)}, "
                f"{_fmt_dims([p] * m, m)}, {_fmt_dims([d] * m, m)}, {attrs['groups']})")
    elif kind is K.CONV_TRANSPOSE:
        s, p, d = attrs["stride"], attrs["padding"], attrs["dilation"]
        call = (f"{fn}({args[0]}, {args[1]}, None, {_fmt_dims([s] * m, m)}, "
                f"{_fmt_dims([p] * m, m)}, {_fmt_dims([0] * m, m)}, {attrs['groups']}, "
                f"{_fmt_dims([d] * m, m)})")
    elif kind is K.POOL:
        ks = [attrs[f"k{j + 1}"] for j in range(m)]
        s, p = attrs["stride"], attrs["padding"]
        call = (f"{fn}({args[0]}, kernel_size={_fmt_dims(ks, m)}, "
                f"stride={_fmt_dims([s] * m, m)}, padding={_fmt_dims([p] * m, m)})")
    elif kind is K.NORM_BATCH:
        call = f"{fn}({args[0]}, None, None, training=True)"
    elif kind is K.NORM_LAYER:
        shape = attrs["_normalized_shape"]
        call = f"{fn}({args[0]}, [{', '.join(str(d) for d in shape)}])"
    elif kind is K.NORM_GROUP:
        call = f"{fn}({args[0]}, {attrs['groups']})"
    elif kind in (K.CAT, K.STACK):
        dim = attrs.get("dim", 0)
        call = f"{fn}([{', '.join(args)}], dim={dim})"
    elif spec.name == "Clamp":
        call = f"{fn}({args[0]}, min={attrs['min']!r}, max={attrs['max']!r})"
    else:
        call = f"{fn}({', '.join(args)})"
    if spec.returns_indexed_tuple:
        call += ".values"
    return call


def emit(graph: ProgramGraph, solution: ShapeSolution, catalog: Catalog,
         program_id: str = "program", level: int | None = None, seed: int = 0,
         mode: str = "dag") -> EmittedProgram:
    """Render source and manifest; the solution must survive oracle verification."""
    mismatches = verify_program(graph, catalog, solution)
    if mismatches:
        raise UnverifiedSolution("; ".join(mismatches[:4]))

    shapes = solution.edge_shapes
    uses_functional = any(
        catalog.lookup(n.op).qualified_name.startswith("torch.nn.functional.")
        for n in graph.nodes)
    lines = ["import torch"]
    if uses_functional:
        lines.append("import torch.nn.functional as F")
    lines += ["", "", "def get_inputs():"]
    create_ids = []
    for op, ref in graph.create_statements:
        spec = catalog.lookup(op)
        dims = ", ".join(str(d) for d in shapes[ref.edge_id])
        lines.append(f"    {_name(ref.edge_id)} = {spec.qualified_name}([{dims}])")
        create_ids.append(ref.edge_id)
    create_ids.sort()
    lines.append(f"    return [{', '.join(_name(e) for e in create_ids)}]")
    params = ", ".join(_name(e) for e in create_ids)
    lines += ["", "", f"def fused_operator({params}):"]
    for node in graph.nodes:
        spec = catalog.lookup(node.op)
        attrs = dict(solution.node_attrs.get(node.node_id, {}))
        if spec.constraint_kind is ConstraintKind.NORM_LAYER:
            in_shape = shapes[node.inputs[0].edge_id]
            attrs["_normalized_shape"] = list(in_shape[len(in_shape) - attrs["norm_dims"]:])
        args = [_name(r.edge_id) for r in node.inputs]
        call = _render_call(spec, args, attrs, spec.spatial_dims)
        lines.append(f"    {_name(node.output.edge_id)} = {call}")
    lines.append(f"    return [{', '.join(_name(r.edge_id) for r in graph.outputs)}]")
    source = "\n".join(lines) + "\n"

    manifest = {
        "program_id": program_id,
        "level": graph.level if level is None else level,
        "seed": seed,
        "mode": mode,
        "ops": [n.op for n in graph.nodes],
        "create_statements": [
            {"op": op, "edge": ref.edge_id, "integer_typed": ref.integer_typed}
            for op, ref in graph.create_statements
        ],
        "nodes": [
            {
                "node_id": n.node_id,
                "op": n.op,
                "inputs": [r.edge_id for r in n.inputs],
                "output": n.output.edge_id,
                "integer_typed": n.output.integer_typed,
                "attrs": dict(solution.node_attrs.get(n.node_id, {})),
            }
            for n in graph.nodes
        ],
        "outputs": [r.edge_id for r in graph.outputs],
        "edge_shapes": {str(e): list(s) for e, s in sorted(shapes.items())},
        "integer_edges": sorted(r.edge_id for r in graph.all_edges() if r.integer_typed),
        "total_flops": solution.total_flops,
        "total_numel": solution.total_numel,
        "structural_hash": structural_hash(graph, solution),
    }
    return EmittedProgram(source=source, manifest=manifest)


def manifest_to_text(manifest: dict) -> str:
    return json.dumps(manifest, indent=2, sort_keys=True) + "\n"


def parse_manifest(text: str) -> dict:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedManifest(f"invalid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise MalformedManifest("manifest must be a JSON object")
    missing = [k for k in MANIFEST_REQUIRED if k not in doc]
    if missing:
        raise MalformedManifest(f"missing fields: {', '.join(missing)}")
    return doc


def solution_from_manifest(doc: dict) -> ShapeSolution:
    return ShapeSolution(
        edge_shapes={int(e): tuple(s) for e, s in doc["edge_shapes"].items()},
        node_attrs={n["node_id"]: dict(n["attrs"]) for n in doc["nodes"]},
        total_flops=int(doc["total_flops"]),
        total_numel=int(doc.get("total_numel", 0)),
    )


def graph_from_manifest(doc: dict) -> ProgramGraph:
    from .graph import graph_from_dict

    return graph_from_dict({
        "create_statements": doc["create_statements"],
        "nodes": doc["nodes"],
        "outputs": doc["outputs"],
    })


def validate_source(source: str) -> list[str]:
    """Check the emitted grammar: two functions, assignment-of-call statements,
    and def-before-use on every referenced name."""
    problems = []
    try:
        tree = ast.parse(source)
    except SyntaxError as exc:
        return [f"syntax error: {exc}"]
    funcs = {n.name: n for n in tree.body if isinstance(n, ast.FunctionDef)}
    if set(funcs) != {"get_inputs", "fused_operator"}:
        problems.append(f"expected get_inputs and fused_operator, found {sorted(funcs)}")
        return problems
    fused = funcs["fused_operator"]
    bound = {a.arg for a in fused.args.args}
    for stmt in fused.body[:-1]:
        if not (isinstance(stmt, ast.Assign) and len(stmt.targets) == 1
                and isinstance(stmt.targets[0], ast.Name)):
            problems.append(f"line {stmt.lineno}: not a single-name assignment")
            continue
        value = stmt.value
        if isinstance(value, ast.Attribute):
            value = value.value
        if not isinstance(value, ast.Call):
            problems.append(f"line {stmt.lineno}: right-hand side is not a call")
            continue
        for name_node in ast.walk(stmt.value):
            if isinstance(name_node, ast.Name) and name_node.id.startswith("tensor_"):
                if name_node.id not in bound:
                    problems.append(f"line {stmt.lineno}: {name_node.id} used before definition")
        bound.add(stmt.targets[0].id)
    ret = fused.body[-1]
    if not isinstance(ret, ast.Return):
        problems.append("fused_operator does not end with a return")
    else:
        for name_node in ast.walk(ret):
            if isinstance(name_node, ast.Name) and name_node.id not in bound:
                problems.append(f"return references unbound {name_node.id}")
    return problems
