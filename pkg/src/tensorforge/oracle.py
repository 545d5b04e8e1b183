"""Forward shape inference implementing framework semantics directly.

This is the independent verification surface for the constraint solver: it
shares no constraint-encoding code with it, and instead propagates concrete
shapes node by node the way the target framework would.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .catalog import Catalog, ConstraintKind
from .graph import ProgramGraph

Shape = tuple[int, ...]


@dataclass(frozen=True)
class ShapeError:
    node_id: Optional[int]
    reason: str


@dataclass(frozen=True)
class ShapeReport:
    edge_shapes: dict[int, Shape]
    error: Optional[ShapeError] = None

    @property
    def ok(self) -> bool:
        return self.error is None


class _Fail(Exception):
    pass


def broadcast_shapes(shapes: list[Shape]) -> Shape:
    """Right-aligned broadcast of any number of shapes.

    Dimensions are compatible when equal or when one of them is 1; missing
    leading dimensions act as size 1.
    """
    n = max((len(s) for s in shapes), default=0)
    out = []
    for i in range(n):
        size = 1
        for s in shapes:
            j = i - (n - len(s))
            d = s[j] if j >= 0 else 1
            if d == 1 or d == size:
                continue
            if size == 1:
                size = d
            else:
                raise _Fail(f"cannot broadcast sizes {size} and {d} at aligned position {i}")
        out.append(size)
    return tuple(out)


def _check_axis(dim: int, n: int, what: str) -> None:
    if not (0 <= dim < n):
        raise _Fail(f"{what} axis {dim} out of range for order {n}")


def _reduce(a: Shape, dim: int, keepdim: bool) -> Shape:
    _check_axis(dim, len(a), "reduce")
    if keepdim:
        return a[:dim] + (1,) + a[dim + 1:]
    return a[:dim] + a[dim + 1:]


def _matmul(a: Shape, b: Shape) -> Shape:
    if len(a) < 2 or len(b) < 2:
        raise _Fail("matmul requires both inputs of order >= 2")
    if a[-1] != b[-2]:
        raise _Fail(f"matmul contraction mismatch: {a[-1]} vs {b[-2]}")
    batch = broadcast_shapes([a[:-2], b[:-2]])
    return batch + (a[-2], b[-1])


def _bmm(a: Shape, b: Shape) -> Shape:
    if len(a) != 3 or len(b) != 3:
        raise _Fail("bmm requires order-3 inputs")
    if a[0] != b[0]:
        raise _Fail(f"bmm batch mismatch: {a[0]} vs {b[0]}")
    if a[2] != b[1]:
        raise _Fail(f"bmm contraction mismatch: {a[2]} vs {b[1]}")
    return (a[0], a[1], b[2])


def _conv(a: Shape, w: Shape, attrs: dict, m: int) -> Shape:
    if len(a) != m + 2 or len(w) != m + 2:
        raise _Fail(f"conv{m}d needs order-{m + 2} input and weight")
    s, p, d, g = (int(attrs["stride"]), int(attrs["padding"]),
                  int(attrs["dilation"]), int(attrs["groups"]))
    c_in, c_out = a[1], w[0]
    if c_in % g != 0 or c_out % g != 0:
        raise _Fail(f"channels ({c_in} in, {c_out} out) not divisible by groups {g}")
    if w[1] != c_in // g:
        raise _Fail(f"weight expects {w[1] * g} input channels, got {c_in}")
    spatial = []
    for j in range(m):
        k = w[2 + j]
        if int(attrs[f"k{j + 1}"]) != k:
            raise _Fail(f"kernel attr k{j + 1}={attrs[f'k{j + 1}']} disagrees with weight dim {k}")
        if a[2 + j] + 2 * p < d * (k - 1) + 1:
            raise _Fail(f"padded input {a[2 + j] + 2 * p} smaller than effective kernel")
        spatial.append((a[2 + j] + 2 * p - d * (k - 1) - 1) // s + 1)
    return (a[0], c_out) + tuple(spatial)


def _conv_transpose(a: Shape, w: Shape, attrs: dict, m: int) -> Shape:
    if len(a) != m + 2 or len(w) != m + 2:
        raise _Fail(f"conv_transpose{m}d needs order-{m + 2} input and weight")
    s, p, d, g = (int(attrs["stride"]), int(attrs["padding"]),
                  int(attrs["dilation"]), int(attrs["groups"]))
    c_in = a[1]
    if w[0] != c_in:
        raise _Fail(f"weight expects {w[0]} input channels, got {c_in}")
    if c_in % g != 0:
        raise _Fail(f"input channels {c_in} not divisible by groups {g}")
    c_out = w[1] * g
    spatial = []
    for j in range(m):
        k = w[2 + j]
        if int(attrs[f"k{j + 1}"]) != k:
            raise _Fail(f"kernel attr k{j + 1} disagrees with weight dim {k}")
        size = (a[2 + j] - 1) * s - 2 * p + d * (k - 1) + 1
        if size < 1:
            raise _Fail(f"transposed conv output size {size} < 1")
        spatial.append(size)
    return (a[0], c_out) + tuple(spatial)


def _pool(a: Shape, attrs: dict, m: int) -> Shape:
    if len(a) != m + 2:
        raise _Fail(f"pool{m}d needs order-{m + 2} input")
    s, p = int(attrs["stride"]), int(attrs["padding"])
    spatial = []
    for j in range(m):
        k = int(attrs[f"k{j + 1}"])
        if 2 * p > k:
            raise _Fail(f"padding {p} exceeds half of kernel size {k}")
        if a[2 + j] + 2 * p < k:
            raise _Fail(f"padded input {a[2 + j] + 2 * p} smaller than kernel {k}")
        spatial.append((a[2 + j] + 2 * p - k) // s + 1)
    return a[:2] + tuple(spatial)


def _numel(shape: Shape) -> int:
    n = 1
    for d in shape:
        n *= d
    return n


def _infer_node(kind: ConstraintKind, ins: list[Shape], attrs: dict, m: int,
                input_count: int) -> Shape:
    a = ins[0]
    if kind is ConstraintKind.BROADCAST:
        return broadcast_shapes(ins)
    if kind is ConstraintKind.REDUCE:
        return _reduce(a, int(attrs["dim"]), bool(attrs["keepdim"]))
    if kind is ConstraintKind.DIM_PRESERVING:
        _check_axis(int(attrs["dim"]), len(a), "softmax/cumulative")
        return a
    if kind is ConstraintKind.MATMUL:
        return _matmul(a, ins[1])
    if kind is ConstraintKind.BMM:
        return _bmm(a, ins[1])
    if kind is ConstraintKind.TRANSPOSE:
        d0, d1 = int(attrs["dim0"]), int(attrs["dim1"])
        _check_axis(d0, len(a), "transpose")
        _check_axis(d1, len(a), "transpose")
        out = list(a)
        out[d0], out[d1] = out[d1], out[d0]
        return tuple(out)
    if kind is ConstraintKind.LAST_TWO_PRESERVING:
        if len(a) < 2:
            raise _Fail("triu/tril requires order >= 2")
        return a
    if kind is ConstraintKind.CONV:
        return _conv(a, ins[1], attrs, m)
    if kind is ConstraintKind.CONV_TRANSPOSE:
        return _conv_transpose(a, ins[1], attrs, m)
    if kind is ConstraintKind.POOL:
        return _pool(a, attrs, m)
    if kind is ConstraintKind.NORM_BATCH:
        if len(a) < 2:
            raise _Fail("batch norm requires order >= 2")
        if _numel(a) // a[1] <= 1:
            raise _Fail("batch norm needs more than one value per channel")
        return a
    if kind is ConstraintKind.NORM_LAYER:
        nd = int(attrs["norm_dims"])
        if not (1 <= nd <= len(a)):
            raise _Fail(f"layer norm over {nd} dims on order {len(a)}")
        return a
    if kind is ConstraintKind.NORM_GROUP:
        if len(a) < 2:
            raise _Fail("group norm requires order >= 2")
        if a[1] % int(attrs["groups"]) != 0:
            raise _Fail(f"channels {a[1]} not divisible by {attrs['groups']} groups")
        return a
    if kind is ConstraintKind.NORM_INSTANCE:
        if len(a) < 3:
            raise _Fail("instance norm requires order >= 3")
        if _numel(a[2:]) <= 1:
            raise _Fail("instance norm needs more than one spatial element")
        return a
    if kind is ConstraintKind.ELEMENTWISE_UNARY:
        return a
    if kind is ConstraintKind.CAT:
        dim = int(attrs["dim"])
        n = len(a)
        if n < 1:
            raise _Fail("cat requires order >= 1 inputs")
        _check_axis(dim, n, "cat")
        total = 0
        for s in ins:
            if len(s) != n:
                raise _Fail("cat inputs must share one order")
            for i in range(n):
                if i != dim and s[i] != a[i]:
                    raise _Fail(f"cat inputs differ at non-concat position {i}")
            total += s[dim]
        return a[:dim] + (total,) + a[dim + 1:]
    if kind is ConstraintKind.STACK:
        for s in ins:
            if s != a:
                raise _Fail("stack inputs must have identical shapes")
        if len(a) + 1 > 8:
            raise _Fail("stack output exceeds the maximum tensor order")
        return (input_count,) + a
    raise _Fail(f"no forward semantics for constraint kind {kind}")


def infer(graph: ProgramGraph, catalog: Catalog, input_shapes: dict[int, Shape],
          node_attrs: dict[int, dict]) -> ShapeReport:
    """Propagate shapes in emission order; the first failure stops inference.

    input_shapes maps every create edge to its shape; node_attrs maps node ids
    to fully resolved attribute dictionaries. Never raises: malformed graphs
    come back as a ShapeError inside the report.
    """
    shapes: dict[int, Shape] = {}
    try:
        for op, ref in graph.create_statements:
            if ref.edge_id not in input_shapes:
                return ShapeReport(shapes, ShapeError(None, f"create edge {ref.edge_id} has no shape"))
            shapes[ref.edge_id] = tuple(int(d) for d in input_shapes[ref.edge_id])
        for node in graph.nodes:
            try:
                spec = catalog.lookup(node.op)
                attrs = node_attrs.get(node.node_id, node.attrs) or {}
                ins = []
                for r in node.inputs:
                    if r.edge_id not in shapes:
                        raise _Fail(f"input edge {r.edge_id} has no shape yet")
                    ins.append(shapes[r.edge_id])
                if spec.constraint_kind is None:
                    raise _Fail(f"{node.op} is not a compute operator")
                if not spec.is_variadic and len(ins) != spec.arity:
                    raise _Fail(f"{node.op} expects {spec.arity} inputs, got {len(ins)}")
                if spec.is_variadic and len(ins) < 2:
                    raise _Fail(f"{node.op} expects at least 2 inputs")
                out = _infer_node(spec.constraint_kind, ins, attrs, spec.spatial_dims, len(ins))
            except _Fail as exc:
                return ShapeReport(shapes, ShapeError(node.node_id, str(exc)))
            except Exception as exc:  # malformed attrs, bad lookups, ...
                return ShapeReport(shapes, ShapeError(node.node_id, f"{type(exc).__name__}: {exc}"))
            shapes[node.output.edge_id] = out
        return ShapeReport(shapes)
    except Exception as exc:
        return ShapeReport(shapes, ShapeError(None, f"{type(exc).__name__}: {exc}"))


def verify_program(graph: ProgramGraph, catalog: Catalog, solution) -> list[str]:
    """Re-infer every edge shape from the solution's inputs and compare.

    Returns a list of human-readable mismatches; empty means the solution's
    shapes are exactly what forward semantics produce.
    """
    create_ids = {ref.edge_id for _, ref in graph.create_statements}
    input_shapes = {e: solution.edge_shapes[e] for e in create_ids}
    report = infer(graph, catalog, input_shapes, solution.node_attrs)
    if not report.ok:
        return [f"node {report.error.node_id}: {report.error.reason}"]
    mismatches = []
    for edge_id, shape in sorted(solution.edge_shapes.items()):
        got = report.edge_shapes.get(edge_id)
        if got != tuple(shape):
            mismatches.append(f"edge {edge_id}: solution {tuple(shape)} vs inferred {got}")
    return mismatches


def report_to_dict(report: ShapeReport) -> dict:
    doc: dict = {
        "status": "ok" if report.ok else "shape_error",
        "edges": {str(k): list(v) for k, v in sorted(report.edge_shapes.items())},
    }
    if report.error is not None:
        doc["error"] = {"node_id": report.error.node_id, "reason": report.error.reason}
    return doc
