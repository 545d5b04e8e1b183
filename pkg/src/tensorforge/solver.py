"""Shape-constraint solving over operator graphs.

Encodes the per-operator constraint families (broadcasting, reduction
splicing, matmul contraction, conv/pool arithmetic, normalization,
concatenation) together with global FLOP and element budgets, then finds a
random feasible integer assignment of tensor orders and dimension sizes.

The engine is a two-phase randomized search: phase 1 fixes tensor orders and
operator attributes by domain propagation over structural constraints; phase
2 assigns dimension sizes through an equality-class system with derived
(functional) dimensions, budget-aware log-uniform value sampling, and
restart-style backtracking. Results are deterministic for a given seed.
"""

from __future__ import annotations

import itertools
import math
import random
import time
from dataclasses import dataclass
from enum import Enum
from typing import Optional

from .catalog import (
    AT_LEAST_2,
    Catalog,
    ConstraintKind,
    CLAMP_MAX_GRID,
    CLAMP_MIN_GRID,
    DILATION_RANGE,
    GROUPS_CHOICES,
    KERNEL_RANGE,
    PADDING_RANGE,
    STRIDE_RANGE,
    flops_of,
)
from .graph import ProgramGraph

ORDER_MAX = 8
DIM_MAX = 2 ** 15
CREATE_ORDER_MAX = 5  # sampling policy for unpinned create tensors


class SolverError(Exception):
    pass


class UnknownConstraintKind(SolverError):
    pass


class Infeasible(SolverError):
    """No assignment exists under the structural constraints and pins."""


class SolveTimeout(SolverError):
    """Search budget exhausted; retry with a new seed."""


class IncompleteSolution(SolverError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    min_flops: int = 10 ** 6
    max_flops: int = 10 ** 10
    max_size: int = 2 ** 26
    min_size_tensor: int = 16
    time_budget: float = 10.0
    max_attempts: int = 64
    value_rounds: int = 24

    def __post_init__(self):
        if self.min_flops > self.max_flops:
            raise SolverError("min_flops exceeds max_flops")
        if self.min_size_tensor < 1:
            raise SolverError("min_size_tensor must be >= 1")


@dataclass(frozen=True)
class NodeBlock:
    node_id: int
    op: str
    kind: ConstraintKind
    inputs: tuple[int, ...]   # edge ids
    output: int               # edge id
    spatial_dims: int
    input_count: int


@dataclass(frozen=True)
class ConstraintSet:
    blocks: tuple[NodeBlock, ...]
    create_edges: tuple[int, ...]
    edge_ids: tuple[int, ...]
    pins: dict[int, tuple[int, ...]]
    all_zero_flops: bool
    graph: ProgramGraph
    catalog: Catalog


@dataclass(frozen=True)
class ShapeSolution:
    edge_shapes: dict[int, tuple[int, ...]]
    node_attrs: dict[int, dict]
    total_flops: int
    total_numel: int


@dataclass(frozen=True)
class Violation:
    node_id: Optional[int]
    constraint: str
    detail: str

    def to_dict(self) -> dict:
        return {"node_id": self.node_id, "constraint": self.constraint, "detail": self.detail}


def emit_constraints(graph: ProgramGraph, catalog: Catalog,
                     pins: Optional[dict[int, tuple[int, ...]]] = None) -> ConstraintSet:
    """Turn a graph into one constraint block per node plus the global budgets."""
    blocks = []
    all_zero = True
    for node in graph.nodes:
        spec = catalog.lookup(node.op)
        if spec.constraint_kind is None:
            raise UnknownConstraintKind(f"{node.op} has no constraint kind")
        if spec.arity != AT_LEAST_2 and len(node.inputs) != spec.arity:
            raise UnknownConstraintKind(
                f"node {node.node_id}: {node.op} expects {spec.arity} inputs, got {len(node.inputs)}")
        if spec.arity == AT_LEAST_2 and len(node.inputs) < 2:
            raise UnknownConstraintKind(f"node {node.node_id}: {node.op} expects >= 2 inputs")
        if spec.flop_model != "zero":
            all_zero = False
        blocks.append(NodeBlock(
            node_id=node.node_id, op=node.op, kind=spec.constraint_kind,
            inputs=tuple(r.edge_id for r in node.inputs), output=node.output.edge_id,
            spatial_dims=spec.spatial_dims, input_count=len(node.inputs)))
    edge_ids = tuple(r.edge_id for r in graph.all_edges())
    return ConstraintSet(
        blocks=tuple(blocks),
        create_edges=tuple(r.edge_id for _, r in graph.create_statements),
        edge_ids=edge_ids,
        pins=dict(pins or {}),
        all_zero_flops=all_zero,
        graph=graph,
        catalog=catalog,
    )


# ---------------------------------------------------------------------------
# phase 1: order domains and attribute resolution
# ---------------------------------------------------------------------------

class _Dead(Exception):
    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


def _prod_filter(doms: list[set[int]], out_dom: set[int], rel) -> list[set[int]]:
    """Support filtering of a small n-ary relation rel(in_orders) -> out_order."""
    keep_in: list[set[int]] = [set() for _ in doms]
    keep_out: set[int] = set()
    for combo in itertools.product(*doms):
        out = rel(combo)
        if out is None or out not in out_dom:
            continue
        for i, v in enumerate(combo):
            keep_in[i].add(v)
        keep_out.add(out)
    return keep_in + [keep_out]


class _OrderSolver:
    def __init__(self, cs: ConstraintSet):
        self.cs = cs
        self.dom: dict[int, set[int]] = {}
        producers = {b.output for b in cs.blocks}
        for e in cs.edge_ids:
            if e in cs.pins:
                self.dom[e] = {len(cs.pins[e])}
            elif e in producers:
                self.dom[e] = set(range(0, ORDER_MAX + 1))
            else:
                self.dom[e] = set(range(1, CREATE_ORDER_MAX + 1))

    def _restrict(self, edge: int, allowed: set[int]) -> bool:
        new = self.dom[edge] & allowed
        if not new:
            raise _Dead(f"order domain wiped for edge {edge}")
        changed = new != self.dom[edge]
        self.dom[edge] = new
        return changed

    def _prop_block(self, b: NodeBlock, keepdim: Optional[bool]) -> bool:
        K = ConstraintKind
        d = self.dom
        changed = False
        if b.kind is K.BROADCAST:
            doms = [d[e] for e in b.inputs]
            res = _prod_filter(doms, d[b.output], lambda c: max(c))
            for e, s in zip(b.inputs, res[:-1]):
                changed |= self._restrict(e, s)
            changed |= self._restrict(b.output, res[-1])
        elif b.kind is K.MATMUL:
            doms = [{v for v in d[e] if v >= 2} for e in b.inputs]
            if not all(doms):
                raise _Dead("matmul input order below 2")
            res = _prod_filter(doms, d[b.output], lambda c: max(c))
            for e, s in zip(b.inputs, res[:-1]):
                changed |= self._restrict(e, s)
            changed |= self._restrict(b.output, res[-1])
        elif b.kind is K.BMM:
            for e in (*b.inputs, b.output):
                changed |= self._restrict(e, {3})
        elif b.kind is K.REDUCE:
            a, c = b.inputs[0], b.output
            if keepdim is None:
                rel = lambda combo: None if combo[0] < 1 else combo[0]
                pairs = {(n, n) for n in d[a] if n >= 1} | {(n, n - 1) for n in d[a] if n >= 1}
            else:
                delta = 0 if keepdim else 1
                pairs = {(n, n - delta) for n in d[a] if n >= 1}
            pairs = {(x, y) for x, y in pairs if y in d[c]}
            if not pairs:
                raise _Dead("reduce order relation unsatisfiable")
            changed |= self._restrict(a, {x for x, _ in pairs})
            changed |= self._restrict(c, {y for _, y in pairs})
        elif b.kind is K.DIM_PRESERVING:
            shared = {v for v in d[b.inputs[0]] & d[b.output] if v >= 1}
            changed |= self._restrict(b.inputs[0], shared)
            changed |= self._restrict(b.output, shared)
        elif b.kind in (K.TRANSPOSE, K.LAST_TWO_PRESERVING):
            shared = {v for v in d[b.inputs[0]] & d[b.output] if v >= 2}
            changed |= self._restrict(b.inputs[0], shared)
            changed |= self._restrict(b.output, shared)
        elif b.kind in (K.CONV, K.CONV_TRANSPOSE):
            n = b.spatial_dims + 2
            for e in (*b.inputs, b.output):
                changed |= self._restrict(e, {n})
        elif b.kind is K.POOL:
            n = b.spatial_dims + 2
            changed |= self._restrict(b.inputs[0], {n})
            changed |= self._restrict(b.output, {n})
        elif b.kind in (K.NORM_BATCH, K.NORM_GROUP):
            shared = {v for v in d[b.inputs[0]] & d[b.output] if v >= 2}
            changed |= self._restrict(b.inputs[0], shared)
            changed |= self._restrict(b.output, shared)
        elif b.kind is K.NORM_INSTANCE:
            shared = {v for v in d[b.inputs[0]] & d[b.output] if v >= 3}
            changed |= self._restrict(b.inputs[0], shared)
            changed |= self._restrict(b.output, shared)
        elif b.kind is K.NORM_LAYER:
            shared = {v for v in d[b.inputs[0]] & d[b.output] if v >= 1}
            changed |= self._restrict(b.inputs[0], shared)
            changed |= self._restrict(b.output, shared)
        elif b.kind is K.ELEMENTWISE_UNARY:
            shared = d[b.inputs[0]] & d[b.output]
            changed |= self._restrict(b.inputs[0], shared)
            changed |= self._restrict(b.output, shared)
        elif b.kind is K.CAT:
            shared = set.intersection(*(d[e] for e in b.inputs), d[b.output])
            shared = {v for v in shared if v >= 1}
            for e in (*b.inputs, b.output):
                changed |= self._restrict(e, shared)
        elif b.kind is K.STACK:
            shared = set.intersection(*(d[e] for e in b.inputs))
            shared = {v for v in shared if v + 1 in self.dom[b.output] and v + 1 <= ORDER_MAX}
            if not shared:
                raise _Dead("stack order relation unsatisfiable")
            for e in b.inputs:
                changed |= self._restrict(e, shared)
            changed |= self._restrict(b.output, {v + 1 for v in shared})
        else:
            raise UnknownConstraintKind(str(b.kind))
        return changed

    def propagate(self, keepdims: dict[int, bool]) -> None:
        for _ in range(len(self.cs.blocks) + ORDER_MAX + 2):
            changed = False
            for b in self.cs.blocks:
                changed |= self._prop_block(b, keepdims.get(b.node_id))
            if not changed:
                return
        return


def _sample_attrs(block: NodeBlock, in_order: int, rng, choices: list[int]) -> dict:
    """Draw the attribute assignment for one node given its input order."""
    K = ConstraintKind
    attrs: dict = {}
    if block.kind is K.REDUCE:
        attrs["dim"] = rng.randrange(in_order)
        choices.append(in_order)
    elif block.kind is K.DIM_PRESERVING or block.kind is K.CAT:
        attrs["dim"] = rng.randrange(in_order)
        choices.append(in_order)
    elif block.kind is K.TRANSPOSE:
        attrs["dim0"], attrs["dim1"] = in_order - 2, in_order - 1
    elif block.kind in (K.CONV, K.CONV_TRANSPOSE, K.POOL):
        m = block.spatial_dims
        ks = [rng.randint(*KERNEL_RANGE) for _ in range(m)]
        for j, k in enumerate(ks):
            attrs[f"k{j + 1}"] = k
        attrs["stride"] = rng.randint(*STRIDE_RANGE)
        if block.kind is K.CONV:
            p_hi = min(PADDING_RANGE[1], max(ks) // 2)
        elif block.kind is K.POOL:
            p_hi = min(PADDING_RANGE[1], min(ks) // 2)
        else:
            p_hi = PADDING_RANGE[1]
        attrs["padding"] = rng.randint(PADDING_RANGE[0], p_hi)
        if block.kind is not K.POOL:
            attrs["dilation"] = rng.randint(*DILATION_RANGE)
            attrs["groups"] = rng.choice(GROUPS_CHOICES)
        choices.append(2)
    elif block.kind is K.NORM_LAYER:
        attrs["norm_dims"] = rng.randint(1, min(3, in_order))
        choices.append(in_order)
    elif block.kind is K.NORM_GROUP:
        attrs["groups"] = rng.choice(GROUPS_CHOICES)
        choices.append(len(GROUPS_CHOICES))
    return attrs


# ---------------------------------------------------------------------------
# phase 2: dimension cells, derived dims, and value sampling
# ---------------------------------------------------------------------------

class _DefKind(Enum):
    CONV = "conv"
    CONVT = "convt"
    POOL = "pool"
    DIV = "div"
    MUL = "mul"
    SUM = "sum"


@dataclass
class _Def:
    kind: _DefKind
    srcs: list["_Cell"]
    params: tuple

    def eval(self, values: dict[int, int]) -> int:
        vals = [values[c.find().cid] for c in self.srcs]
        return self._apply(vals)

    def _apply(self, vals: list[int]) -> int:
        if self.kind is _DefKind.CONV:
            k, s, p, d = self.params
            return (vals[0] + 2 * p - d * (k - 1) - 1) // s + 1
        if self.kind is _DefKind.CONVT:
            k, s, p, d = self.params
            return (vals[0] - 1) * s - 2 * p + d * (k - 1) + 1
        if self.kind is _DefKind.POOL:
            k, s, p = self.params
            return (vals[0] + 2 * p - k) // s + 1
        if self.kind is _DefKind.DIV:
            return vals[0] // self.params[0]
        if self.kind is _DefKind.MUL:
            return vals[0] * self.params[0]
        return sum(vals)

    def lo_estimate(self) -> int:
        return max(1, self._apply([c.find().lo for c in self.srcs]))


class _Cell:
    __slots__ = ("cid", "parent", "lo", "hi", "mod", "fixed", "definition")

    def __init__(self, cid: int, lo: int = 1, hi: int = DIM_MAX,
                 fixed: Optional[int] = None):
        self.cid = cid
        self.parent: Optional[_Cell] = None
        self.lo = lo
        self.hi = hi
        self.mod = 1
        self.fixed = fixed
        self.definition: Optional[_Def] = None
        if fixed is not None:
            self.lo = self.hi = fixed

    def find(self) -> "_Cell":
        root = self
        while root.parent is not None:
            root = root.parent
        node = self
        while node.parent is not None:
            node.parent, node = root, node.parent
        return root


def _lcm(a: int, b: int) -> int:
    return a * b // math.gcd(a, b)


class _DimBuilder:
    """Builds the equality-class system for one fixed order/attr assignment."""

    def __init__(self, rng, choices: list[int]):
        self.rng = rng
        self.choices = choices
        self.cells: list[_Cell] = []
        self.leaf_eq: list[tuple[_Cell, _Cell]] = []
        self.product_min2: list[list[_Cell]] = []  # each slot list: product must be >= 2

    def new_cell(self, lo: int = 1, hi: int = DIM_MAX, fixed: Optional[int] = None) -> _Cell:
        c = _Cell(len(self.cells), lo, hi, fixed)
        self.cells.append(c)
        return c

    def const(self, v: int) -> _Cell:
        return self.new_cell(fixed=v)

    # -- feasibility predicates ------------------------------------------

    @staticmethod
    def _merged(x: _Cell, y: _Cell):
        lo, hi = max(x.lo, y.lo), min(x.hi, y.hi)
        mod = _lcm(x.mod, y.mod)
        fixed = x.fixed if x.fixed is not None else y.fixed
        if x.fixed is not None and y.fixed is not None and x.fixed != y.fixed:
            return None
        if fixed is not None and (fixed < lo or fixed > hi or fixed % mod != 0):
            return None
        if lo > hi:
            return None
        if mod * (lo // mod if lo % mod == 0 else lo // mod + 1) > hi:
            return None
        defs = [d for d in (x.definition, y.definition) if d is not None]
        return lo, hi, mod, fixed, defs

    def can_union(self, x: _Cell, y: _Cell) -> bool:
        x, y = x.find(), y.find()
        return x is y or self._merged(x, y) is not None

    def union(self, x: _Cell, y: _Cell) -> _Cell:
        x, y = x.find(), y.find()
        if x is y:
            return x
        merged = self._merged(x, y)
        if merged is None:
            raise _Dead(f"cannot unify dimension classes {x.cid} and {y.cid}")
        lo, hi, mod, fixed, defs = merged
        rep, other = (x, y) if x.cid < y.cid else (y, x)
        other.parent = rep
        rep.lo, rep.hi, rep.mod, rep.fixed = lo, hi, mod, fixed
        rep.definition = None
        for i, d in enumerate(defs):
            if i == 0 and not self._def_creates_cycle(rep, d):
                rep.definition = d
            else:
                probe = self.new_cell()
                probe.definition = d
                self.leaf_eq.append((rep, probe))
        return rep

    def can_fix(self, x: _Cell, v: int) -> bool:
        x = x.find()
        if x.fixed is not None:
            return x.fixed == v
        if x.definition is not None:
            return False  # formula-defined dims cannot be pinned by a branch
        return x.lo <= v <= x.hi and v % x.mod == 0

    def fix(self, x: _Cell, v: int) -> None:
        x = x.find()
        if not self.can_fix(x, v):
            raise _Dead(f"cannot fix dimension class {x.cid} to {v}")
        x.fixed = v
        x.lo = x.hi = v

    def require_mod(self, x: _Cell, m: int) -> None:
        x = x.find()
        x.mod = _lcm(x.mod, m)
        if x.fixed is not None and x.fixed % x.mod != 0:
            raise _Dead(f"fixed value {x.fixed} violates divisibility by {x.mod}")

    def bound(self, x: _Cell, lo: int = 1, hi: int = DIM_MAX) -> None:
        x = x.find()
        x.lo, x.hi = max(x.lo, lo), min(x.hi, hi)
        if x.lo > x.hi:
            raise _Dead(f"empty dimension interval for class {x.cid}")
        if x.fixed is not None and not (x.lo <= x.fixed <= x.hi):
            raise _Dead(f"fixed value {x.fixed} outside [{x.lo}, {x.hi}]")

    def _def_creates_cycle(self, target: _Cell, d: _Def) -> bool:
        target = target.find()
        seen = set()
        stack = [s.find() for s in d.srcs]
        while stack:
            c = stack.pop()
            if c is target:
                return True
            if c.cid in seen:
                continue
            seen.add(c.cid)
            if c.definition is not None:
                stack.extend(s.find() for s in c.definition.srcs)
        return False

    def define(self, x: _Cell, d: _Def) -> None:
        x = x.find()
        if x.fixed is not None or x.definition is not None or self._def_creates_cycle(x, d):
            probe = self.new_cell()
            probe.definition = d
            self.leaf_eq.append((x, probe))
            return
        x.definition = d

    # -- broadcasting ------------------------------------------------------

    def broadcast_pair(self, a: _Cell, b: _Cell) -> _Cell:
        """Resolve one right-aligned broadcast position, returning the output cell."""
        if a.find() is b.find():
            return a.find()
        ra, rb = a.find(), b.find()
        if ra.fixed is not None and rb.fixed is not None:
            # Both sizes known: the branch is forced, no choice to record.
            if ra.fixed == rb.fixed:
                return self.union(ra, rb)
            if ra.fixed == 1:
                return rb
            if rb.fixed == 1:
                return ra
            raise _Dead(f"sizes {ra.fixed} and {rb.fixed} cannot broadcast")
        options = []
        if self.can_union(a, b):
            options.append(("eq", 8))
        if self.can_fix(a, 1):
            options.append(("a1", 1))
        if self.can_fix(b, 1):
            options.append(("b1", 1))
        if not options:
            raise _Dead("broadcast position admits no branch")
        if len(options) > 1:
            self.choices.append(len(options))
            names = [o[0] for o in options]
            weights = [o[1] for o in options]
            pick = self.rng.choices(names, weights=weights)[0]
        else:
            pick = options[0][0]
        if pick == "eq":
            return self.union(a, b)
        if pick == "a1":
            self.fix(a, 1)
            return b.find()
        self.fix(b, 1)
        return a.find()


def _aligned(slots: list[_Cell], n_out: int, i: int) -> Optional[_Cell]:
    j = i - (n_out - len(slots))
    return slots[j] if j >= 0 else None


def _wire_node(builder: _DimBuilder, block: NodeBlock, attrs: dict,
               slots: dict[int, list[_Cell]], orders: dict[int, int]) -> list[_Cell]:
    K = ConstraintKind
    ins = [slots[e] for e in block.inputs]
    n_out = orders[block.output]

    if block.kind is K.BROADCAST:
        out = []
        for i in range(n_out):
            present = [c for s in ins if (c := _aligned(s, n_out, i)) is not None]
            cur = present[0]
            for nxt in present[1:]:
                cur = builder.broadcast_pair(cur, nxt)
            out.append(cur)
        return out

    if block.kind is K.MATMUL:
        a, b = ins
        builder.union(a[-1], b[-2])
        batch = []
        for i in range(n_out - 2):
            pa = _aligned(a[:-2], n_out - 2, i)
            pb = _aligned(b[:-2], n_out - 2, i)
            if pa is not None and pb is not None:
                batch.append(builder.broadcast_pair(pa, pb))
            else:
                batch.append(pa if pa is not None else pb)
        return batch + [a[-2], b[-1]]

    if block.kind is K.BMM:
        a, b = ins
        builder.union(a[0], b[0])
        builder.union(a[2], b[1])
        return [a[0], a[1], b[2]]

    if block.kind is K.REDUCE:
        a = ins[0]
        dim = attrs["dim"]
        if attrs["keepdim"]:
            return a[:dim] + [builder.const(1)] + a[dim + 1:]
        return a[:dim] + a[dim + 1:]

    if block.kind is K.TRANSPOSE:
        a = list(ins[0])
        a[-1], a[-2] = a[-2], a[-1]
        return a

    if block.kind in (K.DIM_PRESERVING, K.LAST_TWO_PRESERVING, K.ELEMENTWISE_UNARY,
                      K.NORM_LAYER):
        return list(ins[0])

    if block.kind is K.NORM_BATCH:
        a = ins[0]
        builder.product_min2.append(a[:1] + a[2:])
        head = a[0].find()
        if head.fixed is None and head.lo <= 1:
            builder.bound(head, lo=min(2, head.hi))
        return list(a)

    if block.kind is K.NORM_INSTANCE:
        a = ins[0]
        builder.product_min2.append(a[2:])
        first_sp = a[2].find()
        if first_sp.fixed is None and first_sp.lo <= 1:
            builder.bound(first_sp, lo=min(2, first_sp.hi))
        return list(a)

    if block.kind is K.NORM_GROUP:
        a = ins[0]
        builder.require_mod(a[1], attrs["groups"])
        return list(a)

    if block.kind is K.CONV:
        a, w = ins
        m = block.spatial_dims
        g = attrs["groups"]
        s, p, d = attrs["stride"], attrs["padding"], attrs["dilation"]
        builder.require_mod(a[1], g)
        builder.require_mod(w[0], g)
        builder.bound(a[1], lo=g)
        builder.define(w[1], _Def(_DefKind.DIV, [a[1]], (g,)))
        out = [a[0], w[0]]
        for j in range(m):
            k = attrs[f"k{j + 1}"]
            builder.fix(w[2 + j], k)
            dd = d * (k - 1)
            builder.bound(a[2 + j], lo=max(k, dd + 1 - 2 * p),
                          hi=min(DIM_MAX, s * DIM_MAX + dd - 2 * p))
            cell = builder.new_cell()
            builder.define(cell, _Def(_DefKind.CONV, [a[2 + j]], (k, s, p, d)))
            out.append(cell)
        return out

    if block.kind is K.CONV_TRANSPOSE:
        a, w = ins
        m = block.spatial_dims
        g = attrs["groups"]
        s, p, d = attrs["stride"], attrs["padding"], attrs["dilation"]
        builder.union(w[0], a[1])
        builder.require_mod(a[1], g)
        builder.bound(a[1], lo=g)
        builder.bound(w[1], hi=DIM_MAX // g)
        c_out = builder.new_cell()
        builder.define(c_out, _Def(_DefKind.MUL, [w[1]], (g,)))
        out = [a[0], c_out]
        for j in range(m):
            k = attrs[f"k{j + 1}"]
            builder.fix(w[2 + j], k)
            dd = d * (k - 1)
            lo = max(1, -(-max(0, 2 * p - dd) // s) + 1)
            hi_num = DIM_MAX - 1 + 2 * p - dd
            if hi_num < 0:
                raise _Dead("transposed conv cannot reach a positive output size")
            builder.bound(a[2 + j], lo=lo, hi=min(DIM_MAX, hi_num // s + 1))
            cell = builder.new_cell()
            builder.define(cell, _Def(_DefKind.CONVT, [a[2 + j]], (k, s, p, d)))
            out.append(cell)
        return out

    if block.kind is K.POOL:
        a = ins[0]
        m = block.spatial_dims
        s, p = attrs["stride"], attrs["padding"]
        out = [a[0], a[1]]
        for j in range(m):
            k = attrs[f"k{j + 1}"]
            builder.bound(a[2 + j], lo=max(k, k - 2 * p),
                          hi=min(DIM_MAX, s * DIM_MAX + (k - 1) - 2 * p))
            cell = builder.new_cell()
            builder.define(cell, _Def(_DefKind.POOL, [a[2 + j]], (k, s, p)))
            out.append(cell)
        return out

    if block.kind is K.CAT:
        dim = attrs["dim"]
        n = len(ins[0])
        first = ins[0]
        for other in ins[1:]:
            for i in range(n):
                if i != dim:
                    builder.union(first[i], other[i])
        srcs = [s[dim] for s in ins]
        lo_sum = sum(c.find().lo for c in srcs)
        for c in srcs:
            builder.bound(c, hi=max(1, DIM_MAX - (lo_sum - c.find().lo)))
        cell = builder.new_cell()
        builder.define(cell, _Def(_DefKind.SUM, srcs, ()))
        out = [first[i].find() for i in range(n)]
        out[dim] = cell
        return out

    if block.kind is K.STACK:
        first = ins[0]
        for other in ins[1:]:
            for x, y in zip(first, other):
                builder.union(x, y)
        return [builder.const(block.input_count)] + [c.find() for c in first]

    raise UnknownConstraintKind(str(block.kind))


# ---------------------------------------------------------------------------
# the solve loop
# ---------------------------------------------------------------------------

def _numel(shape) -> int:
    n = 1
    for d in shape:
        n *= d
    return n


def _flops_upper_bound(cs: ConstraintSet, orders: dict[int, int], attrs: dict[int, dict],
                       cap: int) -> int:
    """Cheap optimistic bound used to discard hopeless order assignments."""
    total = 0
    for b in cs.blocks:
        spec = cs.catalog.lookup(b.op)
        numel_cap = lambda e: min(cap, DIM_MAX ** max(orders[e], 0)) if orders[e] else 1
        if spec.flop_model == "numel_out":
            total += numel_cap(b.output)
        elif spec.flop_model == "numel_in":
            total += numel_cap(b.inputs[0])
        elif spec.flop_model == "matmul":
            total += 2 * numel_cap(b.output) * DIM_MAX
        elif spec.flop_model in ("conv", "conv_transpose"):
            kprod = 1
            for j in range(b.spatial_dims):
                kprod *= attrs[b.node_id][f"k{j + 1}"]
            total += 2 * numel_cap(b.output) * DIM_MAX * kprod
        elif spec.flop_model == "pool":
            kprod = 1
            for j in range(b.spatial_dims):
                kprod *= attrs[b.node_id][f"k{j + 1}"]
            total += numel_cap(b.output) * kprod
    return total


class _Attempt:
    def __init__(self, cs: ConstraintSet, cfg: SolverConfig, rng):
        self.cs = cs
        self.cfg = cfg
        self.rng = rng
        self.choices: list[int] = []

    def run_phase1(self) -> tuple[dict[int, int], dict[int, dict]]:
        osolver = _OrderSolver(self.cs)
        keepdims: dict[int, bool] = {}
        attrs: dict[int, dict] = {}
        osolver.propagate(keepdims)
        for e in self.cs.edge_ids:
            dom = osolver.dom[e]
            if len(dom) > 1:
                pick = self.rng.choice(sorted(dom))
                self.choices.append(len(dom))
                osolver.dom[e] = {pick}
                osolver.propagate(keepdims)
        orders = {e: next(iter(osolver.dom[e])) for e in self.cs.edge_ids}
        for b in self.cs.blocks:
            n_in = orders[b.inputs[0]]
            a = _sample_attrs(b, n_in, self.rng, self.choices)
            if b.kind is ConstraintKind.REDUCE:
                allowed = [kd for kd in (True, False)
                           if (n_in if kd else n_in - 1) == orders[b.output]]
                if not allowed:
                    raise _Dead("no keepdim choice matches the resolved orders")
                if len(allowed) > 1:
                    self.choices.append(2)
                a["keepdim"] = self.rng.choice(allowed)
            if b.op == "Clamp":
                a["min"] = self.rng.choice(CLAMP_MIN_GRID)
                a["max"] = self.rng.choice(CLAMP_MAX_GRID)
            attrs[b.node_id] = a
        return orders, attrs

    def build_cells(self, orders, attrs) -> tuple[_DimBuilder, dict[int, list[_Cell]]]:
        builder = _DimBuilder(self.rng, self.choices)
        slots: dict[int, list[_Cell]] = {}
        min_size = self.cfg.min_size_tensor
        for e in self.cs.create_edges:
            if e in self.cs.pins:
                slots[e] = [builder.const(v) for v in self.cs.pins[e]]
            else:
                lo = min_size if orders[e] == 1 else 1
                slots[e] = [builder.new_cell(lo=lo) for _ in range(orders[e])]
        for b in self.cs.blocks:
            out_slots = _wire_node(builder, b, attrs[b.node_id], slots, orders)
            if b.output in self.cs.pins:
                pin = self.cs.pins[b.output]
                if len(pin) != len(out_slots):
                    raise _Dead("pinned output order disagrees with solved order")
                for cell, v in zip(out_slots, pin):
                    if cell.find().definition is not None:
                        probe = builder.const(v)
                        builder.leaf_eq.append((cell, probe))
                    else:
                        builder.fix(cell, v)
            slots[b.output] = out_slots
        return builder, slots

    def sample_values(self, builder: _DimBuilder, slots, orders, attrs,
                      bias: tuple[float, float]) -> Optional[ShapeSolution]:
        cfg, rng = self.cfg, self.rng
        edges = list(self.cs.edge_ids)
        cap = max(cfg.min_size_tensor, cfg.max_size // max(1, len(edges)))

        # Edge membership per class representative, with multiplicities.
        members: dict[int, dict[int, int]] = {}
        for e in edges:
            for cell in slots[e]:
                rep = cell.find()
                members.setdefault(rep.cid, {}).setdefault(e, 0)
                members[rep.cid][e] += 1

        reps: dict[int, _Cell] = {}
        for cell in builder.cells:
            rep = cell.find()
            reps.setdefault(rep.cid, rep)
        order_reps = [reps[cid] for cid in sorted(reps)]

        values: dict[int, int] = {}
        pending: dict[int, set[int]] = {e: set() for e in edges}
        for e in edges:
            for cell in slots[e]:
                pending[e].add(cell.find().cid)

        def resolved_product(e: int, skip_cid: int) -> tuple[int, int]:
            """(product of concrete dims, product of lower bounds of pending ones)."""
            known, lo_prod = 1, 1
            for cell in slots[e]:
                rep = cell.find()
                if rep.cid == skip_cid:
                    continue
                if rep.cid in values:
                    known *= values[rep.cid]
                elif rep.definition is not None:
                    lo_prod *= rep.definition.lo_estimate()
                else:
                    lo_prod *= rep.lo
            return known, lo_prod

        def sample_free(rep: _Cell) -> bool:
            lo, hi = rep.lo, rep.hi
            if rep.fixed is not None:
                values[rep.cid] = rep.fixed
                return True
            for e, mult in members.get(rep.cid, {}).items():
                known, lo_prod = resolved_product(e, rep.cid)
                budget = cap // max(1, known * lo_prod)
                if budget < 1:
                    return False
                hi = min(hi, int(budget ** (1.0 / mult)) if mult > 1 else budget)
                still_pending = pending[e] - set(values) - {rep.cid}
                if not still_pending and orders[e] >= 1:
                    need = -(-cfg.min_size_tensor // max(1, known))
                    if mult > 1:
                        need = math.ceil(need ** (1.0 / mult))
                    lo = max(lo, need)
            if lo > hi:
                return False
            b_lo, b_hi = bias
            log_lo, log_hi = math.log(lo), math.log(hi)
            u = rng.random() * (b_hi - b_lo) + b_lo
            v = int(round(math.exp(log_lo + u * (log_hi - log_lo))))
            if rep.mod > 1:
                v = max(lo, min(hi, (v // rep.mod) * rep.mod))
                if v < lo:
                    v += rep.mod
            v = max(lo, min(hi, v))
            if v % rep.mod != 0 or not (lo <= v <= hi):
                return False
            values[rep.cid] = v
            if lo < hi:
                self.choices.append(2)
            return True

        remaining = list(order_reps)
        guard = 0
        while remaining:
            guard += 1
            if guard > 4 * len(order_reps) + 8:
                return None
            nxt = []
            progressed = False
            for rep in remaining:
                if rep.cid in values:
                    progressed = True
                    continue
                if rep.definition is not None:
                    srcs_ready = all(s.find().cid in values for s in rep.definition.srcs)
                    if srcs_ready:
                        val = rep.definition.eval(values)
                        if rep.fixed is not None and val != rep.fixed:
                            return None
                        if not (rep.lo <= val <= rep.hi) or val % rep.mod != 0:
                            return None
                        values[rep.cid] = val
                        progressed = True
                    else:
                        nxt.append(rep)
                else:
                    if not sample_free(rep):
                        return None
                    progressed = True
            remaining = nxt
            if not progressed and remaining:
                return None

        # Assemble and verify exactly.
        shapes = {e: tuple(values[c.find().cid] for c in slots[e]) for e in edges}
        for e, shape in shapes.items():
            for v in shape:
                if not (1 <= v <= DIM_MAX):
                    return None
            if orders[e] >= 1 and _numel(shape) < cfg.min_size_tensor:
                return None
        for x, y in builder.leaf_eq:
            rx, ry = x.find(), y.find()
            vy = values.get(ry.cid)
            if vy is None and ry.definition is not None:
                vy = ry.definition.eval(values)
            if values.get(rx.cid) != vy:
                return None
        for group in builder.product_min2:
            if _numel([values[c.find().cid] for c in group]) <= 1:
                return None
        total_numel = sum(_numel(shapes[e]) for e in edges)
        if total_numel > cfg.max_size:
            return None
        total_flops = 0
        for b in self.cs.blocks:
            spec = self.cs.catalog.lookup(b.op)
            total_flops += flops_of(spec, [shapes[e] for e in b.inputs],
                                    shapes[b.output], attrs[b.node_id])
        min_flops = 0 if self.cs.all_zero_flops else self.cfg.min_flops
        if not (min_flops <= total_flops <= self.cfg.max_flops):
            self._flops_signal = -1 if total_flops < min_flops else 1
            return None
        return ShapeSolution(edge_shapes=shapes, node_attrs=attrs,
                             total_flops=total_flops, total_numel=total_numel)

    _flops_signal = 0


def solve(cs: ConstraintSet, cfg: SolverConfig, rng) -> ShapeSolution:
    """Find one random feasible assignment, or raise Infeasible / SolveTimeout."""
    if isinstance(rng, int):
        rng = random.Random(rng)
    deadline = time.monotonic() + cfg.time_budget
    if cfg.max_size < cfg.min_size_tensor * len(cs.edge_ids):
        raise Infeasible("element budget below the per-tensor floor times edge count")
    hard_failure: Optional[str] = None
    for attempt_no in range(cfg.max_attempts):
        if time.monotonic() > deadline:
            raise SolveTimeout("time budget exhausted")
        attempt = _Attempt(cs, cfg, rng)
        try:
            orders, attrs = attempt.run_phase1()
            cap = max(cfg.min_size_tensor, cfg.max_size // max(1, len(cs.edge_ids)))
            if not cs.all_zero_flops and not cs.pins:
                if _flops_upper_bound(cs, orders, attrs, cap) < cfg.min_flops:
                    raise _Dead("orders cannot reach the FLOP floor")
            builder, slots = attempt.build_cells(orders, attrs)
        except _Dead as exc:
            if not attempt.choices:
                raise Infeasible(exc.reason) from None
            hard_failure = exc.reason
            continue
        bias = (0.0, 1.0)
        for _ in range(cfg.value_rounds):
            if time.monotonic() > deadline:
                raise SolveTimeout("time budget exhausted")
            attempt._flops_signal = 0
            solution = attempt.sample_values(builder, slots, orders, attrs, bias)
            if solution is not None:
                return solution
            if attempt._flops_signal < 0:
                bias = ((bias[0] + bias[1]) / 2.0, bias[1])
            elif attempt._flops_signal > 0:
                bias = (bias[0], (bias[0] + bias[1]) / 2.0)
            if not attempt.choices:
                break
        if not attempt.choices:
            raise Infeasible(hard_failure or "constraints admit no assignment")
        hard_failure = hard_failure or "value search exhausted"
    raise SolveTimeout(f"no solution within {cfg.max_attempts} attempts ({hard_failure})")


# ---------------------------------------------------------------------------
# independent constraint re-validation
# ---------------------------------------------------------------------------

def _right(shape, n, i):
    """Right-aligned view: position i in 0..n-1, padding leading dims with 1."""
    j = i - (n - len(shape))
    return shape[j] if j >= 0 else 1


def check(solution: ShapeSolution, cs: ConstraintSet,
          cfg: Optional[SolverConfig] = None) -> list[Violation]:
    """Evaluate every per-node and global constraint on concrete integers."""
    cfg = cfg or SolverConfig()
    out: list[Violation] = []
    shapes = solution.edge_shapes
    for e in cs.edge_ids:
        if e not in shapes:
            raise IncompleteSolution(f"edge {e} missing from solution")
        for v in shapes[e]:
            if not (1 <= v <= DIM_MAX):
                out.append(Violation(None, "dim_domain", f"edge {e} has dimension {v}"))
        if len(shapes[e]) > ORDER_MAX:
            out.append(Violation(None, "order_domain", f"edge {e} has order {len(shapes[e])}"))
    for e, pin in cs.pins.items():
        if tuple(shapes[e]) != tuple(pin):
            out.append(Violation(None, "pin", f"edge {e} is {shapes[e]}, pinned {pin}"))

    K = ConstraintKind
    for b in cs.blocks:
        ins = [shapes[e] for e in b.inputs]
        c = shapes[b.output]
        attrs = solution.node_attrs.get(b.node_id, {})
        bad = lambda rule, msg: out.append(Violation(b.node_id, rule, msg))

        if b.kind is K.BROADCAST:
            n = max(len(s) for s in ins)
            if len(c) != n:
                bad("broadcast_order", f"output order {len(c)} != {n}")
                continue
            for i in range(n):
                vals = [_right(s, n, i) for s in ins]
                non1 = {v for v in vals if v != 1}
                if len(non1) > 1:
                    bad("broadcast_compat", f"position {i}: sizes {vals}")
                if c[i] != max(vals):
                    bad("broadcast_max", f"position {i}: output {c[i]} != max{tuple(vals)}")
        elif b.kind is K.REDUCE:
            a = ins[0]
            dim, keepdim = attrs.get("dim"), attrs.get("keepdim")
            if dim is None or not (0 <= dim < len(a)):
                bad("reduce_dim", f"dim {dim} invalid for order {len(a)}")
                continue
            want = a[:dim] + (1,) + a[dim + 1:] if keepdim else a[:dim] + a[dim + 1:]
            if c != want:
                bad("reduce_shape", f"output {c} != {want}")
        elif b.kind is K.DIM_PRESERVING:
            dim = attrs.get("dim")
            if dim is None or not (0 <= dim < max(1, len(ins[0]))) or len(ins[0]) < 1:
                bad("axis", f"dim {dim} invalid for order {len(ins[0])}")
            if c != ins[0]:
                bad("shape_preserving", f"output {c} != {ins[0]}")
        elif b.kind is K.MATMUL:
            a, bb = ins
            if len(a) < 2 or len(bb) < 2:
                bad("matmul_order", f"orders {len(a)}, {len(bb)} below 2")
                continue
            if a[-1] != bb[-2]:
                bad("matmul_contract", f"{a[-1]} != {bb[-2]}")
            n = max(len(a), len(bb))
            if len(c) != n or c[-2] != a[-2] or c[-1] != bb[-1]:
                bad("matmul_out", f"output {c} for {a} @ {bb}")
                continue
            for i in range(n - 2):
                va, vb = _right(a[:-2], n - 2, i), _right(bb[:-2], n - 2, i)
                if va != vb and va != 1 and vb != 1:
                    bad("matmul_batch", f"batch position {i}: {va} vs {vb}")
                if c[i] != max(va, vb):
                    bad("matmul_batch", f"batch output {c[i]} != max({va},{vb})")
        elif b.kind is K.BMM:
            a, bb = ins
            ok = (len(a) == len(bb) == len(c) == 3 and a[0] == bb[0] == c[0]
                  and a[2] == bb[1] and c[1] == a[1] and c[2] == bb[2])
            if not ok:
                bad("bmm", f"{a} x {bb} -> {c}")
        elif b.kind is K.TRANSPOSE:
            a = ins[0]
            if len(a) < 2:
                bad("transpose_order", f"order {len(a)} below 2")
            elif c != a[:-2] + (a[-1], a[-2]):
                bad("transpose", f"output {c} for input {a}")
        elif b.kind is K.LAST_TWO_PRESERVING:
            if len(ins[0]) < 2:
                bad("order_min2", f"order {len(ins[0])} below 2")
            elif c != ins[0]:
                bad("shape_preserving", f"output {c} != {ins[0]}")
        elif b.kind in (K.CONV, K.CONV_TRANSPOSE):
            a, w = ins
            m = b.spatial_dims
            g = attrs.get("groups", 1)
            s, p, d = attrs.get("stride", 1), attrs.get("padding", 0), attrs.get("dilation", 1)
            ks = [attrs.get(f"k{j + 1}") for j in range(m)]
            if len(a) != m + 2 or len(w) != m + 2 or len(c) != m + 2:
                bad("conv_order", f"orders {len(a)}/{len(w)}/{len(c)} != {m + 2}")
                continue
            if not (1 <= s <= STRIDE_RANGE[1] and 0 <= p <= PADDING_RANGE[1]
                    and 1 <= d <= DILATION_RANGE[1] and g in GROUPS_CHOICES
                    and all(k and KERNEL_RANGE[0] <= k <= KERNEL_RANGE[1] for k in ks)):
                bad("attr_domain", f"attrs {attrs}")
                continue
            if c[0] != a[0]:
                bad("conv_batch", f"{c[0]} != {a[0]}")
            if b.kind is K.CONV:
                if 2 * p > max(ks):
                    bad("conv_padding", f"2p={2 * p} exceeds max kernel {max(ks)}")
                if a[1] % g or c[1] % g:
                    bad("conv_groups", f"channels {a[1]}->{c[1]} not divisible by {g}")
                if w[0] != c[1] or w[1] * g != a[1]:
                    bad("conv_weight", f"weight {w} for C_in={a[1]}, C_out={c[1]}")
                for j in range(m):
                    if tuple(w[2:])[j] != ks[j]:
                        bad("conv_weight", f"kernel dim {w[2 + j]} != attr {ks[j]}")
                    if a[2 + j] < ks[j]:
                        bad("conv_input", f"spatial {a[2 + j]} below kernel {ks[j]}")
                    want = (a[2 + j] + 2 * p - d * (ks[j] - 1) - 1) // s + 1
                    if c[2 + j] != want:
                        bad("conv_formula", f"spatial {j}: {c[2 + j]} != {want}")
            else:
                if a[1] % g or c[1] % g:
                    bad("conv_groups", f"channels {a[1]}->{c[1]} not divisible by {g}")
                if w[0] != a[1] or w[1] * g != c[1]:
                    bad("conv_weight", f"weight {w} for C_in={a[1]}, C_out={c[1]}")
                for j in range(m):
                    if tuple(w[2:])[j] != ks[j]:
                        bad("conv_weight", f"kernel dim {w[2 + j]} != attr {ks[j]}")
                    want = (a[2 + j] - 1) * s - 2 * p + d * (ks[j] - 1) + 1
                    if want < 1 or c[2 + j] != want:
                        bad("conv_formula", f"spatial {j}: {c[2 + j]} != {want}")
        elif b.kind is K.POOL:
            a = ins[0]
            m = b.spatial_dims
            s, p = attrs.get("stride", 1), attrs.get("padding", 0)
            ks = [attrs.get(f"k{j + 1}") for j in range(m)]
            if len(a) != m + 2 or len(c) != m + 2:
                bad("pool_order", f"orders {len(a)}/{len(c)} != {m + 2}")
                continue
            if 2 * p > min(ks):
                bad("pool_padding", f"2p={2 * p} exceeds min kernel {min(ks)}")
            if c[:2] != a[:2]:
                bad("pool_channels", f"{c[:2]} != {a[:2]}")
            for j in range(m):
                if a[2 + j] < ks[j]:
                    bad("pool_input", f"spatial {a[2 + j]} below kernel {ks[j]}")
                want = (a[2 + j] + 2 * p - ks[j]) // s + 1
                if c[2 + j] != want:
                    bad("pool_formula", f"spatial {j}: {c[2 + j]} != {want}")
        elif b.kind is K.NORM_BATCH:
            a = ins[0]
            if len(a) < 2:
                bad("norm_order", f"order {len(a)} below 2")
            elif _numel(a) // a[1] <= 1:
                bad("norm_batch", "a single value per channel")
            if c != a:
                bad("shape_preserving", f"output {c} != {a}")
        elif b.kind is K.NORM_INSTANCE:
            a = ins[0]
            if len(a) < 3:
                bad("norm_order", f"order {len(a)} below 3")
            elif _numel(a[2:]) <= 1:
                bad("norm_instance", "a single spatial element")
            if c != a:
                bad("shape_preserving", f"output {c} != {a}")
        elif b.kind is K.NORM_GROUP:
            a = ins[0]
            g = attrs.get("groups", 1)
            if len(a) < 2 or a[1] % g:
                bad("norm_group", f"shape {a} with {g} groups")
            if c != a:
                bad("shape_preserving", f"output {c} != {a}")
        elif b.kind is K.NORM_LAYER:
            nd = attrs.get("norm_dims", 1)
            if not (1 <= nd <= len(ins[0])):
                bad("norm_layer", f"{nd} normalized dims on order {len(ins[0])}")
            if c != ins[0]:
                bad("shape_preserving", f"output {c} != {ins[0]}")
        elif b.kind is K.ELEMENTWISE_UNARY:
            if c != ins[0]:
                bad("shape_preserving", f"output {c} != {ins[0]}")
        elif b.kind is K.CAT:
            dim = attrs.get("dim")
            n = len(ins[0])
            if dim is None or n < 1 or not (0 <= dim < n):
                bad("cat_dim", f"dim {dim} for order {n}")
                continue
            if any(len(s) != n for s in ins) or len(c) != n:
                bad("cat_order", f"orders {[len(s) for s in ins]} -> {len(c)}")
                continue
            for i in range(n):
                if i == dim:
                    if c[i] != sum(s[i] for s in ins):
                        bad("cat_sum", f"{c[i]} != sum at dim {dim}")
                elif any(s[i] != ins[0][i] for s in ins) or c[i] != ins[0][i]:
                    bad("cat_eq", f"position {i} differs")
        elif b.kind is K.STACK:
            if any(s != ins[0] for s in ins):
                bad("stack_eq", "input shapes differ")
            if c != (len(ins),) + ins[0]:
                bad("stack_out", f"output {c} for {len(ins)} inputs of {ins[0]}")
        else:
            bad("unknown_kind", str(b.kind))

    total_numel = sum(_numel(shapes[e]) for e in cs.edge_ids)
    if total_numel > cfg.max_size:
        out.append(Violation(None, "max_size", f"{total_numel} > {cfg.max_size}"))
    for e in cs.edge_ids:
        if len(shapes[e]) >= 1 and _numel(shapes[e]) < cfg.min_size_tensor:
            out.append(Violation(None, "min_size_tensor",
                                 f"edge {e} has {_numel(shapes[e])} elements"))
    total_flops = 0
    for b in cs.blocks:
        spec = cs.catalog.lookup(b.op)
        try:
            total_flops += flops_of(spec, [shapes[e] for e in b.inputs],
                                    shapes[b.output], solution.node_attrs.get(b.node_id, {}))
        except Exception as exc:
            out.append(Violation(b.node_id, "flops", str(exc)))
    min_flops = 0 if cs.all_zero_flops else cfg.min_flops
    if not (min_flops <= total_flops <= cfg.max_flops):
        out.append(Violation(None, "flops_budget",
                             f"{total_flops} outside [{min_flops}, {cfg.max_flops}]"))
    return out
