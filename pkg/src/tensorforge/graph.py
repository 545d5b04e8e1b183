"""Random computation-graph construction via a candidate-tensor list.

Nodes are operators, edges are tensors. The builder only decides structure
(wiring, operator choice, input counts); tensor shapes and most attributes
stay unresolved until the shape solver runs.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from .catalog import Catalog, OperatorSpec, VARIADIC_COUNTS, DtypeRule


class BuildError(Exception):
    pass


class AritySubsetConflict(BuildError):
    """The operator subset cannot continue a chain (defensive check)."""


class BuildMode(str, Enum):
    DAG = "dag"
    CHAIN = "chain"


@dataclass(frozen=True)
class TensorRef:
    edge_id: int
    producer: Optional[int]  # node id, or None for create-op outputs
    integer_typed: bool = False


@dataclass(frozen=True)
class Node:
    node_id: int
    op: str
    inputs: tuple[TensorRef, ...]
    output: TensorRef
    attrs: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ProgramGraph:
    create_statements: tuple[tuple[str, TensorRef], ...]  # (create-op name, edge)
    nodes: tuple[Node, ...]
    outputs: tuple[TensorRef, ...]  # edges never consumed, in edge-id order

    @property
    def level(self) -> int:
        return len(self.nodes)

    def all_edges(self) -> list[TensorRef]:
        return [ref for _, ref in self.create_statements] + [n.output for n in self.nodes]

    def edge_by_id(self, edge_id: int) -> TensorRef:
        for ref in self.all_edges():
            if ref.edge_id == edge_id:
                return ref
        raise KeyError(edge_id)

    def validate(self) -> None:
        """Assert the structural invariants hold (acyclicity via emission order)."""
        seen: set[int] = set()
        for _, ref in self.create_statements:
            if ref.edge_id in seen:
                raise BuildError(f"edge {ref.edge_id} produced twice")
            seen.add(ref.edge_id)
        for node in self.nodes:
            for ref in node.inputs:
                if ref.edge_id not in seen:
                    raise BuildError(
                        f"node {node.node_id} consumes edge {ref.edge_id} before production")
            if node.output.edge_id in seen:
                raise BuildError(f"edge {node.output.edge_id} produced twice")
            if len({r.edge_id for r in node.inputs}) != len(node.inputs):
                raise BuildError(f"node {node.node_id} repeats an input edge")
            seen.add(node.output.edge_id)
        consumed = {r.edge_id for n in self.nodes for r in n.inputs}
        expected = sorted(e for e in seen if e not in consumed)
        if [r.edge_id for r in self.outputs] != expected:
            raise BuildError("outputs do not match the unconsumed edge set")


@dataclass(frozen=True)
class BuildConfig:
    level: int
    mode: BuildMode = BuildMode.DAG
    op_subset: Optional[frozenset[str]] = None
    seed: int = 0

    def __post_init__(self):
        if self.level < 1:
            raise BuildError("level must be >= 1")


def level_of(graph: ProgramGraph) -> int:
    return graph.level


def _output_is_int(spec: OperatorSpec, inputs: list[TensorRef]) -> bool:
    if spec.dtype_rule is DtypeRule.ALWAYS_INT:
        return True
    if spec.dtype_rule is DtypeRule.ALWAYS_FLOAT:
        return False
    return bool(inputs) and all(r.integer_typed for r in inputs)


def _edge_ok_for(spec: OperatorSpec, ref: TensorRef) -> bool:
    # Ops that reject integer tensors (or require homogeneous dtypes, whose
    # partners may have to come from float create ops) never wire an
    # integer-typed edge. Keeps every generated program executable.
    if ref.integer_typed and (not spec.accepts_int or spec.same_dtype_required):
        return False
    return True


class _Builder:
    def __init__(self, config: BuildConfig, catalog: Catalog, rng):
        self.config = config
        self.catalog = catalog
        self.rng = rng
        self.next_edge = 0
        self.candidates: list[TensorRef] = []
        self.creates: list[tuple[str, TensorRef]] = []
        self.nodes: list[Node] = []

    def _new_edge(self, producer: Optional[int], integer_typed: bool) -> TensorRef:
        ref = TensorRef(edge_id=self.next_edge, producer=producer, integer_typed=integer_typed)
        self.next_edge += 1
        return ref

    def _top_up(self) -> TensorRef:
        spec = self.catalog.sample_create(self.rng)
        ref = self._new_edge(producer=None, integer_typed=False)
        self.creates.append((spec.name, ref))
        self.candidates.append(ref)
        return ref

    def _draw_inputs(self, spec: OperatorSpec, m: int, first: Optional[TensorRef]) -> list[TensorRef]:
        chosen: list[TensorRef] = [first] if first is not None else []
        while len(chosen) < m:
            taken = {r.edge_id for r in chosen}
            eligible = [r for r in self.candidates
                        if r.edge_id not in taken and _edge_ok_for(spec, r)]
            need = m - len(chosen)
            while len(eligible) < need:
                eligible.append(self._top_up())
            chosen.append(eligible[self.rng.randrange(len(eligible))])
        return chosen

    def _sample_op(self, prev: Optional[TensorRef]) -> OperatorSpec:
        subset = self.config.op_subset
        if prev is not None and prev.integer_typed:
            pool = [s.name for s in self.catalog.compute_ops
                    if s.accepts_int and not s.same_dtype_required
                    and (subset is None or s.name in subset)]
            if not pool:
                raise AritySubsetConflict(
                    "no operator in the subset can extend an integer-typed chain")
            return self.catalog.sample_compute(self.rng, pool)
        return self.catalog.sample_compute(self.rng, subset)

    def build(self) -> ProgramGraph:
        prev_output: Optional[TensorRef] = None
        for node_id in range(self.config.level):
            chain_first = prev_output if self.config.mode is BuildMode.CHAIN else None
            spec = self._sample_op(chain_first)
            m = self.rng.choice(VARIADIC_COUNTS) if spec.is_variadic else spec.arity
            inputs = self._draw_inputs(spec, m, chain_first)
            out = self._new_edge(producer=node_id, integer_typed=_output_is_int(spec, inputs))
            self.nodes.append(Node(node_id=node_id, op=spec.name,
                                   inputs=tuple(inputs), output=out, attrs={}))
            self.candidates.append(out)
            prev_output = out
        consumed = {r.edge_id for n in self.nodes for r in n.inputs}
        outputs = tuple(sorted((n.output for n in self.nodes if n.output.edge_id not in consumed),
                               key=lambda r: r.edge_id))
        graph = ProgramGraph(create_statements=tuple(self.creates),
                             nodes=tuple(self.nodes), outputs=outputs)
        graph.validate()
        return graph


def build(config: BuildConfig, catalog: Catalog, rng) -> ProgramGraph:
    """Construct a random program graph with exactly config.level compute nodes."""
    return _Builder(config, catalog, rng).build()


def structural_hash(graph: ProgramGraph, solution=None) -> str:
    """Stable 64-bit digest, invariant under order-preserving edge renumbering.

    With a solution attached, resolved attributes and solved shapes join the
    key (the dataset dedup identity); without one, only ops and wiring count.
    """
    remap: dict[int, int] = {}
    for ref in graph.all_edges():
        remap[ref.edge_id] = len(remap)
    doc: list = [["create", op, remap[ref.edge_id]] for op, ref in graph.create_statements]
    for node in graph.nodes:
        attrs = dict(node.attrs)
        if solution is not None:
            attrs.update(solution.node_attrs.get(node.node_id, {}))
        doc.append(["node", node.op, [remap[r.edge_id] for r in node.inputs],
                    remap[node.output.edge_id], sorted(attrs.items())])
    doc.append(["out", [remap[r.edge_id] for r in graph.outputs]])
    if solution is not None:
        doc.append(["shapes", [[remap[e], list(solution.edge_shapes[e])]
                               for e in sorted(solution.edge_shapes, key=lambda e: remap[e])]])
    blob = json.dumps(doc, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def graph_to_dict(graph: ProgramGraph) -> dict:
    return {
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
                "attrs": dict(n.attrs),
            }
            for n in graph.nodes
        ],
        "outputs": [r.edge_id for r in graph.outputs],
    }


def graph_from_dict(doc: dict) -> ProgramGraph:
    refs: dict[int, TensorRef] = {}
    creates = []
    for item in doc["create_statements"]:
        ref = TensorRef(edge_id=item["edge"], producer=None,
                        integer_typed=bool(item.get("integer_typed", False)))
        refs[ref.edge_id] = ref
        creates.append((item["op"], ref))
    nodes = []
    for item in doc["nodes"]:
        out = TensorRef(edge_id=item["output"], producer=item["node_id"],
                        integer_typed=bool(item.get("integer_typed", False)))
        refs[out.edge_id] = out
        nodes.append(Node(node_id=item["node_id"], op=item["op"],
                          inputs=tuple(refs[e] for e in item["inputs"]),
                          output=out, attrs=dict(item.get("attrs", {}))))
    outputs = tuple(refs[e] for e in doc["outputs"])
    graph = ProgramGraph(create_statements=tuple(creates), nodes=tuple(nodes), outputs=outputs)
    graph.validate()
    return graph
