import itertools
import random

from hypothesis import given, settings
from hypothesis import strategies as st

from tensorforge.graph import BuildMode, Node, ProgramGraph, TensorRef
from tensorforge.oracle import broadcast_shapes, infer, report_to_dict, verify_program
from tensorforge.solver import ShapeSolution, SolverConfig, emit_constraints, solve

from conftest import build_graph


def _add_graph(catalog):
    g, _ = build_graph(catalog, 1, ops={"Add"})
    return g


def _infer_add(catalog, a, b):
    g = _add_graph(catalog)
    return infer(g, catalog, {0: a, 1: b}, {0: {}})


def test_broadcast_simple(catalog):
    rep = _infer_add(catalog, (3, 1, 5), (3, 4, 5))
    assert rep.ok
    assert rep.edge_shapes[2] == (3, 4, 5)


def test_broadcast_rank_promoting(catalog):
    rep = _infer_add(catalog, (5,), (3, 4, 5))
    assert rep.ok
    assert rep.edge_shapes[2] == (3, 4, 5)


def test_broadcast_failure(catalog):
    rep = _infer_add(catalog, (3, 2, 5), (3, 4, 5))
    assert not rep.ok
    assert rep.error.node_id == 0
    assert "broadcast" in rep.error.reason


def test_conv2d_lenet_shape(catalog):
    """The 32x32 single-channel image through a 6x1x5x5 kernel gives 28x28."""
    g, _ = build_graph(catalog, 1, ops={"Conv2d"}, seed=3)
    a, w = (r.edge_id for r in g.nodes[0].inputs)
    out = g.nodes[0].output.edge_id
    attrs = {0: {"k1": 5, "k2": 5, "stride": 1, "padding": 0, "dilation": 1, "groups": 1}}
    rep = infer(g, catalog, {a: (4096, 1, 32, 32), w: (6, 1, 5, 5)}, attrs)
    assert rep.ok, rep.error
    assert rep.edge_shapes[out] == (4096, 6, 28, 28)


def test_reduce_keepdim_variants(catalog):
    g, _ = build_graph(catalog, 1, ops={"Sum"})
    src = g.nodes[0].inputs[0].edge_id
    out = g.nodes[0].output.edge_id
    rep = infer(g, catalog, {src: (4, 5, 6)}, {0: {"dim": 1, "keepdim": True}})
    assert rep.edge_shapes[out] == (4, 1, 6)
    rep = infer(g, catalog, {src: (4, 5, 6)}, {0: {"dim": 1, "keepdim": False}})
    assert rep.edge_shapes[out] == (4, 6)
    rep = infer(g, catalog, {src: (4,)}, {0: {"dim": 0, "keepdim": False}})
    assert rep.edge_shapes[out] == ()


def test_oracle_total_on_malformed_attrs(catalog):
    g, _ = build_graph(catalog, 1, ops={"Sum"})
    src = g.nodes[0].inputs[0].edge_id
    rep = infer(g, catalog, {src: (4, 5)}, {0: {"dim": 9, "keepdim": False}})
    assert not rep.ok
    rep = infer(g, catalog, {src: (4, 5)}, {0: {}})  # missing attrs
    assert not rep.ok


def test_oracle_total_on_missing_input_shape(catalog):
    g = _add_graph(catalog)
    rep = infer(g, catalog, {0: (3,)}, {})
    assert not rep.ok
    assert "no shape" in rep.error.reason


def test_oracle_never_raises_on_garbage_graph(catalog):
    ref0 = TensorRef(0, None)
    ref1 = TensorRef(1, 0)
    node = Node(0, "Matmul", (ref0, ref0), ref1, {})
    g = ProgramGraph(((("Randn"), ref0),), (node,), (ref1,))
    rep = infer(g, catalog, {0: (3,)}, {})
    assert not rep.ok


@settings(max_examples=200, deadline=None)
@given(st.lists(st.lists(st.integers(min_value=1, max_value=4), max_size=4), min_size=1, max_size=3))
def test_broadcast_shapes_matches_bruteforce(shapes):
    tup = [tuple(s) for s in shapes]
    n = max((len(s) for s in tup), default=0)
    padded = [(1,) * (n - len(s)) + s for s in tup]
    ok = True
    out = []
    for pos in zip(*padded):
        non1 = {v for v in pos if v != 1}
        if len(non1) > 1:
            ok = False
            break
        out.append(max(pos))
    try:
        got = broadcast_shapes(tup)
        assert ok and got == tuple(out)
    except Exception:
        assert not ok


def test_exhaustive_pairwise_broadcast_small(catalog):
    shapes = [()]
    for n in (1, 2, 3):
        shapes += list(itertools.product((1, 2, 3), repeat=n))
    for a, b in itertools.product(shapes, repeat=2):
        rep = _infer_add(catalog, a, b)
        n = max(len(a), len(b))
        pa = (1,) * (n - len(a)) + a
        pb = (1,) * (n - len(b)) + b
        ok = all(x == y or x == 1 or y == 1 for x, y in zip(pa, pb))
        assert rep.ok == ok, (a, b)
        if ok:
            assert rep.edge_shapes[2] == tuple(max(x, y) for x, y in zip(pa, pb))


def test_verify_program_matches_solver(catalog, solver_cfg):
    from tensorforge.datasets import generate_program

    for level, n in ((2, 30), (20, 3)):
        mode = BuildMode.CHAIN if level < 20 else BuildMode.DAG
        for i in range(n):
            g, sol, _ = generate_program(level, mode, 7000 + i, catalog, solver_cfg)
            assert verify_program(g, catalog, sol) == []


def test_verify_program_catches_injected_fault(catalog):
    g, _ = build_graph(catalog, 1, ops={"Sum"})
    cs = emit_constraints(g, catalog)
    sol = solve(cs, SolverConfig(), random.Random(0))
    shapes = dict(sol.edge_shapes)
    out = g.nodes[0].output.edge_id
    if shapes[out]:
        shapes[out] = (shapes[out][0] + 1,) + shapes[out][1:]
    else:
        shapes[out] = (2,)
    bad = ShapeSolution(shapes, sol.node_attrs, sol.total_flops, sol.total_numel)
    assert verify_program(g, catalog, bad)


def test_report_serialization(catalog):
    rep = _infer_add(catalog, (2, 3), (2, 3))
    doc = report_to_dict(rep)
    assert doc["status"] == "ok"
    assert doc["edges"]["2"] == [2, 3]
    bad = report_to_dict(_infer_add(catalog, (2,), (3,)))
    assert bad["status"] == "shape_error"
    assert bad["error"]["node_id"] == 0
