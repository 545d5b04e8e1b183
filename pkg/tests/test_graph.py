import pytest

from tensorforge.graph import (
    BuildConfig,
    BuildError,
    BuildMode,
    Node,
    ProgramGraph,
    TensorRef,
    graph_from_dict,
    graph_to_dict,
    level_of,
    structural_hash,
)

from conftest import build_graph


def test_level1_add_structure(catalog):
    g, _ = build_graph(catalog, 1, ops={"Add"})
    assert len(g.create_statements) == 2
    assert len(g.nodes) == 1
    assert len(g.outputs) == 1
    assert g.outputs[0].edge_id == g.nodes[0].output.edge_id


def test_level_of(catalog):
    g, _ = build_graph(catalog, 1, ops={"ReLU"})
    assert level_of(g) == 1
    g20, _ = build_graph(catalog, 20, mode=BuildMode.DAG, seed=3)
    assert level_of(g20) == 20


def test_chain_wiring(catalog):
    for seed in range(30):
        g, _ = build_graph(catalog, 2, mode=BuildMode.CHAIN, seed=seed)
        assert g.nodes[1].inputs[0].edge_id == g.nodes[0].output.edge_id
    for seed in range(10):
        g, _ = build_graph(catalog, 5, mode=BuildMode.CHAIN, seed=seed)
        for i in range(1, 5):
            assert g.nodes[i].inputs[0].edge_id == g.nodes[i - 1].output.edge_id


def test_build_terminates_and_counts(catalog):
    for level in (1, 2, 5, 20):
        for seed in range(25):
            for mode in (BuildMode.DAG, BuildMode.CHAIN):
                g, _ = build_graph(catalog, level, mode=mode, seed=seed)
                assert len(g.nodes) == level
                g.validate()


def test_acyclic_many_random_builds(catalog):
    """Emission order is a topological order for 10^4 random builds."""
    n_builds = 0
    for level in (1, 2, 5, 20):
        for seed in range(2500):
            g, _ = build_graph(catalog, level, mode=BuildMode.DAG, seed=seed)
            n_builds += 1
            produced = set()
            for _, ref in g.create_statements:
                produced.add(ref.edge_id)
            for node in g.nodes:
                assert all(r.edge_id in produced for r in node.inputs)
                assert len({r.edge_id for r in node.inputs}) == len(node.inputs)
                produced.add(node.output.edge_id)
    assert n_builds == 10_000


def test_inputs_distinct_within_node(catalog):
    for seed in range(200):
        g, _ = build_graph(catalog, 5, mode=BuildMode.DAG, seed=seed)
        for node in g.nodes:
            ids = [r.edge_id for r in node.inputs]
            assert len(set(ids)) == len(ids)


def test_consumed_tensors_remain_available(catalog):
    """A tensor consumed by one node may be drawn again by a later node."""
    reused = False
    for seed in range(300):
        g, _ = build_graph(catalog, 8, mode=BuildMode.DAG, seed=seed)
        counts = {}
        for node in g.nodes:
            for r in node.inputs:
                counts[r.edge_id] = counts.get(r.edge_id, 0) + 1
        if any(c > 1 for c in counts.values()):
            reused = True
            break
    assert reused


def test_integer_flag_propagation(catalog):
    g, _ = build_graph(catalog, 1, ops={"ArgMax"})
    assert g.nodes[0].output.integer_typed
    g2, _ = build_graph(catalog, 1, ops={"Sigmoid"})
    assert not g2.nodes[0].output.integer_typed


def test_int_rejecting_ops_never_wire_integer_edges(catalog):
    for seed in range(300):
        g, _ = build_graph(catalog, 6, mode=BuildMode.DAG, seed=seed)
        for node in g.nodes:
            spec = catalog.lookup(node.op)
            if not spec.accepts_int or spec.same_dtype_required:
                assert not any(r.integer_typed for r in node.inputs), node.op


def test_invalid_level():
    with pytest.raises(BuildError):
        BuildConfig(level=0)


def test_structural_hash_self(catalog):
    g, _ = build_graph(catalog, 5, seed=9)
    assert structural_hash(g) == structural_hash(g)
    assert len(structural_hash(g)) == 16


def test_structural_hash_renumbering_invariant(catalog):
    g, _ = build_graph(catalog, 5, mode=BuildMode.DAG, seed=11)

    def renumber(graph, offset):
        remap = {}

        def ref(r):
            if r.edge_id not in remap:
                remap[r.edge_id] = TensorRef(r.edge_id + offset, r.producer, r.integer_typed)
            return remap[r.edge_id]

        creates = tuple((op, ref(r)) for op, r in graph.create_statements)
        nodes = tuple(Node(n.node_id, n.op, tuple(ref(r) for r in n.inputs),
                           ref(n.output), dict(n.attrs)) for n in graph.nodes)
        outs = tuple(ref(r) for r in graph.outputs)
        return ProgramGraph(creates, nodes, outs)

    assert structural_hash(renumber(g, 100)) == structural_hash(g)


def test_structural_hash_distinguishes_ops(catalog):
    ga, _ = build_graph(catalog, 1, ops={"Add"}, seed=4)
    gm, _ = build_graph(catalog, 1, ops={"Mul"}, seed=4)
    assert [r.edge_id for n in ga.nodes for r in n.inputs] == \
        [r.edge_id for n in gm.nodes for r in n.inputs]
    assert structural_hash(ga) != structural_hash(gm)


def test_graph_json_roundtrip(catalog):
    g, _ = build_graph(catalog, 7, mode=BuildMode.DAG, seed=2)
    doc = graph_to_dict(g)
    g2 = graph_from_dict(doc)
    assert graph_to_dict(g2) == doc
    assert structural_hash(g2) == structural_hash(g)


def test_build_deterministic(catalog):
    a, _ = build_graph(catalog, 10, mode=BuildMode.DAG, seed=77)
    b, _ = build_graph(catalog, 10, mode=BuildMode.DAG, seed=77)
    assert graph_to_dict(a) == graph_to_dict(b)
