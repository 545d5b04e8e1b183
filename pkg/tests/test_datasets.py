import hashlib

import pytest

from tensorforge.datasets import (
    DatasetError,
    STAGES,
    build_stage,
    derive_seed,
    generate_batch,
    generate_program,
    load_index,
)
from tensorforge.emitter import parse_manifest
from tensorforge.graph import BuildMode


def test_derive_seed_stable():
    assert derive_seed(1, "a", 2) == derive_seed(1, "a", 2)
    assert derive_seed(1, "a", 2) != derive_seed(1, "a", 3)
    # frozen: first 8 bytes of sha256(b"42:bench:1:Add:0"), big endian
    assert derive_seed(42, "bench", 1, "Add", 0) == 16772428110395142273


def test_stage_table():
    assert STAGES == {1: (1, 20_000), 2: (2, 60_000), 3: (5, 20_000)}


def test_generate_batch_writes_tree(catalog, solver_cfg, tmp_path):
    doc = generate_batch(2, 6, BuildMode.CHAIN, 9, solver_cfg, tmp_path / "d")
    assert len(doc["entries"]) == 6
    for entry in doc["entries"]:
        src = (tmp_path / "d" / entry["source"]).read_text()
        man = parse_manifest((tmp_path / "d" / entry["manifest"]).read_text())
        assert man["level"] == 2
        assert hashlib.sha256(src.encode()).hexdigest() == entry["source_digest"]
    index = load_index(tmp_path / "d")
    assert index == doc


def test_generate_batch_deterministic(catalog, solver_cfg, tmp_path):
    generate_batch(2, 5, BuildMode.CHAIN, 3, solver_cfg, tmp_path / "a")
    generate_batch(2, 5, BuildMode.CHAIN, 3, solver_cfg, tmp_path / "b")
    files_a = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*") if p.is_file())
    assert files_a == files_b
    for rel in files_a:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()


def test_no_duplicate_hashes(catalog, solver_cfg, tmp_path):
    doc = generate_batch(1, 30, BuildMode.CHAIN, 4, solver_cfg, tmp_path / "d")
    hashes = [e["structural_hash"] for e in doc["entries"]]
    assert len(set(hashes)) == len(hashes)


def test_programs_reverify_on_load(catalog, solver_cfg, tmp_path):
    from tensorforge.emitter import graph_from_manifest, solution_from_manifest
    from tensorforge.oracle import verify_program
    from tensorforge.solver import check, emit_constraints

    doc = generate_batch(5, 5, BuildMode.CHAIN, 8, solver_cfg, tmp_path / "d")
    for entry in doc["entries"]:
        man = parse_manifest((tmp_path / "d" / entry["manifest"]).read_text())
        g = graph_from_manifest(man)
        sol = solution_from_manifest(man)
        assert not check(sol, emit_constraints(g, catalog), solver_cfg)
        assert verify_program(g, catalog, sol) == []


def test_build_stage_counts_small(solver_cfg, tmp_path):
    doc = build_stage(3, 0.001, 2, solver_cfg, tmp_path / "s3")
    assert doc["stage"] == 3
    assert len(doc["entries"]) == 20
    assert all(e["level"] == 5 for e in doc["entries"])
    assert doc["mode"] == "chain"


def test_build_stage_validates_args(solver_cfg, tmp_path):
    with pytest.raises(DatasetError):
        build_stage(4, 0.01, 0, solver_cfg, tmp_path)
    with pytest.raises(DatasetError):
        build_stage(1, 0.0, 0, solver_cfg, tmp_path)
    with pytest.raises(DatasetError):
        build_stage(1, 1.5, 0, solver_cfg, tmp_path)


def test_generate_program_subset(catalog, solver_cfg):
    g, sol, _ = generate_program(1, BuildMode.CHAIN, 5, catalog, solver_cfg,
                                 op_subset=("Matmul",))
    assert g.nodes[0].op == "Matmul"


def test_generate_program_skips_duplicates(catalog, solver_cfg):
    from tensorforge.graph import structural_hash

    g, sol, _ = generate_program(1, BuildMode.CHAIN, 5, catalog, solver_cfg,
                                 op_subset=("Add",))
    h = structural_hash(g, sol)
    g2, sol2, _ = generate_program(1, BuildMode.CHAIN, 5, catalog, solver_cfg,
                                   op_subset=("Add",), skip_hashes={h})
    assert structural_hash(g2, sol2) != h


def test_parallel_jobs_match_sequential(solver_cfg, tmp_path):
    generate_batch(2, 8, BuildMode.CHAIN, 12, solver_cfg, tmp_path / "seq", jobs=1)
    generate_batch(2, 8, BuildMode.CHAIN, 12, solver_cfg, tmp_path / "par", jobs=2)
    seq = sorted(p.relative_to(tmp_path / "seq") for p in (tmp_path / "seq").rglob("*.json"))
    for rel in seq:
        assert (tmp_path / "seq" / rel).read_bytes() == (tmp_path / "par" / rel).read_bytes()


def test_run_slots_dedup_against_preseeded_hashes(catalog, solver_cfg, tmp_path):
    """Two slots with identical seeds produce a duplicate; the dedup pass
    regenerates the second against the already-seen hash set."""
    from tensorforge.datasets import SlotSpec, _run_slots

    slots = [
        SlotSpec(slot=0, program_id="dup_a", level=1, mode="chain", seed=99,
                 op_subset=("Add",)),
        SlotSpec(slot=1, program_id="dup_b", level=1, mode="chain", seed=99,
                 op_subset=("Add",)),
    ]
    seen = set()
    entries = _run_slots(slots, catalog, solver_cfg, tmp_path, jobs=1,
                         seen_hashes=seen)
    assert len(entries) == 2
    assert entries[0]["structural_hash"] != entries[1]["structural_hash"]
    assert len(seen) == 2
