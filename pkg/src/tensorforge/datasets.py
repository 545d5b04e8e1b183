"""Dataset builders: the three curriculum stages and the held-out benchmark.

Drives the full generate -> solve -> verify -> emit pipeline per program slot,
with deterministic per-slot seeds, structural-hash deduplication, and bounded
rebuild retries for infeasible graphs.
"""

from __future__ import annotations

import hashlib
import json
import math
import random
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .catalog import Catalog, default_catalog
from .emitter import EmittedProgram, emit, manifest_to_text
from .graph import BuildConfig, BuildMode, build, structural_hash
from .oracle import verify_program
from .solver import Infeasible, SolveTimeout, SolverConfig, check, emit_constraints, solve

# Rebuild budget per program slot. Retries are cheap (an infeasible wiring is
# rejected in about a millisecond), and level-20 DAGs wire randomly enough
# that only a few percent of raw graphs admit a consistent order assignment.
DEFAULT_RETRIES = 512

# Curriculum stages at scale 1: (level, count), all sequential chains.
STAGES = {1: (1, 20_000), 2: (2, 60_000), 3: (5, 20_000)}

# Held-out benchmark quotas per level (level 1 is two programs per operator).
BENCHMARK_LEVELS = (2, 5, 20)
BENCHMARK_COUNT_PER_LEVEL = 100
BENCHMARK_PROGRAMS_PER_OP = 2


class DatasetError(Exception):
    pass


class GenerationExhausted(DatasetError):
    def __init__(self, msg: str, completed: int = 0):
        super().__init__(msg)
        self.completed = completed


class CoverageUnreachable(DatasetError):
    def __init__(self, operator: str, msg: str):
        super().__init__(msg)
        self.operator = operator


def derive_seed(seed: int, *parts) -> int:
    """Machine-independent seed derivation via SHA-256."""
    blob = ":".join([str(seed)] + [str(p) for p in parts]).encode()
    return int.from_bytes(hashlib.sha256(blob).digest()[:8], "big")


@dataclass(frozen=True)
class SlotSpec:
    slot: int
    program_id: str
    level: int
    mode: str
    seed: int
    op_subset: Optional[tuple[str, ...]] = None


def generate_program(level: int, mode: BuildMode, seed: int, catalog: Catalog,
                     cfg: SolverConfig, op_subset=None,
                     retries: int = DEFAULT_RETRIES,
                     skip_hashes: Optional[set[str]] = None) -> tuple:
    """One verified (graph, solution, attempt_seed) triple.

    Infeasible or timed-out wirings (and structural-hash duplicates) trigger a
    rebuild from a derived seed, up to the retry budget.
    """
    subset = frozenset(op_subset) if op_subset else None
    last = "no attempt made"
    for attempt in range(retries):
        attempt_seed = derive_seed(seed, attempt)
        rng = random.Random(attempt_seed)
        graph = build(BuildConfig(level=level, mode=mode, op_subset=subset,
                                  seed=attempt_seed), catalog, rng)
        cs = emit_constraints(graph, catalog)
        try:
            solution = solve(cs, cfg, rng)
        except (Infeasible, SolveTimeout) as exc:
            last = f"{type(exc).__name__}: {exc}"
            continue
        if check(solution, cs, cfg) or verify_program(graph, catalog, solution):
            last = "solver output failed re-verification"
            continue
        if skip_hashes is not None and structural_hash(graph, solution) in skip_hashes:
            last = "structural-hash duplicate"
            continue
        return graph, solution, attempt_seed
    raise GenerationExhausted(f"retry budget ({retries}) spent at level {level}: {last}")


def _emit_slot(spec: SlotSpec, catalog: Catalog, cfg: SolverConfig,
               skip_hashes: Optional[set[str]] = None) -> EmittedProgram:
    mode = BuildMode(spec.mode)
    graph, solution, used_seed = generate_program(
        spec.level, mode, spec.seed, catalog, cfg,
        op_subset=spec.op_subset, skip_hashes=skip_hashes)
    return emit(graph, solution, catalog, program_id=spec.program_id,
                level=spec.level, seed=used_seed, mode=spec.mode)


def _worker(args) -> tuple[int, str, dict]:
    spec_doc, cfg_doc = args
    spec = SlotSpec(**spec_doc)
    cfg = SolverConfig(**cfg_doc)
    program = _emit_slot(spec, default_catalog(), cfg)
    return spec.slot, program.source, program.manifest


def _cfg_doc(cfg: SolverConfig) -> dict:
    return {
        "min_flops": cfg.min_flops, "max_flops": cfg.max_flops,
        "max_size": cfg.max_size, "min_size_tensor": cfg.min_size_tensor,
        "time_budget": cfg.time_budget, "max_attempts": cfg.max_attempts,
        "value_rounds": cfg.value_rounds,
    }


def _write_program(root: Path, program: EmittedProgram) -> dict:
    level = program.manifest["level"]
    directory = root / str(level)
    directory.mkdir(parents=True, exist_ok=True)
    pid = program.manifest["program_id"]
    src_path = directory / f"{pid}.py"
    man_path = directory / f"{pid}.json"
    src_path.write_text(program.source)
    man_text = manifest_to_text(program.manifest)
    man_path.write_text(man_text)
    return {
        "id": pid,
        "level": level,
        "structural_hash": program.manifest["structural_hash"],
        "source_digest": hashlib.sha256(program.source.encode()).hexdigest(),
        "manifest_digest": hashlib.sha256(man_text.encode()).hexdigest(),
        "source": str(src_path.relative_to(root)),
        "manifest": str(man_path.relative_to(root)),
    }


def _run_slots(slots: list[SlotSpec], catalog: Catalog, cfg: SolverConfig,
               out_dir: Path, jobs: int, seen_hashes: set[str]) -> list[dict]:
    """Generate all slots (optionally in parallel), then dedup in slot order.

    Results are assembled by slot index, so scheduling cannot change output.
    """
    results: dict[int, EmittedProgram] = {}
    if jobs > 1 and len(slots) > 1:
        tasks = [(spec.__dict__, _cfg_doc(cfg)) for spec in slots]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for slot, source, manifest in pool.map(_worker, tasks, chunksize=4):
                results[slot] = EmittedProgram(source=source, manifest=manifest)
    else:
        for spec in slots:
            results[spec.slot] = _emit_slot(spec, catalog, cfg)

    entries = []
    for spec in slots:
        program = results[spec.slot]
        if program.manifest["structural_hash"] in seen_hashes:
            # Duplicate of an earlier slot: regenerate sequentially with the
            # duplicate set excluded.
            program = _emit_slot(spec, catalog, cfg, skip_hashes=seen_hashes)
        seen_hashes.add(program.manifest["structural_hash"])
        entries.append(_write_program(out_dir, program))
    return entries


def _write_index(out_dir: Path, doc: dict) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "index.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def generate_batch(level: int, count: int, mode: BuildMode, seed: int,
                   cfg: SolverConfig, out_dir: Path, jobs: int = 1,
                   op_subset=None, dataset: str = "batch",
                   catalog: Optional[Catalog] = None) -> dict:
    """The cmd-generate workhorse: N verified programs plus an index document."""
    if count < 1:
        raise DatasetError("count must be >= 1")
    catalog = catalog or default_catalog()
    out_dir = Path(out_dir)
    subset = tuple(sorted(op_subset)) if op_subset else None
    slots = [
        SlotSpec(slot=i, program_id=f"{dataset}_l{level}_{i:05d}", level=level,
                 mode=mode.value, seed=derive_seed(seed, dataset, level, i),
                 op_subset=subset)
        for i in range(count)
    ]
    seen: set[str] = set()
    entries = _run_slots(slots, catalog, cfg, out_dir, jobs, seen)
    doc = {
        "dataset": dataset,
        "seed": seed,
        "level": level,
        "mode": mode.value,
        "count": count,
        "solver_config": _cfg_doc(cfg),
        "entries": entries,
    }
    _write_index(out_dir, doc)
    return doc


def build_stage(stage: int, scale: float, seed: int, cfg: SolverConfig,
                out_dir: Path, jobs: int = 1,
                catalog: Optional[Catalog] = None) -> dict:
    """One curriculum stage: scaled count of sequential-chain programs."""
    if stage not in STAGES:
        raise DatasetError(f"stage must be one of {sorted(STAGES)}")
    if not (0 < scale <= 1):
        raise DatasetError("scale must lie in (0, 1]")
    level, full_count = STAGES[stage]
    # ceil of the scaled count, tolerant of binary-float noise (0.01 * 20000
    # must give exactly 200, not 201).
    count = max(1, math.ceil(full_count * scale - 1e-9))
    doc = generate_batch(level, count, BuildMode.CHAIN, seed, cfg, Path(out_dir),
                         jobs=jobs, dataset=f"stage{stage}", catalog=catalog)
    doc["stage"] = stage
    doc["scale"] = scale
    _write_index(Path(out_dir), doc)
    return doc


def build_benchmark(seed: int, cfg: SolverConfig, out_dir: Path, jobs: int = 1,
                    training_hashes: Optional[set[str]] = None,
                    catalog: Optional[Catalog] = None) -> dict:
    """The held-out benchmark: every compute operator twice at level 1, plus
    100 DAG programs at each of levels 2, 5, and 20, disjoint from training."""
    catalog = catalog or default_catalog()
    out_dir = Path(out_dir)
    seen: set[str] = set(training_hashes or ())
    initial_seen = len(seen)
    entries: list[dict] = []

    slot_no = 0
    level1_slots = []
    for op in catalog.compute_names():
        for copy in range(BENCHMARK_PROGRAMS_PER_OP):
            level1_slots.append(SlotSpec(
                slot=slot_no, program_id=f"bench_l1_{op}_{copy}", level=1,
                mode=BuildMode.DAG.value,
                seed=derive_seed(seed, "bench", 1, op, copy), op_subset=(op,)))
            slot_no += 1
    try:
        entries += _run_slots(level1_slots, catalog, cfg, out_dir, jobs, seen)
    except GenerationExhausted as exc:
        op = _failing_op(level1_slots, catalog, cfg, seen)
        raise CoverageUnreachable(op, f"operator {op} has no feasible level-1 program: {exc}")

    for level in BENCHMARK_LEVELS:
        slots = [
            SlotSpec(slot=slot_no + i, program_id=f"bench_l{level}_{i:05d}", level=level,
                     mode=BuildMode.DAG.value, seed=derive_seed(seed, "bench", level, i))
            for i in range(BENCHMARK_COUNT_PER_LEVEL)
        ]
        slot_no += len(slots)
        entries += _run_slots(slots, catalog, cfg, out_dir, jobs, seen)

    assert len(seen) - initial_seen == len(entries), "dedup bookkeeping out of sync"
    doc = {
        "dataset": "benchmark",
        "seed": seed,
        "solver_config": _cfg_doc(cfg),
        "quotas": {"1": BENCHMARK_PROGRAMS_PER_OP * len(catalog.compute_ops),
                   **{str(lv): BENCHMARK_COUNT_PER_LEVEL for lv in BENCHMARK_LEVELS}},
        "entries": entries,
    }
    _write_index(out_dir, doc)
    return doc


def _failing_op(slots: list[SlotSpec], catalog, cfg, seen) -> str:
    for spec in slots:
        try:
            generate_program(spec.level, BuildMode(spec.mode), spec.seed, catalog, cfg,
                             op_subset=spec.op_subset, retries=8)
        except GenerationExhausted:
            return spec.op_subset[0] if spec.op_subset else "<unknown>"
    return "<unknown>"


def load_index(dataset_dir: Path) -> dict:
    path = Path(dataset_dir) / "index.json"
    if not path.exists():
        raise DatasetError(f"no index.json under {dataset_dir}")
    return json.loads(path.read_text())
