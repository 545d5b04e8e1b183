import random

import pytest

from tensorforge.catalog import default_catalog
from tensorforge.graph import BuildConfig, BuildMode, build
from tensorforge.solver import SolverConfig, emit_constraints, solve


@pytest.fixture(scope="session")
def catalog():
    return default_catalog()


@pytest.fixture(scope="session")
def solver_cfg():
    return SolverConfig()


# Permissive budgets for tests that pin shapes directly.
PIN_CFG = SolverConfig(min_flops=0, max_flops=10 ** 18, max_size=2 ** 50,
                       min_size_tensor=1)


def build_graph(catalog, level, ops=None, mode=BuildMode.CHAIN, seed=0):
    subset = frozenset(ops) if ops else None
    rng = random.Random(seed)
    return build(BuildConfig(level=level, mode=mode, op_subset=subset, seed=seed),
                 catalog, rng), rng


def solve_pinned(catalog, graph, pins, seed=0, cfg=None):
    cs = emit_constraints(graph, catalog, pins=pins)
    return solve(cs, cfg or PIN_CFG, random.Random(seed)), cs
