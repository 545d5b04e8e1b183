"""tensorforge: deterministic synthetic tensor-program pipeline.

Random operator-graph construction, shape-constraint solving, functional
source emission, fragment-search planning, and decoupled-reward math.
"""

from .catalog import Catalog, OperatorSpec, default_catalog, flops_of
from .graph import BuildConfig, BuildMode, ProgramGraph, build, level_of, structural_hash
from .solver import ShapeSolution, SolverConfig, check, emit_constraints, solve
from .oracle import infer, verify_program
from .emitter import EmittedProgram, emit, parse_manifest
from .fragments import extract, reconstruct, run_search, select_best
from .rewards import (
    RewardParams,
    correct_weights,
    drpo_grad_s,
    drpo_loss,
    eval_metrics,
    grpo_advantage,
    grpo_reward,
    grpo_surrogate,
    sft_loss,
    speed_reward,
)
from .datasets import build_benchmark, build_stage, generate_batch, generate_program

__version__ = "0.1.0"
