"""Command-line frontend for the whole pipeline.

Exit codes: 0 success, 1 verification or feasibility failure, 2 usage error,
3 internal error. With --json, standard output carries machine-readable JSON
only; diagnostics go to standard error.
"""

from __future__ import annotations

import argparse
import json
import os
import statistics
import sys
import time
from pathlib import Path

from .catalog import default_catalog
from .datasets import (
    CoverageUnreachable,
    DatasetError,
    GenerationExhausted,
    build_benchmark,
    build_stage,
    derive_seed,
    generate_batch,
    generate_program,
    load_index,
)
from .emitter import (
    EmittedProgram,
    MalformedManifest,
    graph_from_manifest,
    parse_manifest,
    solution_from_manifest,
)
from .fragments import extract, flops_remaining_bench, run_search, statement_count_bench
from .graph import BuildMode
from .oracle import infer, report_to_dict, verify_program
from .rewards import (
    RewardError,
    drpo_grad_s,
    drpo_loss,
    eval_metrics,
    EvalRecord,
    group_from_dict,
    grpo_advantage,
    grpo_reward,
    grpo_surrogate,
    params_from_dict,
    sft_loss,
)
from .solver import Infeasible, SolveTimeout, SolverConfig, check, emit_constraints

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_USAGE = 2
EXIT_INTERNAL = 3


class UsageError(Exception):
    pass


def _fmt17(obj):
    """Floats rendered with 17 significant digits for lossless interchange."""
    if isinstance(obj, float):
        return float(f"{obj:.17g}")
    if isinstance(obj, dict):
        return {k: _fmt17(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_fmt17(v) for v in obj]
    return obj


def _emit(doc: dict, args, human: str | None = None) -> None:
    if args.json:
        print(json.dumps(_fmt17(doc), indent=2, sort_keys=True))
    else:
        print(human if human is not None else json.dumps(_fmt17(doc), indent=2, sort_keys=True))


def _read_config(path: str | None) -> dict:
    """key = value lines; '#' comments; values parsed as int/float/str."""
    if not path:
        return {}
    cfg: dict = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config file: {exc}") from None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip().strip('"')
        for cast in (int, float):
            try:
                cfg[key] = cast(value)
                break
            except ValueError:
                continue
        else:
            cfg[key] = value
    return cfg


def _resolve(args, config: dict, key: str, default):
    flag = getattr(args, key, None)
    if flag is not None:
        return flag
    if key in config:
        return type(default)(config[key]) if default is not None else config[key]
    return default


def _solver_config(args, config: dict) -> SolverConfig:
    return SolverConfig(
        min_flops=int(_resolve(args, config, "min_flops", 10 ** 6)),
        max_flops=int(_resolve(args, config, "max_flops", 10 ** 10)),
        max_size=int(_resolve(args, config, "max_size", 2 ** 26)),
        min_size_tensor=int(_resolve(args, config, "min_size_tensor", 16)),
        time_budget=float(_resolve(args, config, "time_budget", 10.0)),
    )


def _default_seed(args, config: dict) -> int:
    if args.seed is not None:
        return args.seed
    if "seed" in config:
        return int(config["seed"])
    env = os.environ.get("FORGE_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"FORGE_SEED is not an integer: {env!r}") from None
    return 0


def _add_solver_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--min-flops", dest="min_flops", type=int)
    p.add_argument("--max-flops", dest="max_flops", type=int)
    p.add_argument("--max-size", dest="max_size", type=int)
    p.add_argument("--min-size-tensor", dest="min_size_tensor", type=int)
    p.add_argument("--time-budget", dest="time_budget", type=float)


def _load_program(manifest_path: str) -> EmittedProgram:
    path = Path(manifest_path)
    manifest = parse_manifest(path.read_text())
    source_path = path.with_suffix(".py")
    source = source_path.read_text() if source_path.exists() else ""
    return EmittedProgram(source=source, manifest=manifest)


# -- subcommands ---------------------------------------------------------------

def cmd_generate(args, config: dict) -> int:
    if args.count < 1:
        raise UsageError("--count must be >= 1")
    if args.level < 1:
        raise UsageError("--level must be >= 1")
    seed = _default_seed(args, config)
    cfg = _solver_config(args, config)
    mode = BuildMode(args.mode)
    subset = args.ops.split(",") if args.ops else None
    if subset:
        from .catalog import CatalogError

        catalog = default_catalog()
        try:
            for name in subset:
                catalog.lookup(name)
        except CatalogError as exc:
            raise UsageError(str(exc)) from None
    try:
        doc = generate_batch(args.level, args.count, mode, seed, cfg,
                             Path(args.out), jobs=args.jobs, op_subset=subset,
                             dataset=args.name)
    except GenerationExhausted as exc:
        print(f"generation exhausted: {exc}", file=sys.stderr)
        return EXIT_FAIL
    summary = {"dataset": doc["dataset"], "count": len(doc["entries"]),
               "level": args.level, "mode": mode.value, "seed": seed,
               "out": str(args.out)}
    _emit(summary, args, f"wrote {len(doc['entries'])} programs to {args.out}")
    return EXIT_OK


def cmd_verify(args, config: dict) -> int:
    cfg = _solver_config(args, config)
    catalog = default_catalog()
    reports = []
    failed = False
    for manifest_path in args.manifests:
        try:
            program = _load_program(manifest_path)
        except (OSError, MalformedManifest) as exc:
            raise UsageError(f"{manifest_path}: {exc}") from None
        graph = graph_from_manifest(program.manifest)
        solution = solution_from_manifest(program.manifest)
        cs = emit_constraints(graph, catalog)
        violations = [v.to_dict() for v in check(solution, cs, cfg)]
        mismatches = verify_program(graph, catalog, solution)
        ok = not violations and not mismatches
        failed |= not ok
        reports.append({"manifest": str(manifest_path), "ok": ok,
                        "violations": violations, "oracle_mismatches": mismatches})
    doc = {"reports": reports, "ok": not failed}
    _emit(doc, args, "\n".join(
        f"{r['manifest']}: {'ok' if r['ok'] else 'FAILED'}" for r in reports))
    return EXIT_FAIL if failed else EXIT_OK


def cmd_oracle_verify(args, config: dict) -> int:
    catalog = default_catalog()
    failed = False
    reports = []
    for manifest_path in args.manifests:
        try:
            program = _load_program(manifest_path)
        except (OSError, MalformedManifest) as exc:
            raise UsageError(f"{manifest_path}: {exc}") from None
        graph = graph_from_manifest(program.manifest)
        solution = solution_from_manifest(program.manifest)
        create_ids = {ref.edge_id for _, ref in graph.create_statements}
        shapes = {e: solution.edge_shapes[e] for e in create_ids}
        rep = infer(graph, catalog, shapes, solution.node_attrs)
        doc = report_to_dict(rep)
        doc["manifest"] = str(manifest_path)
        mismatches = verify_program(graph, catalog, solution)
        doc["mismatches"] = mismatches
        failed |= bool(mismatches) or not rep.ok
        reports.append(doc)
    _emit({"reports": reports, "ok": not failed}, args,
          "\n".join(f"{r['manifest']}: {r['status']}" for r in reports))
    return EXIT_FAIL if failed else EXIT_OK


def cmd_fragments(args, config: dict) -> int:
    if args.n is not None:
        n = args.n
    elif args.program:
        program = _load_program(args.program)
        n = len(program.manifest["nodes"])
    else:
        raise UsageError("provide --n or a program manifest")
    if n < 1:
        raise UsageError("operator count must be >= 1")
    plan = extract(n, max_len=args.max_len, cap=args.cap)
    doc = {"n": n, "count": len(plan), "cap": args.cap, "max_len": args.max_len,
           "fragments": [{"start": f.start, "len": f.length} for f in plan]}
    _emit(doc, args, f"{len(plan)} fragments for n={n}")
    return EXIT_OK


def cmd_search(args, config: dict) -> int:
    program = _load_program(args.program)
    if not program.source:
        raise UsageError(f"missing source next to {args.program}")
    if args.cost_model == "statements":
        bench = statement_count_bench
    elif args.cost_model == "flops":
        bench = flops_remaining_bench(program)
    else:
        raise UsageError(f"unknown cost model {args.cost_model!r}")
    result = run_search(program, bench=bench, max_len=args.max_len, cap=args.cap)
    log = [{"start": c.fragment.start, "len": c.fragment.length,
            "verified": c.verified, "time": c.measured_time}
           for c in result.candidates]
    doc = {
        "none_verified": result.none_verified,
        "candidates": log,
        "best": None if result.best is None else {
            "start": result.best.fragment.start, "len": result.best.fragment.length,
            "time": result.best.measured_time},
    }
    if result.best is not None and args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        hybrid_path = out / "hybrid.py"
        hybrid_path.write_text(result.best.hybrid_source)
        doc["hybrid"] = str(hybrid_path)
    _emit(doc, args)
    return EXIT_FAIL if result.none_verified else EXIT_OK


def cmd_reward(args, config: dict) -> int:
    try:
        payload = json.loads(Path(args.file).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read rollout file: {exc}") from None
    try:
        params = params_from_dict({**payload.get("params", {}), **_cli_params(args)})
        kl = float(payload.get("kl", args.kl))
        doc: dict = {"loss_kind": args.loss,
                     "params": {"beta": params.beta, "tau": params.tau,
                                "lambda": params.lam, "delta": params.delta,
                                "f_kind": params.f_kind.value, "alpha": params.alpha}}
        if args.loss == "sft":
            values = payload.get("avg_logliks")
            if values is None:
                values = [o["avg_loglik"] for o in payload.get("outputs", [])]
            doc["loss"] = sft_loss([float(v) for v in values])
        elif args.loss == "drpo":
            group = group_from_dict(payload)
            doc["loss"] = drpo_loss(group, kl, params)
            doc["grad_s"] = drpo_grad_s(group, kl, params)
        elif args.loss == "grpo":
            group = group_from_dict(payload)
            rewards = [grpo_reward(o.correct, o.t_torch, o.t_triton,
                                   params.f_kind, params.alpha) for o in group.outputs]
            doc["rewards"] = rewards
            doc["advantages"] = grpo_advantage(rewards)
            ratios = payload.get("token_ratios")
            if ratios:
                doc["surrogate"] = grpo_surrogate(ratios, doc["advantages"],
                                                  args.eps, args.beta_kl, kl)
        else:
            raise UsageError(f"unknown loss {args.loss!r}")
        if "records" in payload:
            records = [EvalRecord(correct=bool(r["correct"]),
                                  speedup=r.get("speedup"))
                       for r in payload["records"]]
            doc["metrics"] = eval_metrics(records).to_dict()
    except RewardError as exc:
        print(f"invalid rollout group: {exc}", file=sys.stderr)
        return EXIT_FAIL
    args.json = True
    _emit(doc, args)
    return EXIT_OK


def _cli_params(args) -> dict:
    out = {}
    for key, name in (("tau", "tau"), ("lam", "lambda"), ("beta", "beta"),
                      ("delta", "delta"), ("f_kind", "f_kind"), ("alpha", "alpha")):
        val = getattr(args, key, None)
        if val is not None:
            out[name] = val
    return out


def cmd_dataset(args, config: dict) -> int:
    seed = _default_seed(args, config)
    cfg = _solver_config(args, config)
    try:
        if args.kind == "stage":
            if args.stage is None:
                raise UsageError("--stage is required for dataset stage")
            doc = build_stage(args.stage, args.scale, seed, cfg, Path(args.out),
                              jobs=args.jobs)
        else:
            training = None
            if args.training_index:
                idx = load_index(Path(args.training_index).parent
                                 if args.training_index.endswith("index.json")
                                 else Path(args.training_index))
                training = {e["structural_hash"] for e in idx["entries"]}
            doc = build_benchmark(seed, cfg, Path(args.out), jobs=args.jobs,
                                  training_hashes=training)
    except CoverageUnreachable as exc:
        print(f"coverage unreachable for operator {exc.operator}: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except GenerationExhausted as exc:
        print(f"generation exhausted: {exc}", file=sys.stderr)
        return EXIT_FAIL
    summary = {"dataset": doc["dataset"], "entries": len(doc["entries"]),
               "seed": seed, "out": str(args.out)}
    _emit(summary, args, f"wrote {len(doc['entries'])} programs to {args.out}")
    return EXIT_OK


def cmd_bench_solver(args, config: dict) -> int:
    if args.trials < 1:
        raise UsageError("--trials must be >= 1")
    seed = _default_seed(args, config)
    cfg = _solver_config(args, config)
    catalog = default_catalog()
    times = []
    for trial in range(args.trials):
        t0 = time.perf_counter()
        generate_program(args.level, BuildMode.DAG if args.level > 1 else BuildMode.CHAIN,
                         derive_seed(seed, "bench-solver", trial), catalog, cfg)
        times.append(time.perf_counter() - t0)
    times_sorted = sorted(times)
    doc = {
        "level": args.level,
        "trials": args.trials,
        "median_s": statistics.median(times_sorted),
        "p95_s": times_sorted[min(len(times_sorted) - 1, int(0.95 * len(times_sorted)))],
        "mean_s": statistics.fmean(times_sorted),
        "min_s": times_sorted[0],
        "max_s": times_sorted[-1],
        "times_s": times,
    }
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "bench_solver.json").write_text(json.dumps(_fmt17(doc), indent=2) + "\n")
    _emit(doc, args,
          f"level {args.level}: median {doc['median_s'] * 1000:.1f} ms, "
          f"p95 {doc['p95_s'] * 1000:.1f} ms over {args.trials} trials")
    return EXIT_OK


def cmd_report(args, config: dict) -> int:
    from .report import write_report

    doc = write_report(Path(args.dataset_dir), Path(args.out),
                       bench_json=Path(args.bench_json) if args.bench_json else None)
    _emit(doc, args, f"report written to {args.out}: {doc['csv']}, "
                     f"{len(doc['figures'])} figures")
    return EXIT_OK


def cmd_catalog(args, config: dict) -> int:
    print(default_catalog().to_json())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tensorforge",
        description="Synthetic tensor-program generation, verification, and search planning")
    parser.add_argument("--json", action="store_true", help="machine-readable output")
    parser.add_argument("--seed", type=int, default=None,
                        help="global seed (default: $FORGE_SEED or 0)")
    parser.add_argument("--config", default=None, help="key = value config file")

    # The global flags are accepted after the subcommand too; SUPPRESS keeps
    # the sub-level copies from clobbering values parsed at the top level.
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--json", action="store_true", default=argparse.SUPPRESS)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--config", default=argparse.SUPPRESS)

    sub = parser.add_subparsers(dest="command", required=True)

    def add_parser(name: str, **kwargs):
        return sub.add_parser(name, parents=[common], **kwargs)

    p = add_parser("generate", help="generate verified programs")
    p.add_argument("--level", type=int, required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--mode", choices=[m.value for m in BuildMode], default="dag")
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--ops", default=None, help="comma-separated operator subset")
    p.add_argument("--name", default="batch", help="dataset name for ids")
    _add_solver_flags(p)
    p.set_defaults(func=cmd_generate)

    p = add_parser("verify", help="re-check program manifests")
    p.add_argument("manifests", nargs="+")
    _add_solver_flags(p)
    p.set_defaults(func=cmd_verify)

    p = add_parser("oracle-verify", help="forward shape inference over manifests")
    p.add_argument("manifests", nargs="+")
    p.set_defaults(func=cmd_oracle_verify)

    p = add_parser("fragments", help="print the fragment plan")
    p.add_argument("--n", type=int, default=None)
    p.add_argument("program", nargs="?", default=None)
    p.add_argument("--cap", type=int, default=1024)
    p.add_argument("--max-len", dest="max_len", type=int, default=5)
    p.set_defaults(func=cmd_fragments)

    p = add_parser("search", help="run fragment search with a cost model")
    p.add_argument("program")
    p.add_argument("--cost-model", dest="cost_model",
                   choices=["statements", "flops"], default="statements")
    p.add_argument("--cap", type=int, default=1024)
    p.add_argument("--max-len", dest="max_len", type=int, default=5)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_search)

    p = add_parser("reward", help="evaluate reward math on a rollout file")
    p.add_argument("--file", required=True)
    p.add_argument("--loss", choices=["drpo", "grpo", "sft"], default="drpo")
    p.add_argument("--tau", type=float, default=None)
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--delta", type=float, default=None)
    p.add_argument("--f-kind", dest="f_kind", choices=["log", "power"], default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--kl", type=float, default=0.0)
    p.add_argument("--eps", type=float, default=0.2)
    p.add_argument("--beta-kl", dest="beta_kl", type=float, default=0.0)
    p.set_defaults(func=cmd_reward)

    p = add_parser("dataset", help="build curriculum stages or the benchmark")
    p.add_argument("kind", choices=["stage", "benchmark"])
    p.add_argument("--stage", type=int, default=None)
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--training-index", dest="training_index", default=None)
    _add_solver_flags(p)
    p.set_defaults(func=cmd_dataset)

    p = add_parser("bench-solver", help="time end-to-end program solving")
    p.add_argument("--level", type=int, required=True)
    p.add_argument("--trials", type=int, required=True)
    p.add_argument("--out", default=None)
    _add_solver_flags(p)
    p.set_defaults(func=cmd_bench_solver)

    p = add_parser("report", help="render CSV + figures for a dataset")
    p.add_argument("dataset_dir")
    p.add_argument("--out", required=True)
    p.add_argument("--bench-json", dest="bench_json", default=None)
    p.set_defaults(func=cmd_report)

    p = add_parser("catalog", help="print the operator catalog as JSON")
    p.set_defaults(func=cmd_catalog)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = _read_config(args.config)
        return args.func(args, config)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DatasetError, MalformedManifest) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (Infeasible, SolveTimeout) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except BrokenPipeError:
        return EXIT_OK
    except Exception as exc:  # pragma: no cover - internal errors
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
