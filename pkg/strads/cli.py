#!/usr/bin/env python
# coding=utf-8

# Copyright 2026 The STRADS contributors. All rights reserved.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
import argparse
import json
import sys
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

from .baselines import SCHEDULER_MAPPING
from .config import APP_SCHEDULERS, IMPORTANCE_FORMS, RunSpec, env_seed, load_preset
from .data_io import (
    LassoDataset,
    SparseRatings,
    gen_synthetic_lasso,
    gen_synthetic_ratings,
    load_lasso_csv,
    load_ratings_mtx,
    write_lasso_csv,
    write_ratings_mtx,
    write_trace,
)
from .lasso import LassoApplication, LassoStopRule
from .mf import MfSolver
from .monitoring import LogLevel, RunLogger
from .runtime import StradsRuntime
from .theory import run_property_suite
from .trace import RunTrace
from .transport import WorkerPool
from .utils import (
    DataFormatError,
    PropertyCheckError,
    StradsConfigError,
    StradsError,
    StradsIOError,
    git_blob_hash,
    make_json_serializable,
    parse_seed_range,
)


__all__ = ["RunOutcome", "execute_spec", "compare_specs", "resolve_spec", "main"]


MANIFEST_SUFFIX = ".manifest.json"


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--app", choices=sorted(APP_SCHEDULERS), default="lasso", help="Application to run")
    parser.add_argument("--workers", type=int, help="Number of parallel workers P")
    parser.add_argument("--candidates", type=int, help="Candidate pool size P' drawn every round")
    parser.add_argument("--sched-threads", type=int, dest="scheduler_threads", help="Scheduler threads S")
    parser.add_argument("--rho", type=float, help="Largest dependency allowed within one round")
    parser.add_argument("--eta", type=float, help="Floor added to every importance weight")
    parser.add_argument("--lambda", type=float, dest="lam", help="L1 strength (lasso) or Frobenius strength (mf)")
    parser.add_argument("--rank", type=int, help="Factor rank K (mf)")
    parser.add_argument("--seed", type=int, help="Seed for the run; STRADS_SEED overrides it")
    parser.add_argument("--max-iter", type=int, help="Round budget (epochs for mf)")
    parser.add_argument("--tol", type=float, help="Convergence tolerance")
    parser.add_argument("--importance", choices=IMPORTANCE_FORMS, help="Lasso importance form")
    parser.add_argument("--clock", choices=["wall", "simulated"], help="Trace time column source")
    parser.add_argument("--data", type=str, help="X CSV (lasso) or ratings file (mf); synthetic data when absent")
    parser.add_argument("--y", type=str, help="Response file (lasso)")


def parse_arguments(argv: list[str] | None = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(
        prog="strads", description="Structure-aware scheduling for parallel coordinate descent"
    )
    parser.add_argument(
        "--verbosity-level",
        type=int,
        default=1,
        choices=[-1, 0, 1, 2],
        help="The verbosity level, as an int in [-1, 0, 1, 2].",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    gen = commands.add_parser("gen-data", help="Generate a synthetic dataset")
    kinds = gen.add_subparsers(dest="kind", required=True)
    lasso = kinds.add_parser("lasso", help="Correlated-block regression data")
    lasso.add_argument("--n", type=int, required=True, help="Samples N")
    lasso.add_argument("--j", type=int, required=True, help="Features J")
    lasso.add_argument("--nonzero", type=int, help="Nonzero true coefficients")
    lasso.add_argument("--block", type=int, help="Columns sharing one latent factor")
    lasso.add_argument("--corr", type=float, help="Within-block correlation")
    lasso.add_argument("--noise", type=float, help="Noise standard deviation")
    lasso.add_argument("--seed", type=int)
    lasso.add_argument("--out", type=str, default=".", help="Output directory")
    mf = kinds.add_parser("mf", help="Power-law ratings data")
    mf.add_argument("--n", type=int, required=True, help="Rows (users)")
    mf.add_argument("--m", type=int, required=True, help="Columns (items)")
    mf.add_argument("--rank", type=int)
    mf.add_argument("--zipf", type=float, help="Item popularity exponent")
    mf.add_argument("--nnz", type=int, help="Observed entries")
    mf.add_argument("--noise", type=float)
    mf.add_argument("--seed", type=int)
    mf.add_argument("--out", type=str, default=".", help="Output directory")

    run = commands.add_parser("run", help="Run one scheduler and write its trace")
    _add_config_flags(run)
    run.add_argument("--scheduler", type=str, help="sap|static|random|cyclic (lasso) or balanced|uniform (mf)")
    run.add_argument("--out", type=str, default="trace.csv", help="Trace CSV path")
    run.add_argument("--manifest", type=str, help="Replay the run recorded in this manifest")

    compare = commands.add_parser("compare", help="Run several schedulers over several seeds on one dataset")
    _add_config_flags(compare)
    compare.add_argument("--schedulers", nargs="+", help="Schedulers to compare")
    compare.add_argument("--manifests", nargs="+", help="Compare the runs recorded in these manifests")
    compare.add_argument("--seeds", type=str, default="1..5", help="Seed list, e.g. '1..5' or '1,4,9'")
    compare.add_argument("--grid-every", type=int, default=100, help="Round spacing of the comparison grid")
    compare.add_argument("--out", type=str, default="comparison.csv", help="Comparison CSV path")

    theory = commands.add_parser("check-theory", help="Run the numerical property suite")
    theory.add_argument("--seeds", type=str, default="1..20", help="Seed list, e.g. '1..20'")
    theory.add_argument("--vars", type=int, default=8, help="Variables 2J of the duplicated form")
    theory.add_argument("--workers", type=int, default=2, help="Parallel updates per round P")
    theory.add_argument("--rho", type=float, default=5e-4)
    theory.add_argument("--lambda", type=float, dest="lam", default=0.05)
    theory.add_argument("--trials", type=int, default=1000, help="Random perturbations per instance")
    return parser.parse_args(argv)


def resolve_spec(args: argparse.Namespace, scheduler: str | None = None) -> RunSpec:
    """Preset, then command-line flags, then `STRADS_SEED`."""
    overrides = {
        name: getattr(args, name, None)
        for name in (
            "workers",
            "candidates",
            "scheduler_threads",
            "rho",
            "eta",
            "rank",
            "seed",
            "max_iter",
            "tol",
            "importance",
            "clock",
        )
    }
    overrides["lambda_mf" if args.app == "mf" else "lam"] = getattr(args, "lam", None)
    spec = RunSpec.from_preset(args.app, scheduler or getattr(args, "scheduler", None), **overrides)
    config = spec.config
    if args.app == "mf" and getattr(args, "candidates", None) is None:
        config = config.with_overrides(candidates=max(config.candidates, config.workers))
    seed = env_seed()
    if seed is not None:
        config = config.with_overrides(seed=seed)
    spec = replace(
        spec, config=config, data=getattr(args, "data", None), y=getattr(args, "y", None), out=getattr(args, "out", None)
    )
    return spec.validate()


def generate_lasso(params: dict[str, Any]) -> tuple[LassoDataset, np.ndarray]:
    return gen_synthetic_lasso(
        n=params["n"],
        j=params["j"],
        k_nonzero=params["nonzero"],
        block_size=params["block"],
        intra_corr=params["corr"],
        noise_sd=params["noise"],
        seed=params["seed"],
    )


def generate_ratings(params: dict[str, Any]) -> SparseRatings:
    return gen_synthetic_ratings(
        n=params["n"],
        m=params["m"],
        rank=params["rank"],
        zipf_exponent=params["zipf"],
        target_nnz=params["nnz"],
        noise_sd=params["noise"],
        seed=params["seed"],
    )


def load_data(spec: RunSpec) -> LassoDataset | SparseRatings:
    if spec.app == "lasso":
        if spec.data is not None:
            return load_lasso_csv(spec.data, spec.y)
        return generate_lasso(spec.generator)[0]
    if spec.data is not None:
        return load_ratings_mtx(spec.data)
    return generate_ratings(spec.generator)


def input_hashes(spec: RunSpec) -> dict[str, str]:
    return {path: git_blob_hash(path) for path in (spec.data, spec.y) if path is not None}


@dataclass
class RunOutcome:
    """A finished run: its trace, wall time and the run-specific details that go into the manifest."""

    spec: RunSpec
    trace: RunTrace
    elapsed_s: float
    details: dict[str, Any] = field(default_factory=dict)

    def summary_line(self) -> str:
        final = self.trace.final_objective
        final_text = "nan" if final is None else f"{final:.12g}"
        return (
            f"scheduler={self.spec.scheduler} final_objective={final_text} "
            f"rounds={len(self.trace)} wallclock_s={self.elapsed_s:.3f}"
        )


def execute_spec(spec: RunSpec, data: LassoDataset | SparseRatings, logger: RunLogger) -> RunOutcome:
    """Runs one spec on already-loaded data."""
    cfg = spec.config
    start = time.perf_counter()
    if spec.app == "lasso":
        app = LassoApplication.from_dataset(data, cfg)
        stop = LassoStopRule(app, cfg)
        runtime = StradsRuntime(app, SCHEDULER_MAPPING[spec.scheduler], cfg, logger=logger)
        with WorkerPool(cfg.workers) as pool:
            trace = runtime.run(pool, stop=stop)
        details = {
            "stop_reason": stop.reason or "max_iter",
            "kkt_violation": stop.last_kkt,
            "rho_pairs_checked": runtime.rho_audit.pairs_checked,
            "rho_violations": runtime.rho_audit.violations,
            "dependency_calls": runtime.dependency_audit.calls,
            "cross_thread_dependency_calls": runtime.dependency_audit.cross_thread_calls,
        }
    else:
        solver = MfSolver(data, cfg, balanced=spec.scheduler == "balanced", logger=logger)
        trace = solver.run()
        details = {"critical_path_cost": [record.critical_path_cost for record in trace.records]}
    return RunOutcome(spec=spec, trace=trace, elapsed_s=time.perf_counter() - start, details=details)


def manifest_path(trace_path: str | Path) -> Path:
    trace_path = Path(trace_path)
    return trace_path.with_name(trace_path.stem + MANIFEST_SUFFIX)


def write_manifest(path: str | Path, command: str, payload: dict[str, Any]) -> None:
    from . import __version__

    document = {"command": command, "version": __version__, **payload}
    try:
        Path(path).write_text(json.dumps(make_json_serializable(document), indent=2, sort_keys=True) + "\n")
    except OSError as e:
        raise StradsIOError(f"cannot write manifest {path}: {e}")


def read_manifest(path: str | Path) -> dict[str, Any]:
    try:
        document = json.loads(Path(path).read_text())
    except OSError as e:
        raise StradsIOError(f"cannot read manifest {path}: {e}")
    except json.JSONDecodeError as e:
        raise DataFormatError(f"manifest {path} is not valid JSON: {e}")
    if "spec" not in document:
        raise DataFormatError(f"manifest {path} holds no run spec")
    return document


def spec_from_manifest(path: str | Path) -> RunSpec:
    """Rebuilds a recorded spec and checks that its input files are unchanged."""
    document = read_manifest(path)
    spec = RunSpec.from_dict(document["spec"]).validate()
    for input_path, recorded in (document.get("inputs") or {}).items():
        if git_blob_hash(input_path) != recorded:
            raise DataFormatError(f"input {input_path} changed since the manifest was written")
    return spec


def cmd_gen_data(args: argparse.Namespace, logger: RunLogger) -> int:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise StradsIOError(f"cannot create output directory {out}: {e}")
    params = dict(load_preset(args.kind).get("generator") or {})
    params.update({name: value for name, value in vars(args).items() if name in params and value is not None})
    if args.kind == "lasso":
        dataset, true_beta = generate_lasso(params)
        files = {"X": out / "X.csv", "y": out / "y.csv", "beta_true": out / "beta_true.csv"}
        write_lasso_csv(dataset, files["X"], files["y"])
        try:
            pd.DataFrame(true_beta).to_csv(files["beta_true"], header=False, index=False, float_format="%.17g")
        except OSError as e:
            raise StradsIOError(f"cannot write {files['beta_true']}: {e}")
    else:
        files = {"ratings": out / "ratings.mtx"}
        write_ratings_mtx(generate_ratings(params), files["ratings"])
    write_manifest(
        out / "manifest.json",
        "gen-data",
        {
            "kind": args.kind,
            "seed": params["seed"],
            "generator": params,
            "outputs": {name: {"path": str(path), "sha1": git_blob_hash(path)} for name, path in files.items()},
        },
    )
    logger.log(f"wrote {', '.join(str(p) for p in files.values())}", level=LogLevel.INFO)
    return 0


def cmd_run(args: argparse.Namespace, logger: RunLogger) -> int:
    if args.manifest is not None:
        spec = spec_from_manifest(args.manifest)
        if args.out != "trace.csv":
            spec.out = args.out
        spec.out = spec.out or "trace.csv"
    else:
        spec = resolve_spec(args)
    data = load_data(spec)
    try:
        outcome = execute_spec(spec, data, logger)
    except StradsError as e:
        if e.partial_trace is not None:
            write_trace(spec.out, e.partial_trace)
        raise
    write_trace(spec.out, outcome.trace.records)
    if logger.level >= LogLevel.DEBUG:
        outcome.trace.replay(logger, every=max(len(outcome.trace) // 20, 1))
    write_manifest(
        manifest_path(spec.out),
        "run",
        {"spec": spec.dict(), "seed": spec.config.seed, "inputs": input_hashes(spec), "result": outcome.details},
    )
    print(outcome.summary_line())
    return 0


def _grid_rows(outcome: RunOutcome, seed: int, grid_every: int, budget: int) -> list[dict[str, Any]]:
    """Trace sampled every `grid_every` rounds up to `budget`, carrying the last value past an early stop."""
    records = outcome.trace.records
    rows = []
    for point in sorted(set(range(grid_every, budget + 1, grid_every)) | {budget}):
        record = records[min(point, len(records)) - 1]
        rows.append(
            {
                "scheduler": outcome.spec.scheduler,
                "seed": seed,
                "iter": point,
                "objective": record.objective,
                "wallclock_s": record.wallclock_s,
                "critical_path_cost": records[point - 1].critical_path_cost if point <= len(records) else 0.0,
            }
        )
    return rows


def compare_specs(
    specs: list[RunSpec], seeds: list[int], grid_every: int, logger: RunLogger
) -> tuple[pd.DataFrame, pd.DataFrame]:
    """Runs every spec once per seed on their shared dataset.

    Returns:
        `tuple[pd.DataFrame, pd.DataFrame]`: Per-run grid rows, and the per-scheduler medians over seeds.
    """
    if len(specs) < 2:
        raise StradsConfigError("compare needs at least two schedulers")
    if len({spec.app for spec in specs}) != 1 or len({spec.dataset_key() for spec in specs}) != 1:
        raise StradsConfigError("compared runs must share one app and one dataset")
    if grid_every < 1:
        raise StradsConfigError(f"--grid-every must be >= 1, got {grid_every}")
    data = load_data(specs[0])
    rows = []
    for spec in specs:
        for seed in seeds:
            seeded = RunSpec.from_dict({**spec.dict(), "config": {**spec.config.dict(), "seed": seed}}).validate()
            outcome = execute_spec(seeded, data, logger)
            rows.extend(_grid_rows(outcome, seed, grid_every, seeded.config.max_iter))
            logger.log(outcome.summary_line() + f" seed={seed}", level=LogLevel.INFO)
    grid = pd.DataFrame(rows)
    medians = (
        grid.groupby(["scheduler", "iter"], sort=False)[["objective", "wallclock_s", "critical_path_cost"]]
        .median()
        .reset_index()
    )
    return grid, medians


def cmd_compare(args: argparse.Namespace, logger: RunLogger) -> int:
    seeds = parse_seed_range(args.seeds)
    if args.manifests:
        specs = [spec_from_manifest(path) for path in args.manifests]
    else:
        if not args.schedulers:
            raise StradsConfigError("compare needs --schedulers or --manifests")
        specs = [resolve_spec(args, scheduler=name) for name in args.schedulers]
    grid, medians = compare_specs(specs, seeds, args.grid_every, logger)
    median_rows = medians.assign(seed="median")[grid.columns]
    table = pd.concat([grid.astype({"seed": object}), median_rows], ignore_index=True)
    try:
        table.to_csv(args.out, index=False, lineterminator="\n")
    except OSError as e:
        raise StradsIOError(f"cannot write comparison to {args.out}: {e}")
    final = medians.groupby("scheduler", sort=False).tail(1)
    logger.log_table(
        "Median over seeds at the round budget",
        ["scheduler", "iter", "objective", "critical_path_cost"],
        final[["scheduler", "iter", "objective", "critical_path_cost"]].values.tolist(),
    )
    for row in final.itertuples():
        print(f"scheduler={row.scheduler} median_final_objective={row.objective:.12g} rounds={row.iter}")
    write_manifest(
        manifest_path(args.out),
        "compare",
        {"specs": [spec.dict() for spec in specs], "seeds": seeds, "inputs": input_hashes(specs[0])},
    )
    return 0


def cmd_check_theory(args: argparse.Namespace, logger: RunLogger) -> int:
    seeds = parse_seed_range(args.seeds)
    if args.vars < 2 or args.vars % 2:
        raise StradsConfigError(f"--vars must be a positive even number, got {args.vars}")
    results = run_property_suite(
        seeds, n_vars=args.vars, workers=args.workers, rho=args.rho, trials=args.trials, lam=args.lam, logger=logger
    )
    for result in results:
        print(result.line())
    failed = [result for result in results if result.required and not result.passed]
    if failed:
        names = ", ".join(
            f"{result.name} ({'aggregate' if result.seed is None else f'seed {result.seed}'})" for result in failed
        )
        raise PropertyCheckError(f"property check failed: {names}")
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "run": cmd_run,
    "compare": cmd_compare,
    "check-theory": cmd_check_theory,
}


def main(argv: list[str] | None = None) -> int:
    args = parse_arguments(argv)
    logger = RunLogger(level=LogLevel(args.verbosity_level))
    try:
        return COMMANDS[args.command](args, logger)
    except StradsError as e:
        logger.log_error(f"error: {e.message}")
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
