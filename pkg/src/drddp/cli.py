"""Command-line entry point.

Subcommands: solve, tune, eval, bench. Each reads one TOML config file,
writes a manifest (before any result file), then CSV artifacts. Exit codes:
0 success, 2 config error, 3 non-convergence, 4 numerical failure.

Wall-clock measurements go to separate timing files so every other CSV is
bit-identical across reruns of the same config.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Optional, Sequence

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import __version__
from .backward import BackwardPassError
from .benchmarks import BENCHMARKS, BenchmarkInstance, make_benchmark
from .disturbance import draw_dataset, save_dataset
from .evaluation import loglog_slope, out_of_sample, solve_controller, timing_sweep
from .forward import LineSearchConfig
from .rng import substream
from .solver import (
    GameCurvatureError,
    Solution,
    SolverConfig,
    SolverNumericalError,
    solve,
    tune_lambda,
)

log = logging.getLogger("drddp")

CONTROLLERS = ("drddp", "box", "minimax")


class ConfigError(Exception):
    pass


# --- config schema -----------------------------------------------------------

_BOOL, _INT, _FLOAT, _STR, _LIST = "bool", "int", "float", "str", "list"

_SCHEMA: Dict[str, Optional[Dict[str, str]]] = {
    "run": {"benchmark": _STR, "controller": _STR, "seed": _INT, "out": _STR},
    "benchmark": None,  # free-form, validated by the benchmark constructor
    "solver": {
        "lam": _FLOAT,
        "theta": _FLOAT,
        "max_iters": _INT,
        "cost_tolerance": _FLOAT,
        "gradient_tolerance": _FLOAT,
        "gauss_newton": _BOOL,
        "mu_init": _FLOAT,
        "mu_factor": _FLOAT,
        "mu_max": _FLOAT,
        "mu_min": _FLOAT,
    },
    "line_search": {
        "alpha0": _FLOAT,
        "backtrack": _FLOAT,
        "max_trials": _INT,
        "sufficient_decrease": _FLOAT,
        "model_overshoot_cap": _FLOAT,
    },
    "minimax": {"gamma_w": _FLOAT},
    "tune": {"lambda_grid": _LIST, "sup_runs": _INT},
    "eval": {"runs": _INT, "controllers": _LIST, "parallel": _INT},
    "bench": {"sizes": _LIST, "iters": _INT, "lam": _FLOAT, "size_param": _STR},
}


def _check_type(section: str, key: str, value, kind: str) -> None:
    ok = {
        _BOOL: lambda v: isinstance(v, bool),
        _INT: lambda v: isinstance(v, int) and not isinstance(v, bool),
        _FLOAT: lambda v: isinstance(v, (int, float)) and not isinstance(v, bool),
        _STR: lambda v: isinstance(v, str),
        _LIST: lambda v: isinstance(v, list),
    }[kind]
    if not ok(value):
        raise ConfigError(f"{section}.{key}: expected {kind}, got {type(value).__name__}")


def load_config(path: str) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(p, "rb") as fh:
            cfg = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    for section, content in cfg.items():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        if not isinstance(content, dict):
            raise ConfigError(f"[{section}] must be a table")
        keys = _SCHEMA[section]
        if keys is None:
            continue
        for key, value in content.items():
            if key not in keys:
                raise ConfigError(f"unknown key {section}.{key}")
            _check_type(section, key, value, keys[key])
    run = cfg.setdefault("run", {})
    if "benchmark" not in run:
        raise ConfigError("run.benchmark is required")
    if run["benchmark"] not in BENCHMARKS:
        raise ConfigError(
            f"run.benchmark: unknown benchmark {run['benchmark']!r}; choices: {sorted(BENCHMARKS)}"
        )
    run.setdefault("controller", "drddp")
    run.setdefault("seed", 0)
    run.setdefault("out", "results")
    if run["controller"] not in CONTROLLERS:
        raise ConfigError(f"run.controller must be one of {CONTROLLERS}")
    for name in cfg.get("eval", {}).get("controllers", []):
        if name not in CONTROLLERS:
            raise ConfigError(f"eval.controllers: unknown controller {name!r}")
    return cfg


def build_solver_config(cfg: dict, default_lam: float) -> SolverConfig:
    s = cfg.get("solver", {})
    ls = cfg.get("line_search", {})
    try:
        return SolverConfig(
            lam=float(s.get("lam", default_lam)),
            theta=float(s.get("theta", 0.1)),
            max_iters=int(s.get("max_iters", 200)),
            cost_tolerance=float(s.get("cost_tolerance", 1e-6)),
            gradient_tolerance=float(s.get("gradient_tolerance", 1e-6)),
            gauss_newton=bool(s.get("gauss_newton", False)),
            line_search=LineSearchConfig(
                alpha0=float(ls.get("alpha0", 1.0)),
                backtrack=float(ls.get("backtrack", 0.5)),
                max_trials=int(ls.get("max_trials", 10)),
                sufficient_decrease=float(ls.get("sufficient_decrease", 1e-4)),
                model_overshoot_cap=float(ls.get("model_overshoot_cap", 2.0)),
            ),
            mu_init=float(s.get("mu_init", 1.0)),
            mu_factor=float(s.get("mu_factor", 10.0)),
            mu_max=float(s.get("mu_max", 1e10)),
            mu_min=float(s.get("mu_min", 1e-8)),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def build_benchmark(cfg: dict) -> BenchmarkInstance:
    run = cfg["run"]
    try:
        return make_benchmark(run["benchmark"], cfg.get("benchmark"), seed=run["seed"])
    except (ValueError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc


# --- artifacts ----------------------------------------------------------------

def _fmt(value) -> str:
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    lines = [",".join(header)]
    lines.extend(",".join(_fmt(v) for v in row) for row in rows)
    path.write_text("\n".join(lines) + "\n")


def write_manifest(out_dir: Path, command: str, cfg: dict, artifacts: List[str]) -> None:
    """Written before any result file so a crashed run still records its setup."""
    payload = {"command": command, "config": cfg, "version": __version__}
    digest = hashlib.sha256(
        json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()
    ).hexdigest()
    manifest = {
        "command": command,
        "created": datetime.now(timezone.utc).isoformat(),
        "version": __version__,
        "content_hash": digest,
        "config": cfg,
        "artifacts": sorted(artifacts),
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def write_traj_csv(path: Path, solution: Solution) -> None:
    x, u, w = solution.nominal.x, solution.nominal.u, solution.nominal.w
    n_x, n_u, n_w = x.shape[1], u.shape[1], w.shape[1]
    header = (
        ["t"]
        + [f"x_{j}" for j in range(n_x)]
        + [f"u_{j}" for j in range(n_u)]
        + [f"w_{j}" for j in range(n_w)]
    )
    rows = []
    for t in range(x.shape[0]):
        row: List = [t] + [repr(float(v)) for v in x[t]]
        if t < u.shape[0]:
            row += [repr(float(v)) for v in u[t]] + [repr(float(v)) for v in w[t]]
        else:
            row += [""] * (n_u + n_w)
        rows.append(row)
    write_csv(path, header, rows)


def write_iteration_csvs(out_dir: Path, solution: Solution) -> None:
    write_csv(
        out_dir / "iters.csv",
        ["iteration", "cost_penalized", "cost_nominal", "alpha", "mu", "accepted"],
        [
            [r.iteration, r.cost_penalized, r.cost_nominal, r.alpha, r.mu, int(r.accepted)]
            for r in solution.records
        ],
    )
    write_csv(
        out_dir / "timing.csv",
        ["iteration", "wall_time"],
        [[r.iteration, r.wall_time] for r in solution.records],
    )


# --- controllers --------------------------------------------------------------

def _solve_controller(name: str, inst: BenchmarkInstance, ds, cfg: SolverConfig, seed: int, gamma_w: Optional[float]):
    try:
        return solve_controller(name, inst, ds, cfg, seed, gamma_w=gamma_w)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _prepare(cfg: dict, out_dir: Path):
    inst = build_benchmark(cfg)
    solver_cfg = build_solver_config(cfg, inst.default_lam)
    seed = cfg["run"]["seed"]
    ds = draw_dataset(
        inst.true_dist, inst.model.dims.horizon, inst.n_samples, substream(seed, "dataset")
    )
    out_dir.mkdir(parents=True, exist_ok=True)
    return inst, solver_cfg, seed, ds


# --- commands -----------------------------------------------------------------

def cmd_solve(cfg: dict, out_dir: Path) -> int:
    inst, solver_cfg, seed, ds = _prepare(cfg, out_dir)
    write_manifest(out_dir, "solve", cfg, ["traj.csv", "iters.csv", "timing.csv", "dataset.csv"])
    save_dataset(ds, out_dir / "dataset.csv")
    controller = cfg["run"]["controller"]
    gamma_w = cfg.get("minimax", {}).get("gamma_w")
    solution = _solve_controller(controller, inst, ds, solver_cfg, seed, gamma_w)
    write_traj_csv(out_dir / "traj.csv", solution)
    write_iteration_csvs(out_dir, solution)
    log.info(
        "%s finished: converged=%s iterations=%d J=%.6g",
        controller,
        solution.converged,
        solution.iterations,
        solution.final_cost,
    )
    print(f"{controller}: converged={solution.converged} J_penalized={solution.final_cost!r}")
    return 0 if solution.converged else 3


def cmd_tune(cfg: dict, out_dir: Path) -> int:
    if cfg["run"]["controller"] != "drddp":
        raise ConfigError("tune only applies to the drddp controller")
    tune_cfg = cfg.get("tune", {})
    if "lambda_grid" not in tune_cfg:
        raise ConfigError("tune.lambda_grid is required")
    grid = tune_cfg["lambda_grid"]
    if not grid or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in grid):
        raise ConfigError("tune.lambda_grid must be a non-empty list of numbers")
    inst, solver_cfg, seed, ds = _prepare(cfg, out_dir)
    write_manifest(
        out_dir, "tune", cfg, ["bounds.csv", "traj.csv", "iters.csv", "timing.csv", "dataset.csv"]
    )
    save_dataset(ds, out_dir / "dataset.csv")
    try:
        result = tune_lambda(
            inst.model,
            inst.x0,
            ds,
            solver_cfg,
            grid,
            eval_runs=int(tune_cfg.get("sup_runs", 100)),
            seed=seed,
        )
    except SolverNumericalError as exc:
        log.error("tuning failed: %s", exc)
        write_csv(out_dir / "bounds.csv", ["lambda", "penalty_term", "sup_J_lambda_est", "bound"], [])
        print(f"tune: no candidate converged ({exc})", file=sys.stderr)
        return 3
    write_csv(
        out_dir / "bounds.csv",
        ["lambda", "penalty_term", "sup_J_lambda_est", "bound"],
        [[r.lam, r.penalty_term, r.sup_estimate, r.bound] for r in result.rows],
    )
    write_traj_csv(out_dir / "traj.csv", result.solution)
    write_iteration_csvs(out_dir, result.solution)
    print(f"tune: selected lambda={result.lam!r}")
    return 0


def cmd_eval(cfg: dict, out_dir: Path) -> int:
    inst, solver_cfg, seed, ds = _prepare(cfg, out_dir)
    eval_cfg = cfg.get("eval", {})
    controllers = list(eval_cfg.get("controllers", list(CONTROLLERS)))
    runs = int(eval_cfg.get("runs", 200))
    if runs < 1:
        raise ConfigError("eval.runs must be >= 1")
    if int(eval_cfg.get("parallel", 1)) > 1:
        log.info("eval.parallel > 1 requested; runs execute serially in this build")
    write_manifest(
        out_dir, "eval", cfg, ["eval.csv", "eval_summary.csv", "timing_eval.csv", "dataset.csv"]
    )
    save_dataset(ds, out_dir / "dataset.csv")
    gamma_w = cfg.get("minimax", {}).get("gamma_w")
    solutions: Dict[str, Solution] = {}
    iter_times: Dict[str, float] = {}
    for name in controllers:
        sol = _solve_controller(name, inst, ds, solver_cfg, seed, gamma_w)
        if not sol.converged:
            log.warning("%s did not converge in %d iterations", name, sol.iterations)
        solutions[name] = sol
        times = [r.wall_time for r in sol.records]
        iter_times[name] = sum(times) / len(times) if times else 0.0
    report = out_of_sample(inst.model, solutions, inst.true_dist, runs, seed, collision=inst.collision)
    write_csv(
        out_dir / "eval.csv",
        ["controller", "run", "cost", "collided"],
        [[r.controller, r.run, r.cost, int(r.collided)] for r in report.rows],
    )
    write_csv(
        out_dir / "eval_summary.csv",
        ["controller", "runs", "mean_cost", "se_cost", "collision_rate", "n_diverged"],
        [
            [s.controller, s.runs, s.mean_cost, s.se_cost, s.collision_rate, s.n_diverged]
            for s in report.summaries.values()
        ],
    )
    write_csv(
        out_dir / "timing_eval.csv",
        ["controller", "iter_time_mean"],
        [[name, iter_times[name]] for name in controllers],
    )
    for s in report.summaries.values():
        print(
            f"{s.controller}: mean_cost={s.mean_cost:.6g} se={s.se_cost:.3g} "
            f"collision_rate={s.collision_rate:.3g} diverged={s.n_diverged}"
        )
    return 0


def cmd_bench(cfg: dict, out_dir: Path) -> int:
    bench_cfg = cfg.get("bench", {})
    sizes = bench_cfg.get("sizes", [4, 8, 16, 32, 64])
    if not sizes or not all(isinstance(v, int) and not isinstance(v, bool) and v > 0 for v in sizes):
        raise ConfigError("bench.sizes must be a non-empty list of positive integers")
    size_param = bench_cfg.get("size_param", "n_oscillators")
    run = cfg["run"]
    base_params = dict(cfg.get("benchmark", {}))
    out_dir.mkdir(parents=True, exist_ok=True)
    write_manifest(out_dir, "bench", cfg, ["timing.csv"])

    def make_instance(size: int, seed: int) -> BenchmarkInstance:
        params = dict(base_params)
        params[size_param] = size
        try:
            return make_benchmark(run["benchmark"], params, seed=seed)
        except (ValueError, KeyError) as exc:
            raise ConfigError(str(exc)) from exc

    rows = timing_sweep(
        make_instance,
        sizes,
        seed=run["seed"],
        iters=int(bench_cfg.get("iters", 3)),
        lam=bench_cfg.get("lam"),
    )
    write_csv(
        out_dir / "timing.csv",
        ["size", "iter_time_mean", "iter_time_std"],
        [[r.size, r.iter_time_mean, r.iter_time_std] for r in rows],
    )
    slope = loglog_slope([r.size for r in rows], [r.iter_time_mean for r in rows])
    print(f"bench: sizes={list(sizes)} loglog_slope={slope:.3f}")
    return 0


# --- entry point ---------------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="drddp", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("solve", "tune", "eval", "bench"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="TOML config file")
        p.add_argument("--out", help="output directory (overrides run.out)")
        p.add_argument("--seed", type=int, help="root seed (overrides run.seed)")
        p.add_argument("--controller", choices=CONTROLLERS, help="controller (overrides config)")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    level = os.environ.get("DRDDP_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(name)s %(message)s")
    args = _parser().parse_args(argv)
    handlers = {"solve": cmd_solve, "tune": cmd_tune, "eval": cmd_eval, "bench": cmd_bench}
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg["run"]["seed"] = args.seed
        if args.controller is not None:
            cfg["run"]["controller"] = args.controller
            if args.command == "eval":
                cfg.setdefault("eval", {})["controllers"] = [args.controller]
        if args.out is not None:
            cfg["run"]["out"] = args.out
        return handlers[args.command](cfg, Path(cfg["run"]["out"]))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (SolverNumericalError, GameCurvatureError, BackwardPassError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
