"""Out-of-sample evaluation of solved policies.

Controllers are compared on shared disturbance draws: run r uses the
substream ("evaluation", r), so cost differences between controllers are
paired rather than washed out by sampling noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .baselines import pick_minimax_gamma, solve_box_ddp, solve_minimax_ddp
from .disturbance import DisturbanceDataset, TrueDistribution, draw_dataset
from .forward import DIVERGENCE_GUARD
from .problem import OcpModel
from .rng import substream
from .solver import Solution, SolverConfig, solve

Array = np.ndarray


@dataclass
class EvalRow:
    controller: str
    run: int
    cost: float
    collided: bool
    diverged: bool


@dataclass
class ControllerSummary:
    controller: str
    runs: int
    mean_cost: float
    se_cost: float
    collision_rate: float
    n_diverged: int


@dataclass
class EvalReport:
    rows: List[EvalRow] = field(default_factory=list)
    summaries: Dict[str, ControllerSummary] = field(default_factory=dict)

    def mean(self, controller: str) -> float:
        return self.summaries[controller].mean_cost


def policy_rollout(
    model: OcpModel,
    solution: Solution,
    w_seq: Array,
) -> Tuple[float, Array, bool]:
    """Roll the closed-loop policy through a fixed disturbance sequence and
    return the unpenalized cost, the state trajectory, and a divergence flag."""
    dims = model.dims
    if w_seq.shape != (dims.horizon, dims.n_w):
        raise ValueError(f"w_seq must have shape {(dims.horizon, dims.n_w)}, got {w_seq.shape}")
    x_nom, u_nom = solution.nominal.x, solution.nominal.u
    x_traj = np.zeros((dims.horizon + 1, dims.n_x))
    x_traj[0] = x_nom[0]
    cost = 0.0
    x = x_nom[0]
    for t in range(dims.horizon):
        pol = solution.policies[t]
        dx = x - x_nom[t]
        u = model.clamp(u_nom[t] + pol.k + pol.K @ dx)
        cost += model.running_cost(x, u, t)
        x = model.dynamics(x, u, w_seq[t])
        x_traj[t + 1] = x
        if not np.all(np.isfinite(x)) or np.abs(x).max() > DIVERGENCE_GUARD:
            x_traj[t + 2 :] = x_traj[t + 1]
            return float("inf"), x_traj, True
    cost += model.terminal_cost(x)
    return float(cost), x_traj, False


def _summarize(rows: Sequence[EvalRow], controller: str, runs: int) -> ControllerSummary:
    mine = [r for r in rows if r.controller == controller]
    costs = np.array([r.cost for r in mine])
    finite = costs[np.isfinite(costs)]
    n_div = int(np.sum(~np.isfinite(costs)))
    if finite.size == 0:
        mean, se = float("inf"), float("inf")
    else:
        mean = float(finite.mean())
        se = float(finite.std(ddof=1) / np.sqrt(finite.size)) if finite.size > 1 else float("inf")
    coll = float(np.mean([r.collided for r in mine])) if mine else 0.0
    return ControllerSummary(
        controller=controller,
        runs=runs,
        mean_cost=mean,
        se_cost=se,
        collision_rate=coll,
        n_diverged=n_div,
    )


def out_of_sample(
    model: OcpModel,
    solutions,
    true_dist: TrueDistribution,
    runs: int,
    seed: int,
    collision: Optional[Callable[[Array], bool]] = None,
) -> EvalReport:
    """Monte Carlo out-of-sample comparison.

    ``solutions`` is either a single Solution or a {label: Solution} dict.
    Every controller sees the same disturbance sequence in run r, drawn from
    the substream ("evaluation", r) of ``seed``, so between-controller cost
    differences are paired.
    """
    if isinstance(solutions, Solution):
        solutions = {"policy": solutions}
    if runs < 1:
        raise ValueError("runs must be >= 1")
    horizon = model.dims.horizon
    report = EvalReport()
    for r in range(runs):
        rng = substream(seed, "evaluation", r)
        w_seq = true_dist.sample(rng, horizon)
        for name, sol in solutions.items():
            cost, x_traj, diverged = policy_rollout(model, sol, w_seq)
            collided = bool(collision(x_traj)) if collision is not None else False
            report.rows.append(
                EvalRow(controller=name, run=r, cost=cost, collided=collided, diverged=diverged)
            )
    for name in solutions:
        report.summaries[name] = _summarize(report.rows, name, runs)
    return report


def solve_controller(
    name: str,
    inst,
    ds: DisturbanceDataset,
    config: SolverConfig,
    seed: int,
    gamma_w: Optional[float] = None,
) -> Solution:
    """Dispatch by controller name: "drddp", "box", or "minimax".

    minimax without an explicit gamma_w autotunes one from a coarse grid.
    """
    if name == "drddp":
        return solve(inst.model, inst.x0, ds, config, seed=seed)
    if name == "box":
        return solve_box_ddp(inst.model, inst.x0, config, seed=seed)
    if name == "minimax":
        gamma = gamma_w if gamma_w is not None else pick_minimax_gamma(
            inst.model, inst.x0, config, seed=seed
        )
        return solve_minimax_ddp(inst.model, inst.x0, gamma, config, seed=seed)
    raise ValueError(f"unknown controller {name!r}")


def compare_controllers(
    inst,
    controllers: Sequence[str],
    ds: DisturbanceDataset,
    config: SolverConfig,
    runs: int,
    seed: int,
    gamma_w: Optional[float] = None,
) -> Tuple[EvalReport, Dict[str, Solution]]:
    """Solve every named controller on the same dataset and seed, then run the
    paired out-of-sample comparison."""
    if len(controllers) < 1:
        raise ValueError("need at least one controller")
    solutions = {
        name: solve_controller(name, inst, ds, config, seed, gamma_w=gamma_w)
        for name in controllers
    }
    report = out_of_sample(
        inst.model, solutions, inst.true_dist, runs, seed, collision=inst.collision
    )
    return report, solutions


# --- worst-case estimation ----------------------------------------------------

def worst_case_rollout(
    model: OcpModel,
    solution: Solution,
    ds: DisturbanceDataset,
    theta: float,
    rng: np.random.Generator,
) -> float:
    """One adversarial rollout with the learned disturbance policy, its atom
    shifts rescaled so each step's shifted empirical distribution stays within
    transport radius ``theta`` of the sample distribution.

    Returns the unpenalized closed-loop cost, which estimates performance
    under a worst-case distribution inside the ambiguity ball.
    """
    dims = model.dims
    x_nom, u_nom, w_nom = solution.nominal.x, solution.nominal.u, solution.nominal.w
    x = x_nom[0]
    cost = 0.0
    for t in range(dims.horizon):
        pol = solution.policies[t]
        dx = x - x_nom[t]
        u = model.clamp(u_nom[t] + pol.k + pol.K @ dx)
        cost += model.running_cost(x, u, t)
        atoms = ds.samples[t]
        shifts = (w_nom[t] + pol.h_i + pol.H @ dx) - atoms
        rms = float(np.sqrt(np.mean(np.sum(shifts**2, axis=1))))
        scale = 1.0 if rms <= theta else theta / rms
        i = int(rng.integers(ds.n_samples))
        w = atoms[i] + scale * shifts[i]
        x = model.dynamics(x, u, w)
        if not np.all(np.isfinite(x)) or np.abs(x).max() > DIVERGENCE_GUARD:
            return float("inf")
    cost += model.terminal_cost(x)
    return float(cost)


def estimate_worst_case(
    model: OcpModel,
    solution: Solution,
    ds: DisturbanceDataset,
    theta: float,
    runs: int,
    seed: int,
) -> Tuple[float, float, Array]:
    costs = np.array(
        [
            worst_case_rollout(model, solution, ds, theta, substream(seed, "evaluation", r))
            for r in range(runs)
        ]
    )
    finite = costs[np.isfinite(costs)]
    if finite.size == 0:
        return float("inf"), float("inf"), costs
    se = float(finite.std(ddof=1) / np.sqrt(finite.size)) if finite.size > 1 else float("inf")
    return float(finite.mean()), se, costs


# --- timing -------------------------------------------------------------------

@dataclass
class TimingRow:
    size: int
    iter_time_mean: float
    iter_time_std: float
    iterations: int


def timing_sweep(
    make_instance: Callable[[int, int], "object"],
    sizes: Sequence[int],
    seed: int = 0,
    iters: int = 3,
    lam: Optional[float] = None,
) -> List[TimingRow]:
    """Measure per-iteration solver wall time as problem size grows.

    ``make_instance(size, seed)`` must return a BenchmarkInstance; each size is
    solved for at most ``iters`` iterations and the per-iteration wall times
    are summarized from the solver's own records.
    """
    rows: List[TimingRow] = []
    for size in sizes:
        inst = make_instance(size, seed)
        ds = draw_dataset(
            inst.true_dist, inst.model.dims.horizon, inst.n_samples, substream(seed, "dataset")
        )
        cfg = SolverConfig(
            lam=lam if lam is not None else inst.default_lam,
            max_iters=iters,
            cost_tolerance=0.0,
            gradient_tolerance=0.0,
        )
        sol = solve(inst.model, inst.x0, ds, cfg, seed=seed)
        times = np.array([rec.wall_time for rec in sol.records]) if sol.records else np.zeros(1)
        rows.append(
            TimingRow(
                size=size,
                iter_time_mean=float(times.mean()),
                iter_time_std=float(times.std(ddof=1)) if times.size > 1 else 0.0,
                iterations=len(sol.records),
            )
        )
    return rows


def loglog_slope(sizes: Sequence[int], times: Sequence[float]) -> float:
    return float(np.polyfit(np.log(np.asarray(sizes, float)), np.log(np.asarray(times, float)), 1)[0])
