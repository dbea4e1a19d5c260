"""Outer solver loop: alternate backward passes and line-searched rollouts
until the penalized cost stagnates or the feedforward vanishes.

The nominal update rolls the adversary's mean response, so a solve is
deterministic end to end; randomness enters only through the dataset and
the Monte Carlo evaluation of the worst-case value. Note the penalized
cost is not monotone in general: early iterations can raise it when the
adversary's gain dominates, before settling at the saddle.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .backward import (
    BackwardPassError,
    BackwardPassResult,
    Regularization,
    ValueExpansion,
    backward_pass,
)
from .disturbance import DisturbanceDataset
from .forward import LineSearchConfig, NominalTrajectories, line_search, rollout
from .problem import OcpModel
from .rng import substream

Array = np.ndarray


class SolverNumericalError(RuntimeError):
    """Backward pass kept failing at the regularization cap."""


class GameCurvatureError(RuntimeError):
    """Adversary curvature lost definiteness with regularization disabled
    (soft-constrained game is ill-posed; increase gamma_w / lambda)."""


@dataclass
class SolverConfig:
    lam: float
    theta: float = 0.1
    max_iters: int = 200
    cost_tolerance: float = 1e-6
    gradient_tolerance: float = 1e-6
    gauss_newton: bool = False
    line_search: LineSearchConfig = field(default_factory=LineSearchConfig)
    mu_init: float = 1.0
    mu_factor: float = 10.0
    mu_max: float = 1e10
    mu_min: float = 1e-8

    def __post_init__(self) -> None:
        if self.lam <= 0:
            raise ValueError("lam must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be positive")

    def make_regularization(self) -> Regularization:
        return Regularization(
            mu=0.0,
            mu_init=self.mu_init,
            factor=self.mu_factor,
            mu_max=self.mu_max,
            mu_min=self.mu_min,
        )


@dataclass
class IterationRecord:
    iteration: int
    cost_penalized: float
    cost_nominal: float
    alpha: float
    mu: float
    accepted: bool
    wall_time: float


@dataclass
class Solution:
    nominal: NominalTrajectories
    policies: list
    value0: ValueExpansion
    cost_history: list
    records: list
    iterations: int
    converged: bool
    lam: float
    theta: float
    seed: int

    @property
    def final_cost(self) -> float:
        return self.cost_history[-1] if self.cost_history else float("nan")


def initial_nominal(
    model: OcpModel,
    x0: Array,
    ds: DisturbanceDataset,
    u_init: Optional[Array] = None,
) -> NominalTrajectories:
    """Roll the initial guess (zero or supplied controls, clamped) through the
    dynamics with the per-step empirical-mean disturbance."""
    dims = model.dims
    if u_init is None:
        u_init = np.zeros((dims.horizon, dims.n_u))
    u_nom = np.clip(np.asarray(u_init, dtype=float), model.control_lower, model.control_upper)
    w_nom = ds.means.copy()
    x_nom = np.empty((dims.horizon + 1, dims.n_x))
    x_nom[0] = np.asarray(x0, dtype=float)
    for t in range(dims.horizon):
        x_nom[t + 1] = model.dynamics(x_nom[t], u_nom[t], w_nom[t])
    if not np.all(np.isfinite(x_nom)):
        raise SolverNumericalError("initial nominal rollout is non-finite")
    return NominalTrajectories(x=x_nom, u=u_nom, w=w_nom)


def _run_backward(
    model: OcpModel,
    nominal: NominalTrajectories,
    ds: DisturbanceDataset,
    config: SolverConfig,
    reg: Regularization,
    adversary: bool,
    adversary_reg: bool,
) -> BackwardPassResult:
    while True:
        try:
            return backward_pass(
                model,
                nominal.x,
                nominal.u,
                nominal.w,
                ds,
                config.lam,
                mu=reg.mu,
                gauss_newton=config.gauss_newton,
                adversary=adversary,
                adversary_reg=adversary_reg,
            )
        except BackwardPassError as err:
            if err.kind == "adversary_curvature" and not adversary_reg:
                raise GameCurvatureError(
                    f"adversary curvature not negative definite at t={err.timestep}; "
                    "increase the disturbance penalty (gamma_w / lambda)"
                ) from err
            if not reg.increase():
                raise SolverNumericalError(
                    f"backward pass failed at t={err.timestep} with mu at cap "
                    f"{reg.mu_max:g}: {err}"
                ) from err


def _solve_core(
    model: OcpModel,
    x0: Array,
    ds: DisturbanceDataset,
    config: SolverConfig,
    seed: int = 0,
    u_init: Optional[Array] = None,
    adversary: bool = True,
    adversary_reg: bool = True,
) -> Solution:
    if ds.horizon != model.dims.horizon or ds.n_w != model.dims.n_w:
        raise ValueError(
            f"dataset shape ({ds.horizon}, {ds.n_samples}, {ds.n_w}) does not match "
            f"model dims (T={model.dims.horizon}, n_w={model.dims.n_w})"
        )
    nominal = initial_nominal(model, x0, ds, u_init)
    reg = config.make_regularization()
    records: list = []
    cost_history: list = []
    converged = False
    cost_current: Optional[float] = None
    policies = None
    value0 = None
    policies_stale = False

    iteration = 0
    for iteration in range(1, config.max_iters + 1):
        tic = time.perf_counter()
        bp = _run_backward(model, nominal, ds, config, reg, adversary, adversary_reg)
        policies, value0 = bp.policies, bp.value0
        policies_stale = False
        # The feedforward test is meaningful only at baseline regularization;
        # a large mu damps the gains toward zero regardless of stationarity.
        if bp.max_feedforward() < config.gradient_tolerance and reg.mu <= config.mu_min:
            converged = True
            if cost_current is None:
                base = rollout(model, nominal, policies, 0.0, ds, config.lam)
                cost_current = base.cost_penalized
            if not cost_history or cost_history[-1] != cost_current:
                cost_history.append(cost_current)
            records.append(
                IterationRecord(
                    iteration=iteration,
                    cost_penalized=cost_current,
                    cost_nominal=float("nan"),
                    alpha=0.0,
                    mu=reg.mu,
                    accepted=True,
                    wall_time=time.perf_counter() - tic,
                )
            )
            break
        ls = line_search(
            model,
            nominal,
            policies,
            bp.improvement,
            config.line_search,
            ds,
            config.lam,
        )
        wall = time.perf_counter() - tic
        if ls.accepted:
            nominal = ls.result.traj
            policies_stale = True
            cost_new = ls.result.cost_penalized
            cost_history.append(cost_new)
            records.append(
                IterationRecord(
                    iteration=iteration,
                    cost_penalized=cost_new,
                    cost_nominal=ls.result.cost_nominal,
                    alpha=ls.result.alpha,
                    mu=reg.mu,
                    accepted=True,
                    wall_time=wall,
                )
            )
            reg.decrease()
            rel_change = abs(cost_new - ls.incumbent_cost) / max(1.0, abs(cost_new))
            cost_current = cost_new
            if rel_change < config.cost_tolerance:
                converged = True
                break
        else:
            records.append(
                IterationRecord(
                    iteration=iteration,
                    cost_penalized=ls.incumbent_cost,
                    cost_nominal=float("nan"),
                    alpha=ls.result.alpha,
                    mu=reg.mu,
                    accepted=False,
                    wall_time=wall,
                )
            )
            cost_current = ls.incumbent_cost if cost_current is None else cost_current
            if not reg.increase():
                break

    if policies_stale:
        # Re-expand around the final accepted nominal so the shipped policies
        # and trajectories are mutually consistent.
        bp = _run_backward(model, nominal, ds, config, reg, adversary, adversary_reg)
        policies, value0 = bp.policies, bp.value0

    return Solution(
        nominal=nominal,
        policies=policies,
        value0=value0,
        cost_history=cost_history,
        records=records,
        iterations=iteration,
        converged=converged,
        lam=config.lam,
        theta=config.theta,
        seed=seed,
    )


def solve(
    model: OcpModel,
    x0: Array,
    ds: DisturbanceDataset,
    config: SolverConfig,
    seed: int = 0,
    u_init: Optional[Array] = None,
) -> Solution:
    """Distributionally robust DDP against the dataset atoms."""
    return _solve_core(model, x0, ds, config, seed=seed, u_init=u_init)


def estimate_sup_penalized(
    model: OcpModel,
    solution: Solution,
    ds: DisturbanceDataset,
    runs: int,
    rng: np.random.Generator,
) -> tuple[float, float]:
    """Monte Carlo estimate (mean, standard error) of the penalized cost under
    the solved control and worst-case disturbance policies."""
    horizon = model.dims.horizon
    values = np.empty(runs)
    for r in range(runs):
        idx = rng.integers(0, ds.n_samples, size=horizon)
        res = rollout(model, solution.nominal, solution.policies, 1.0, ds, solution.lam, idx)
        values[r] = res.cost_penalized
    se = float(values.std(ddof=1) / np.sqrt(runs)) if runs > 1 else 0.0
    return float(values.mean()), se


@dataclass
class TuneRow:
    lam: float
    penalty_term: float
    sup_estimate: float
    bound: float
    converged: bool
    is_minimizer: bool = False


@dataclass
class TuneResult:
    lam: float
    rows: list
    solution: Solution


def tune_lambda(
    model: OcpModel,
    x0: Array,
    ds: DisturbanceDataset,
    config: SolverConfig,
    lambda_grid,
    eval_runs: int = 100,
    seed: int = 0,
    u_init: Optional[Array] = None,
) -> TuneResult:
    """Grid search on lambda minimizing the certificate
    lambda * T * theta^2 + (Monte Carlo estimate of the optimal penalized
    value). Ties resolve to the smaller lambda; candidates that fail to
    converge are kept in the table with an infinite bound."""
    grid = sorted(float(l) for l in lambda_grid)
    if not grid:
        raise ValueError("lambda_grid is empty")
    horizon = model.dims.horizon
    rows: list = []
    solutions: list = []
    for idx, lam in enumerate(grid):
        cand_cfg = replace(config, lam=lam)
        sol = solve(model, x0, ds, cand_cfg, seed=seed, u_init=u_init)
        solutions.append(sol)
        penalty = lam * horizon * config.theta**2
        if sol.converged:
            sup_est, _ = estimate_sup_penalized(
                model, sol, ds, eval_runs, substream(seed, "tuning", idx)
            )
            bound = penalty + sup_est
        else:
            sup_est, bound = float("nan"), float("inf")
        rows.append(
            TuneRow(lam=lam, penalty_term=penalty, sup_estimate=sup_est, bound=bound, converged=sol.converged)
        )
    bounds = [r.bound for r in rows]
    if not np.isfinite(bounds).any():
        raise SolverNumericalError("tuning failed: no lambda candidate converged")
    best = int(np.argmin(bounds))  # ties resolve to the first (smallest) lambda
    rows[best].is_minimizer = True
    return TuneResult(lam=rows[best].lam, rows=rows, solution=solutions[best])
