"""Forward pass: rollout under the saddle policies and the backtracking
line search on the penalized cost.

The nominal update rolls the adversary's mean response w = w_nom + alpha
h_bar + H dx and scores the mean-atom penalty, which keeps the rollout
deterministic and makes the quadratic improvement model exact on
linear-quadratic problems (a sampled-atom rollout realizes the model only
in expectation, so a line search against it stalls on sampling noise).
Passing explicit atom indices instead draws the per-atom response w =
w_nom + alpha h^(i) + H dx with the matched single-atom penalty; that mode
is what Monte Carlo estimation of the worst-case value uses.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .backward import ImprovementModel, PolicyStep
from .disturbance import DisturbanceDataset
from .problem import OcpModel

Array = np.ndarray

DIVERGENCE_GUARD = 1e8


@dataclass
class NominalTrajectories:
    """Nominal state / control / adversary-disturbance sequences."""

    x: Array  # (T+1, n_x)
    u: Array  # (T, n_u)
    w: Array  # (T, n_w)

    def copy(self) -> "NominalTrajectories":
        return NominalTrajectories(x=self.x.copy(), u=self.u.copy(), w=self.w.copy())


@dataclass
class RolloutResult:
    traj: NominalTrajectories
    cost_penalized: float
    cost_nominal: float
    alpha: float
    diverged: bool = False


@dataclass
class LineSearchConfig:
    alpha0: float = 1.0
    backtrack: float = 0.5
    max_trials: int = 10
    sufficient_decrease: float = 1e-4
    # Saddle steps can move the penalized cost in either direction (the
    # adversary's gain may outweigh the controller's saving). A trial whose
    # realized change overshoots the model's prediction by more than this
    # factor is treated as a model breakdown and backtracked.
    model_overshoot_cap: float = 2.0


@dataclass
class LineSearchResult:
    result: RolloutResult
    accepted: bool
    n_trials: int
    incumbent_cost: float


def rollout(
    model: OcpModel,
    nominal: NominalTrajectories,
    policies: list,
    alpha: float,
    ds: DisturbanceDataset,
    lam: float,
    atom_indices: Optional[Array] = None,
) -> RolloutResult:
    """Roll the closed-loop system under the policies at step size alpha.

    u_t = clamp(u_nom + alpha k + K dx). With atom_indices=None the
    disturbance is the mean response w_t = w_nom + alpha h_bar + H dx and
    the penalty term is lambda * mean_i ||w_t - w_hat^(i)||^2; with indices
    given, w_t = w_nom + alpha h^(i) + H dx and the penalty uses the drawn
    atom only. States above the divergence guard abort with infinite cost.
    """
    horizon = model.dims.horizon
    xs = np.empty_like(nominal.x)
    us = np.empty_like(nominal.u)
    ws = np.empty_like(nominal.w)
    xs[0] = nominal.x[0]
    cost_nominal = 0.0
    penalty = 0.0
    x = nominal.x[0]
    for t in range(horizon):
        pol: PolicyStep = policies[t]
        dx = x - nominal.x[t]
        u = model.clamp(nominal.u[t] + alpha * pol.k + pol.K @ dx)
        if atom_indices is None:
            w = nominal.w[t] + alpha * pol.h_bar + pol.H @ dx
            dev = w[None, :] - ds.samples[t]
            penalty += float(np.einsum("ij,ij->i", dev, dev).mean())
        else:
            i = int(atom_indices[t])
            w = nominal.w[t] + alpha * pol.h_i[i] + pol.H @ dx
            dev = w - ds.samples[t, i]
            penalty += float(dev @ dev)
        cost_nominal += float(model.running_cost(x, u, t))
        x = np.asarray(model.dynamics(x, u, w), dtype=float)
        us[t] = u
        ws[t] = w
        xs[t + 1] = x
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > DIVERGENCE_GUARD:
            return RolloutResult(
                traj=NominalTrajectories(x=xs, u=us, w=ws),
                cost_penalized=np.inf,
                cost_nominal=np.inf,
                alpha=alpha,
                diverged=True,
            )
    cost_nominal += float(model.terminal_cost(x))
    return RolloutResult(
        traj=NominalTrajectories(x=xs, u=us, w=ws),
        cost_penalized=cost_nominal - lam * penalty,
        cost_nominal=cost_nominal,
        alpha=alpha,
        diverged=False,
    )


def line_search(
    model: OcpModel,
    nominal: NominalTrajectories,
    policies: list,
    improvement: ImprovementModel,
    config: LineSearchConfig,
    ds: DisturbanceDataset,
    lam: float,
) -> LineSearchResult:
    """Backtracking search on alpha against the mean-response rollout.

    The incumbent is the alpha=0 rollout (identical to the nominal). When
    the quadratic model predicts a decrease, a trial is accepted once the
    achieved decrease reaches sufficient_decrease times the prediction
    without overshooting it by more than model_overshoot_cap. When the
    model predicts a rise (the adversary's gain outweighs the controller's),
    the realized rise must stay within the same overshoot cap. As alpha
    shrinks the realized change approaches the model, so the search cannot
    stall on a legitimate saddle step.
    """
    incumbent = rollout(model, nominal, policies, 0.0, ds, lam)
    best: Optional[RolloutResult] = None
    alpha = config.alpha0
    for trial in range(config.max_trials):
        cand = rollout(model, nominal, policies, alpha, ds, lam)
        if not cand.diverged:
            expected = improvement.expected_decrease(alpha)
            achieved = incumbent.cost_penalized - cand.cost_penalized
            cap = config.model_overshoot_cap
            if expected >= 0.0:
                ok = config.sufficient_decrease * expected <= achieved <= cap * expected
            else:
                ok = cap * expected <= achieved
            if ok:
                return LineSearchResult(
                    result=cand,
                    accepted=True,
                    n_trials=trial + 1,
                    incumbent_cost=incumbent.cost_penalized,
                )
            if best is None or cand.cost_penalized < best.cost_penalized:
                best = cand
        alpha *= config.backtrack
    return LineSearchResult(
        result=best if best is not None else incumbent,
        accepted=False,
        n_trials=config.max_trials,
        incumbent_cost=incumbent.cost_penalized,
    )
