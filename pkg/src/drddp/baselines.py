"""Baseline controllers sharing the robust solver machinery.

box_ddp: deterministic DDP that plans with w = 0 and no adversary terms;
box bounds go through the same projected-Newton path.

minimax_ddp: soft-constrained dynamic game, exactly the robust machinery fed
a single zero atom with the Wasserstein penalty weight replaced by gamma_w.
Adversary regularization is disabled so a lost curvature condition surfaces
as an error instead of being silently tamed.
"""

from __future__ import annotations

from dataclasses import replace
from typing import Optional

import numpy as np

from .disturbance import zero_dataset
from .problem import OcpModel
from .solver import GameCurvatureError, Solution, SolverConfig, _solve_core

Array = np.ndarray


def solve_box_ddp(
    model: OcpModel,
    x0: Array,
    config: SolverConfig,
    seed: int = 0,
    u_init: Optional[Array] = None,
) -> Solution:
    ds0 = zero_dataset(model.dims.horizon, model.dims.n_w)
    return _solve_core(
        model, x0, ds0, config, seed=seed, u_init=u_init, adversary=False
    )


def solve_minimax_ddp(
    model: OcpModel,
    x0: Array,
    gamma_w: float,
    config: SolverConfig,
    seed: int = 0,
    u_init: Optional[Array] = None,
) -> Solution:
    if gamma_w <= 0:
        raise ValueError("gamma_w must be positive")
    ds0 = zero_dataset(model.dims.horizon, model.dims.n_w)
    cfg = replace(config, lam=float(gamma_w))
    return _solve_core(
        model, x0, ds0, cfg, seed=seed, u_init=u_init, adversary=True, adversary_reg=False
    )


def pick_minimax_gamma(
    model: OcpModel,
    x0: Array,
    config: SolverConfig,
    grid=(1e2, 1e3, 1e4, 1e5, 1e6),
    seed: int = 0,
    u_init: Optional[Array] = None,
) -> float:
    """Smallest gamma_w on the grid that keeps the game curvature negative
    definite through a full solve, times two (margin against the breakdown
    threshold)."""
    for gamma in sorted(float(g) for g in grid):
        try:
            solve_minimax_ddp(model, x0, gamma, config, seed=seed, u_init=u_init)
        except GameCurvatureError:
            continue
        return 2.0 * gamma
    raise GameCurvatureError(
        f"no gamma_w on grid {list(grid)} keeps the adversary curvature negative definite"
    )
