"""Shared fixtures: linear-quadratic problem builders sized for fast tests."""

from __future__ import annotations

import sys

import numpy as np
import pytest

from drddp import Dims, OcpModel
from oracles import LqData


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Repeat the acceptance verdict lines after the test summary so they are
    visible without -s."""
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None) if mod else None
    if lines:
        terminalreporter.section("acceptance checks")
        for line in lines:
            terminalreporter.write_line(line)


def make_lq_data(seed: int, n_x: int = 4, n_u: int = 2, n_w: int = 2) -> LqData:
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n_x, n_x))
    A *= 0.9 / max(1e-9, np.max(np.abs(np.linalg.eigvals(A))))
    B = rng.standard_normal((n_x, n_u))
    D = rng.standard_normal((n_x, n_w))
    Qh = rng.standard_normal((n_x, n_x))
    Rh = rng.standard_normal((n_u, n_u))
    Q = Qh @ Qh.T / n_x + 0.5 * np.eye(n_x)
    R = Rh @ Rh.T / n_u + 0.5 * np.eye(n_u)
    return LqData(A=A, B=B, D=D, Q=Q, R=R, Qf=2.0 * Q)


def lq_model(lq: LqData, horizon: int, bounds: bool = False) -> OcpModel:
    """Wrap explicit LQ matrices as an OcpModel with analytic derivatives."""
    n_x, n_u = lq.B.shape
    n_w = lq.D.shape[1]
    inf = np.inf
    lo = np.array([-0.9] * n_u) if bounds else np.full(n_u, -inf)
    hi = np.array([0.9] * n_u) if bounds else np.full(n_u, inf)
    zx = np.zeros((n_x, n_x))
    zu = np.zeros((n_u, n_u))
    zw = np.zeros((n_w, n_w))

    from drddp import CostDerivs

    return OcpModel(
        dims=Dims(n_x=n_x, n_u=n_u, n_w=n_w, horizon=horizon),
        dynamics=lambda x, u, w: lq.A @ x + lq.B @ u + lq.D @ w,
        running_cost=lambda x, u, t: float(x @ lq.Q @ x + u @ lq.R @ u),
        terminal_cost=lambda x: float(x @ lq.Qf @ x),
        control_lower=lo,
        control_upper=hi,
        dynamics_jacobians=lambda x, u, w: (lq.A, lq.B, lq.D),
        dynamics_hessians=lambda x, u, w, v: (zx, zu, zw),
        running_cost_derivs=lambda x, u, t: CostDerivs(
            l_x=2.0 * lq.Q @ x,
            l_u=2.0 * lq.R @ u,
            l_xx=2.0 * lq.Q,
            l_uu=2.0 * lq.R,
            l_xu=np.zeros((n_x, n_u)),
        ),
        terminal_cost_derivs=lambda x: (2.0 * lq.Qf @ x, 2.0 * lq.Qf),
        name="lq",
    )


@pytest.fixture
def lq_setup():
    """Default LQ instance at the acceptance sizes: n_x=4, n_u=2, n_w=2, T=20."""
    lq = make_lq_data(seed=7)
    model = lq_model(lq, horizon=20)
    x0 = np.array([1.0, -0.5, 0.25, 0.8])
    return lq, model, x0
