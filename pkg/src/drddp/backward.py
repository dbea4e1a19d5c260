"""Backward pass: second-order expansions of the penalized stage game and the
closed-form saddle gains.

Per timestep the averaged objective is expanded to second order in
(dx, du, dw) around the nominal triple. The adversary enters through a
quadratic penalty -lambda ||w - w_hat^(i)||^2 against each dataset atom; its
curvature block q_ww must be negative definite, the control Schur complement
positive definite. Both conditions are tested by Cholesky factorization and
repaired by a single scalar regularizer mu (added as -(q_ww - mu I) on the
adversary side and +mu I on the Schur complement).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .disturbance import DisturbanceDataset
from .problem import OcpModel, eval_cost_derivs, eval_dynamics_derivs, eval_terminal_derivs

Array = np.ndarray


class BackwardPassError(RuntimeError):
    """Curvature or finiteness failure during the backward pass.

    kind is one of "adversary_curvature", "control_curvature", "nonfinite".
    """

    def __init__(self, timestep: int, kind: str, message: str):
        super().__init__(f"backward pass failed at t={timestep}: {message}")
        self.timestep = timestep
        self.kind = kind


def _sym(a: Array) -> Array:
    return 0.5 * (a + a.T)


@dataclass
class ValueExpansion:
    """Quadratic value model around the nominal state at one timestep."""

    v0: float
    v_x: Array
    v_xx: Array


@dataclass
class QExpansion:
    """Second-order blocks of the penalized stage game at one timestep.

    q_w_i holds the per-atom adversary gradients (N, n_w); qbar_w is their
    average. qbar is the averaged constant including the dataset-spread
    terms -lambda tr(cov) - 2 lambda^2 tr(q_ww^{-1} cov).
    """

    t: int
    lam: float
    q_x: Array
    q_u: Array
    q_xx: Array
    q_uu: Array
    q_ww: Array
    q_xu: Array
    q_xw: Array
    q_uw: Array
    q_w_i: Array
    qbar_w: Array
    qbar: float
    chol_neg_ww: tuple = field(repr=False, default=None)


@dataclass
class PolicyStep:
    """Affine saddle policies at one timestep.

    Control: u = u_nom + alpha*k + K dx (clamped to the box).
    Adversary, atom i: w = w_nom + alpha*h_i[i] + H dx.
    clamped marks control coordinates pinned at a bound by the box QP.
    """

    K: Array
    k: Array
    H: Array
    h_i: Array
    h_bar: Array
    clamped: Array


@dataclass
class ImprovementModel:
    """Predicted change of the penalized cost along the mean-response
    rollout, aggregated over the horizon: dJ(alpha) = alpha*c1 + alpha^2*c2.
    Exact on linear-quadratic problems at mu=0 with no active bounds."""

    c1: float
    c2: float

    def expected_decrease(self, alpha: float) -> float:
        return -(alpha * self.c1 + alpha**2 * self.c2)


@dataclass
class Regularization:
    """mu schedule: x10 on failure (capped), /2 on success (floored)."""

    mu: float = 0.0
    mu_init: float = 1.0
    factor: float = 10.0
    mu_max: float = 1e10
    mu_min: float = 1e-8

    def increase(self) -> bool:
        """Bump mu after a failed backward pass; False once the cap is hit."""
        if self.mu >= self.mu_max:
            return False
        self.mu = self.mu_init if self.mu == 0.0 else min(self.mu * self.factor, self.mu_max)
        return True

    def decrease(self) -> None:
        if self.mu > 0.0:
            self.mu = max(self.mu / 2.0, self.mu_min)


@dataclass
class BackwardPassResult:
    policies: list
    value0: ValueExpansion
    improvement: ImprovementModel

    def max_feedforward(self) -> float:
        return max(float(np.max(np.abs(p.k))) if p.k.size else 0.0 for p in self.policies)


def terminal_expansion(model: OcpModel, x_terminal: Array) -> ValueExpansion:
    v0, v_x, v_xx = eval_terminal_derivs(model, x_terminal)
    return ValueExpansion(v0=v0, v_x=v_x, v_xx=_sym(v_xx))


def q_expand(
    model: OcpModel,
    value_next: ValueExpansion,
    x: Array,
    u: Array,
    w: Array,
    ds: DisturbanceDataset,
    t: int,
    lam: float,
    mu: float = 0.0,
    gauss_newton: bool = False,
    adversary: bool = True,
) -> QExpansion:
    """Assemble the stage-game expansion at timestep t.

    With adversary=False the disturbance blocks degenerate (q_ww = -I,
    zero couplings, zero atom gradients) and the expansion reduces exactly
    to the standard DDP recursion.
    """
    n_x, n_u, n_w = model.dims.n_x, model.dims.n_u, model.dims.n_w
    cd = eval_cost_derivs(model, x, u, t)
    v = None if gauss_newton else value_next.v_x
    dd = eval_dynamics_derivs(model, x, u, w, v=v)
    vxx = value_next.v_xx

    q_x = cd.l_x + dd.f_x.T @ value_next.v_x
    q_u = cd.l_u + dd.f_u.T @ value_next.v_x
    q_xx = _sym(cd.l_xx + dd.f_x.T @ vxx @ dd.f_x + dd.vfxx)
    q_uu = _sym(cd.l_uu + dd.f_u.T @ vxx @ dd.f_u + dd.vfuu)
    q_xu = cd.l_xu + dd.f_x.T @ vxx @ dd.f_u
    stage = float(model.running_cost(x, u, t))

    if not adversary:
        q_ww = -np.eye(n_w)
        chol = cho_factor(np.eye(n_w), lower=True)
        expansion = QExpansion(
            t=t,
            lam=lam,
            q_x=q_x,
            q_u=q_u,
            q_xx=q_xx,
            q_uu=q_uu,
            q_ww=q_ww,
            q_xu=q_xu,
            q_xw=np.zeros((n_x, n_w)),
            q_uw=np.zeros((n_u, n_w)),
            q_w_i=np.zeros((1, n_w)),
            qbar_w=np.zeros(n_w),
            qbar=stage + value_next.v0,
            chol_neg_ww=chol,
        )
        _check_finite(expansion)
        return expansion

    atoms = ds.samples[t]
    atom_mean = ds.means[t]
    atom_cov = ds.covs[t]
    q_ww = _sym(dd.f_w.T @ vxx @ dd.f_w + dd.vfww) - (2.0 * lam + mu) * np.eye(n_w)
    q_xw = dd.f_x.T @ vxx @ dd.f_w
    q_uw = dd.f_u.T @ vxx @ dd.f_w
    fw_v = dd.f_w.T @ value_next.v_x
    q_w_i = fw_v[None, :] - 2.0 * lam * (w[None, :] - atoms)
    qbar_w = fw_v - 2.0 * lam * (w - atom_mean)
    try:
        chol = cho_factor(-q_ww, lower=True)
    except np.linalg.LinAlgError:
        raise BackwardPassError(t, "adversary_curvature", "q_ww is not negative definite") from None
    # Constant of the averaged game after substituting the per-atom
    # maximizer deviations: the empirical spread enters through tr(cov) and
    # the curvature-weighted term tr((-q_ww)^{-1} cov).
    trace_term = 2.0 * lam**2 * float(np.trace(cho_solve(chol, atom_cov)))
    dev = w - atom_mean
    qbar = (
        stage
        + value_next.v0
        - lam * float(dev @ dev)
        - lam * float(np.trace(atom_cov))
        + trace_term
    )
    expansion = QExpansion(
        t=t,
        lam=lam,
        q_x=q_x,
        q_u=q_u,
        q_xx=q_xx,
        q_uu=q_uu,
        q_ww=q_ww,
        q_xu=q_xu,
        q_xw=q_xw,
        q_uw=q_uw,
        q_w_i=q_w_i,
        qbar_w=qbar_w,
        qbar=qbar,
        chol_neg_ww=chol,
    )
    _check_finite(expansion)
    return expansion


def _check_finite(q: QExpansion) -> None:
    for name in ("q_x", "q_u", "q_xx", "q_uu", "q_ww", "q_xu", "q_xw", "q_uw", "q_w_i", "qbar_w"):
        if not np.all(np.isfinite(getattr(q, name))):
            raise BackwardPassError(q.t, "nonfinite", f"{name} has non-finite entries")
    if not np.isfinite(q.qbar):
        raise BackwardPassError(q.t, "nonfinite", "qbar is non-finite")


def _adversary_solves(q: QExpansion, mu: float):
    """Shared pieces: W = (-q_ww)^{-1} q_uw^T, the control Schur complement
    S = q_uu + q_uw W + mu I (factored), plus (-q_ww)^{-1} q_xw^T and
    (-q_ww)^{-1} qbar_w."""
    chol_w = q.chol_neg_ww if q.chol_neg_ww is not None else cho_factor(-q.q_ww, lower=True)
    w_mat = cho_solve(chol_w, q.q_uw.T)
    schur = _sym(q.q_uu + q.q_uw @ w_mat) + mu * np.eye(q.q_uu.shape[0])
    try:
        chol_s = cho_factor(schur, lower=True)
    except np.linalg.LinAlgError:
        raise BackwardPassError(q.t, "control_curvature", "control Schur complement is not positive definite") from None
    vxw = cho_solve(chol_w, q.q_xw.T)
    vw = cho_solve(chol_w, q.qbar_w)
    return chol_w, w_mat, schur, chol_s, vxw, vw


def compute_gains(q: QExpansion, mu: float = 0.0) -> PolicyStep:
    """Unconstrained saddle gains via Cholesky solves (no explicit inverses)."""
    chol_w, w_mat, _, chol_s, vxw, vw = _adversary_solves(q, mu)
    gain_K = -cho_solve(chol_s, q.q_xu.T + q.q_uw @ vxw)
    ff_k = -cho_solve(chol_s, q.q_u + q.q_uw @ vw)
    gain_H = w_mat @ gain_K + vxw
    h_i = (w_mat @ ff_k)[None, :] + cho_solve(chol_w, q.q_w_i.T).T
    h_bar = w_mat @ ff_k + vw
    return PolicyStep(
        K=gain_K,
        k=ff_k,
        H=gain_H,
        h_i=h_i,
        h_bar=h_bar,
        clamped=np.zeros(ff_k.size, dtype=bool),
    )


def compute_gains_boxed(
    q: QExpansion,
    u_nom: Array,
    lower: Array,
    upper: Array,
    mu: float = 0.0,
) -> PolicyStep:
    """Box-constrained control gains: the adversary is eliminated first, the
    reduced control quadratic is solved by projected Newton, and feedback
    rows for clamped coordinates are zeroed."""
    chol_w, w_mat, schur, _, vxw, vw = _adversary_solves(q, mu)
    grad = q.q_u + q.q_uw @ vw
    lo = lower - u_nom
    hi = upper - u_nom
    ff_k, free, chol_free = project_newton_qp(schur, grad, lo, hi, timestep=q.t)
    n_u, n_x = q.q_xu.shape[1], q.q_xu.shape[0]
    gain_K = np.zeros((n_u, n_x))
    if free.any():
        rhs = (q.q_xu.T + q.q_uw @ vxw)[free]
        gain_K[free] = -cho_solve(chol_free, rhs)
    gain_H = w_mat @ gain_K + vxw
    h_i = (w_mat @ ff_k)[None, :] + cho_solve(chol_w, q.q_w_i.T).T
    h_bar = w_mat @ ff_k + vw
    return PolicyStep(K=gain_K, k=ff_k, H=gain_H, h_i=h_i, h_bar=h_bar, clamped=~free)


def project_newton_qp(
    hess: Array,
    grad0: Array,
    lower: Array,
    upper: Array,
    x0: Optional[Array] = None,
    max_iter: int = 100,
    grad_tol: float = 1e-9,
    rel_tol: float = 1e-10,
    armijo: float = 0.1,
    backtrack: float = 0.6,
    step_min: float = 1e-22,
    timestep: int = -1,
):
    """Minimize 0.5 x'Hx + g'x over a box by projected Newton.

    Returns (x, free_mask, cholesky_of_free_block). Coordinates sitting on a
    bound with an outward gradient are clamped; Newton steps are taken on the
    free block with a projected Armijo backtracking search.
    """
    n = grad0.size
    x = np.clip(np.zeros(n) if x0 is None else np.asarray(x0, dtype=float), lower, upper)
    value = 0.5 * x @ hess @ x + grad0 @ x
    free = np.ones(n, dtype=bool)
    chol_free = None
    for _ in range(max_iter):
        grad = grad0 + hess @ x
        free = ~_clamped_set(x, grad, lower, upper)
        if not free.any():
            break
        clamped = ~free
        try:
            chol_free = cho_factor(hess[np.ix_(free, free)], lower=True)
        except np.linalg.LinAlgError:
            raise BackwardPassError(timestep, "control_curvature", "box QP free block is not positive definite") from None
        if float(np.max(np.abs(grad[free]))) < grad_tol:
            break
        rhs = grad0[free] + hess[np.ix_(free, clamped)] @ x[clamped]
        target = -cho_solve(chol_free, rhs)
        step_dir = np.zeros(n)
        step_dir[free] = target - x[free]
        slope = grad[free] @ step_dir[free]
        if slope > -1e-16:
            break
        step = 1.0
        improved = False
        while step > step_min:
            x_try = np.clip(x + step * step_dir, lower, upper)
            v_try = 0.5 * x_try @ hess @ x_try + grad0 @ x_try
            if v_try <= value + armijo * step * slope:
                improved = True
                break
            step *= backtrack
        if not improved:
            break
        gain = value - v_try
        x, value = x_try, v_try
        if gain < rel_tol * (1.0 + abs(value)):
            break
    grad = grad0 + hess @ x
    free = ~_clamped_set(x, grad, lower, upper)
    if free.any():
        chol_free = cho_factor(hess[np.ix_(free, free)], lower=True)
    return x, free, chol_free


def _clamped_set(x: Array, grad: Array, lower: Array, upper: Array) -> Array:
    at_lo = (x <= lower + 1e-12) & (grad > 0)
    at_hi = (x >= upper - 1e-12) & (grad < 0)
    return at_lo | at_hi


def value_update(q: QExpansion, pol: PolicyStep) -> ValueExpansion:
    """Propagate the value expansion through the saddle policies.

    Uses the averaged adversary feedforward h_bar; v_xx is symmetrized after
    assembly.
    """
    k, gain_K, h, gain_H = pol.k, pol.K, pol.h_bar, pol.H
    v0 = (
        q.qbar
        + q.q_u @ k
        + q.qbar_w @ h
        + 0.5 * k @ q.q_uu @ k
        + 0.5 * h @ q.q_ww @ h
        + k @ q.q_uw @ h
    )
    v_x = (
        q.q_x
        + q.q_xu @ k
        + gain_K.T @ (q.q_u + q.q_uu @ k + q.q_uw @ h)
        + q.q_xw @ h
        + gain_H.T @ (q.qbar_w + q.q_ww @ h + q.q_uw.T @ k)
    )
    v_xx = (
        q.q_xx
        + gain_K.T @ q.q_uu @ gain_K
        + gain_H.T @ q.q_ww @ gain_H
        + 2.0 * q.q_xu @ gain_K
        + 2.0 * gain_K.T @ q.q_uw @ gain_H
        + 2.0 * q.q_xw @ gain_H
    )
    return ValueExpansion(v0=float(v0), v_x=v_x, v_xx=_sym(v_xx))


def backward_pass(
    model: OcpModel,
    x_nom: Array,
    u_nom: Array,
    w_nom: Array,
    ds: DisturbanceDataset,
    lam: float,
    mu: float = 0.0,
    gauss_newton: bool = False,
    adversary: bool = True,
    adversary_reg: bool = True,
) -> BackwardPassResult:
    """One sweep from the terminal expansion to t=0 at a fixed mu.

    Raises BackwardPassError on a curvature or finiteness failure; the caller
    owns the mu schedule and retries.
    """
    horizon = model.dims.horizon
    value = terminal_expansion(model, x_nom[horizon])
    policies: list = [None] * horizon
    c1 = 0.0
    c2 = 0.0
    mu_w = mu if adversary_reg else 0.0
    for t in reversed(range(horizon)):
        q = q_expand(
            model,
            value,
            x_nom[t],
            u_nom[t],
            w_nom[t],
            ds,
            t,
            lam,
            mu=mu_w,
            gauss_newton=gauss_newton,
            adversary=adversary,
        )
        if model.bounded:
            pol = compute_gains_boxed(q, u_nom[t], model.control_lower, model.control_upper, mu=mu)
        else:
            pol = compute_gains(q, mu=mu)
        value = value_update(q, pol)
        if not (np.isfinite(value.v0) and np.all(np.isfinite(value.v_x)) and np.all(np.isfinite(value.v_xx))):
            raise BackwardPassError(t, "nonfinite", "value expansion has non-finite entries")
        # Coefficients for the mean-response rollout: the per-atom spread
        # terms are constant in alpha and cancel between incumbent and trial.
        c1 += float(q.q_u @ pol.k) + float(q.qbar_w @ pol.h_bar)
        c2 += (
            0.5 * float(pol.k @ q.q_uu @ pol.k)
            + 0.5 * float(pol.h_bar @ q.q_ww @ pol.h_bar)
            + float(pol.k @ q.q_uw @ pol.h_bar)
        )
        policies[t] = pol
    return BackwardPassResult(policies=policies, value0=value, improvement=ImprovementModel(c1=c1, c2=c2))
