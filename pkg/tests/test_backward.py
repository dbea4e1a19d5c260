"""Backward pass against the explicit linear-quadratic saddle recursion,
stationarity of the closed-form gains, and the curvature guards."""

from __future__ import annotations

import numpy as np
import pytest

from drddp.backward import (
    BackwardPassError,
    QExpansion,
    Regularization,
    ValueExpansion,
    backward_pass,
    compute_gains,
    compute_gains_boxed,
    project_newton_qp,
    q_expand,
)
from drddp.disturbance import draw_dataset, uniform_box, zero_dataset
from drddp.forward import rollout
from drddp.rng import substream
from drddp.solver import initial_nominal

from conftest import lq_model, make_lq_data
from oracles import box_qp_enumerate, lq_saddle_recursion


def rolled_nominal(lq, x0, u_nom, w_nom):
    T = u_nom.shape[0]
    x = np.empty((T + 1, x0.size))
    x[0] = x0
    for t in range(T):
        x[t + 1] = lq.A @ x[t] + lq.B @ u_nom[t] + lq.D @ w_nom[t]
    return x


def random_qexpansion(rng, n_x=3, n_u=2, n_w=2, n_atoms=4):
    """Well-posed stage game: q_uu positive definite, q_ww negative definite,
    qbar_w the atom average as q_expand guarantees."""
    au = rng.standard_normal((n_u, n_u))
    aw = rng.standard_normal((n_w, n_w))
    q_uu = au @ au.T + n_u * np.eye(n_u)
    q_ww = -(aw @ aw.T + n_w * np.eye(n_w))
    q_w_i = rng.standard_normal((n_atoms, n_w))
    return QExpansion(
        t=0,
        lam=1.0,
        q_x=rng.standard_normal(n_x),
        q_u=rng.standard_normal(n_u),
        q_xx=np.eye(n_x),
        q_uu=q_uu,
        q_ww=q_ww,
        q_xu=rng.standard_normal((n_x, n_u)),
        q_xw=rng.standard_normal((n_x, n_w)),
        q_uw=rng.standard_normal((n_u, n_w)),
        q_w_i=q_w_i,
        qbar_w=q_w_i.mean(axis=0),
        qbar=float(rng.standard_normal()),
    )


# --- linear-quadratic ground truth ---------------------------------------------

def test_backward_pass_matches_lq_saddle_recursion():
    lq = make_lq_data(seed=12)
    model = lq_model(lq, horizon=8)
    rng = np.random.default_rng(5)
    T, n_u, n_w = 8, 2, 2
    u_nom = 0.3 * rng.standard_normal((T, n_u))
    w_nom = 0.2 * rng.standard_normal((T, n_w))
    x_nom = rolled_nominal(lq, rng.standard_normal(4), u_nom, w_nom)
    ds = draw_dataset(uniform_box(0.5, n_w), T, 5, substream(1, "dataset"))
    lam = 50.0

    bp = backward_pass(model, x_nom, u_nom, w_nom, ds, lam)
    ref = lq_saddle_recursion(lq, x_nom, u_nom, w_nom, ds.samples, lam)

    for t in range(T):
        pol, orc = bp.policies[t], ref[t]
        np.testing.assert_allclose(pol.K, orc.K, atol=1e-10)
        np.testing.assert_allclose(pol.k, orc.k, atol=1e-10)
        np.testing.assert_allclose(pol.H, orc.H, atol=1e-10)
        np.testing.assert_allclose(pol.h_i, orc.h_i, atol=1e-10)
        np.testing.assert_allclose(pol.h_bar, orc.h_bar, atol=1e-10)
    assert abs(bp.value0.v0 - ref[0].v0) <= 1e-9 * (1.0 + abs(ref[0].v0))
    np.testing.assert_allclose(bp.value0.v_x, ref[0].v_x, atol=1e-9)
    np.testing.assert_allclose(bp.value0.v_xx, ref[0].v_xx, atol=1e-9)


def test_improvement_model_exact_on_lq_full_step():
    lq = make_lq_data(seed=3)
    model = lq_model(lq, horizon=12)
    ds = draw_dataset(uniform_box(0.3, 2), 12, 4, substream(2, "dataset"))
    nominal = initial_nominal(model, np.array([1.0, -1.0, 0.5, 0.0]), ds)
    bp = backward_pass(model, nominal.x, nominal.u, nominal.w, ds, lam=80.0)

    base = rollout(model, nominal, bp.policies, 0.0, ds, 80.0)
    full = rollout(model, nominal, bp.policies, 1.0, ds, 80.0)
    achieved = base.cost_penalized - full.cost_penalized
    expected = bp.improvement.expected_decrease(1.0)
    assert abs(achieved - expected) <= 1e-8 * (1.0 + abs(expected))


def test_half_step_follows_quadratic_model():
    lq = make_lq_data(seed=3)
    model = lq_model(lq, horizon=12)
    ds = draw_dataset(uniform_box(0.3, 2), 12, 4, substream(2, "dataset"))
    nominal = initial_nominal(model, np.array([1.0, -1.0, 0.5, 0.0]), ds)
    bp = backward_pass(model, nominal.x, nominal.u, nominal.w, ds, lam=80.0)
    base = rollout(model, nominal, bp.policies, 0.0, ds, 80.0)
    half = rollout(model, nominal, bp.policies, 0.5, ds, 80.0)
    achieved = base.cost_penalized - half.cost_penalized
    expected = bp.improvement.expected_decrease(0.5)
    assert abs(achieved - expected) <= 1e-8 * (1.0 + abs(expected))


# --- gain stationarity ------------------------------------------------------------

def test_gains_satisfy_joint_stationarity():
    rng = np.random.default_rng(0)
    for _ in range(20):
        q = random_qexpansion(rng)
        pol = compute_gains(q, mu=0.0)
        scale = 1.0 + max(
            float(np.max(np.abs(getattr(q, name))))
            for name in ("q_u", "q_uu", "q_ww", "q_uw", "q_xu", "q_xw", "qbar_w")
        )
        r_u = q.q_u + q.q_uu @ pol.k + q.q_uw @ pol.h_bar
        r_w = q.qbar_w + q.q_ww @ pol.h_bar + q.q_uw.T @ pol.k
        r_Ku = q.q_xu.T + q.q_uu @ pol.K + q.q_uw @ pol.H
        r_Kw = q.q_xw.T + q.q_ww @ pol.H + q.q_uw.T @ pol.K
        assert float(np.max(np.abs(r_u))) <= 1e-10 * scale
        assert float(np.max(np.abs(r_w))) <= 1e-10 * scale
        assert float(np.max(np.abs(r_Ku))) <= 1e-10 * scale
        assert float(np.max(np.abs(r_Kw))) <= 1e-10 * scale
        # per-atom adversary responses share the control feedforward
        for i in range(q.q_w_i.shape[0]):
            r_i = q.q_w_i[i] + q.q_ww @ pol.h_i[i] + q.q_uw.T @ pol.k
            assert float(np.max(np.abs(r_i))) <= 1e-10 * scale


def test_h_bar_is_atom_average_of_h_i():
    rng = np.random.default_rng(4)
    for _ in range(10):
        q = random_qexpansion(rng, n_atoms=7)
        pol = compute_gains(q)
        np.testing.assert_allclose(pol.h_bar, pol.h_i.mean(axis=0), atol=1e-12)


def test_adversary_feedback_shrinks_with_lambda(lq_setup):
    lq, model, x0 = lq_setup
    ds = draw_dataset(uniform_box(0.2, 2), 20, 5, substream(0, "dataset"))
    nominal = initial_nominal(model, x0, ds)
    norms = {}
    for lam in (1e3, 1e5):
        bp = backward_pass(model, nominal.x, nominal.u, nominal.w, ds, lam)
        norms[lam] = max(float(np.max(np.abs(p.H))) for p in bp.policies)
    ratio = norms[1e3] / norms[1e5]
    # H scales like 1/lambda once the penalty dominates the curvature
    assert 50.0 < ratio < 200.0


# --- reductions and guards --------------------------------------------------------

def test_adversary_off_reduces_to_plain_ddp():
    rng = np.random.default_rng(9)
    lq = make_lq_data(seed=9)
    model = lq_model(lq, horizon=5)
    u_nom = 0.1 * rng.standard_normal((5, 2))
    w_nom = np.zeros((5, 2))
    x_nom = rolled_nominal(lq, rng.standard_normal(4), u_nom, w_nom)
    ds = zero_dataset(5, 2)
    value = ValueExpansion(v0=0.0, v_x=np.zeros(4), v_xx=2.0 * lq.Qf)
    q = q_expand(model, value, x_nom[0], u_nom[0], w_nom[0], ds, 0, lam=1.0, adversary=False)
    pol = compute_gains(q)
    assert not pol.H.any()
    assert not pol.h_i.any()
    assert not pol.h_bar.any()
    expect_K = -np.linalg.solve(q.q_uu, q.q_xu.T)
    expect_k = -np.linalg.solve(q.q_uu, q.q_u)
    np.testing.assert_allclose(pol.K, expect_K, atol=1e-12)
    np.testing.assert_allclose(pol.k, expect_k, atol=1e-12)


def test_indefinite_adversary_curvature_raises():
    lq = make_lq_data(seed=1)
    model = lq_model(lq, horizon=3)
    ds = draw_dataset(uniform_box(0.1, 2), 3, 3, substream(0, "dataset"))
    nominal = initial_nominal(model, np.ones(4), ds)
    # 2*lam far below the terminal curvature passed through f_w
    with pytest.raises(BackwardPassError) as err:
        backward_pass(model, nominal.x, nominal.u, nominal.w, ds, lam=1e-8)
    assert err.value.kind == "adversary_curvature"
    assert err.value.timestep == 2


def test_regularization_repairs_indefinite_adversary():
    lq = make_lq_data(seed=1)
    model = lq_model(lq, horizon=3)
    ds = draw_dataset(uniform_box(0.1, 2), 3, 3, substream(0, "dataset"))
    nominal = initial_nominal(model, np.ones(4), ds)
    big = 1e2 * float(np.max(np.abs(lq.Qf)))
    bp = backward_pass(model, nominal.x, nominal.u, nominal.w, ds, lam=1e-8, mu=4.0 * big)
    assert all(np.all(np.isfinite(p.K)) for p in bp.policies)


def test_nonfinite_value_gradient_raises():
    lq = make_lq_data(seed=2)
    model = lq_model(lq, horizon=2)
    ds = zero_dataset(2, 2)
    value = ValueExpansion(v0=0.0, v_x=np.full(4, np.nan), v_xx=np.eye(4))
    with pytest.raises(BackwardPassError) as err:
        q_expand(model, value, np.zeros(4), np.zeros(2), np.zeros(2), ds, 1, lam=10.0)
    assert err.value.kind == "nonfinite"


def test_regularization_schedule():
    reg = Regularization(mu=0.0, mu_init=1.0, factor=10.0, mu_max=100.0, mu_min=1e-8)
    assert reg.increase() and reg.mu == 1.0
    assert reg.increase() and reg.mu == 10.0
    assert reg.increase() and reg.mu == 100.0
    assert not reg.increase()  # at cap
    reg.decrease()
    assert reg.mu == 50.0
    reg.mu = 1.5e-8
    reg.decrease()
    assert reg.mu == 1e-8
    idle = Regularization(mu=0.0)
    idle.decrease()
    assert idle.mu == 0.0


# --- box-constrained control --------------------------------------------------------

def test_projected_newton_matches_enumeration():
    rng = np.random.default_rng(21)
    for trial in range(30):
        n = int(rng.integers(1, 5))
        a = rng.standard_normal((n, n))
        hess = a @ a.T + 0.5 * np.eye(n)
        grad = 2.0 * rng.standard_normal(n)
        lower = -rng.uniform(0.05, 1.0, size=n)
        upper = rng.uniform(0.05, 1.0, size=n)
        x, free, _ = project_newton_qp(hess, grad, lower, upper)
        x_ref, v_ref = box_qp_enumerate(hess, grad, lower, upper)
        v = 0.5 * x @ hess @ x + grad @ x
        assert v <= v_ref + 1e-9 * (1.0 + abs(v_ref))
        np.testing.assert_allclose(x, x_ref, atol=1e-7)


def test_clamped_controls_zero_feedback_rows():
    rng = np.random.default_rng(8)
    q = random_qexpansion(rng, n_u=3)
    # force the first coordinate against its bound with a steep gradient
    q.q_u[0] = -50.0
    u_nom = np.zeros(3)
    lower, upper = np.full(3, -0.1), np.full(3, 0.1)
    pol = compute_gains_boxed(q, u_nom, lower, upper)
    assert pol.clamped[0]
    assert pol.k[0] == pytest.approx(0.1)
    assert not pol.K[0].any()
    free = ~pol.clamped
    if free.any():
        # free rows still satisfy stationarity of the reduced problem
        grad = (q.q_u + q.q_uw @ pol.h_bar + q.q_uu @ pol.k)[free]
        assert float(np.max(np.abs(grad))) <= 1e-7


def test_boxed_gains_match_unconstrained_when_inactive():
    rng = np.random.default_rng(11)
    q = random_qexpansion(rng)
    wide = np.full(2, 1e6)
    pol_free = compute_gains(q)
    pol_box = compute_gains_boxed(q, np.zeros(2), -wide, wide)
    np.testing.assert_allclose(pol_box.k, pol_free.k, atol=1e-8)
    np.testing.assert_allclose(pol_box.K, pol_free.K, atol=1e-8)
    np.testing.assert_allclose(pol_box.H, pol_free.H, atol=1e-8)
    assert not pol_box.clamped.any()
