"""Out-of-sample evaluation: closed-loop rollouts, paired sampling, the
worst-case transport projection, and the timing sweep."""

from __future__ import annotations

import numpy as np
import pytest

from drddp.benchmarks import BenchmarkInstance, make_car, car_reduced_params
from drddp.disturbance import draw_dataset, gaussian, uniform_box
from drddp.evaluation import (
    compare_controllers,
    estimate_worst_case,
    loglog_slope,
    out_of_sample,
    policy_rollout,
    solve_controller,
    timing_sweep,
    worst_case_rollout,
)
from drddp.rng import substream
from drddp.solver import SolverConfig, solve

from conftest import lq_model, make_lq_data


@pytest.fixture(scope="module")
def lq_solved():
    lq = make_lq_data(seed=7)
    model = lq_model(lq, horizon=20)
    x0 = np.array([1.0, -0.5, 0.25, 0.8])
    ds = draw_dataset(uniform_box(0.1, 2), 20, 5, substream(3, "dataset"))
    sol = solve(model, x0, ds, SolverConfig(lam=100.0), seed=3)
    assert sol.converged
    return model, x0, ds, sol


def test_policy_rollout_zero_noise_tracks_cost(lq_solved):
    model, _, _, sol = lq_solved
    # under the nominal disturbance sequence the rollout reproduces the
    # stored nominal trajectory and its unpenalized cost
    cost, x_traj, diverged = policy_rollout(model, sol, sol.nominal.w)
    assert not diverged
    np.testing.assert_allclose(x_traj, sol.nominal.x, atol=1e-10)
    direct = sum(
        float(model.running_cost(sol.nominal.x[t], sol.nominal.u[t], t)) for t in range(20)
    ) + float(model.terminal_cost(sol.nominal.x[20]))
    assert cost == pytest.approx(direct, rel=1e-10)


def test_policy_rollout_rejects_bad_shape(lq_solved):
    model, _, _, sol = lq_solved
    with pytest.raises(ValueError, match="w_seq must have shape"):
        policy_rollout(model, sol, np.zeros((5, 2)))


def test_out_of_sample_is_paired_and_deterministic(lq_solved):
    model, _, _, sol = lq_solved
    dist = uniform_box(0.1, 2)
    a = out_of_sample(model, {"p": sol, "q": sol}, dist, runs=8, seed=11)
    b = out_of_sample(model, {"p": sol, "q": sol}, dist, runs=8, seed=11)
    # identical policies on shared draws give identical per-run costs
    pa = [r.cost for r in a.rows if r.controller == "p"]
    qa = [r.cost for r in a.rows if r.controller == "q"]
    assert pa == qa
    assert [r.cost for r in a.rows] == [r.cost for r in b.rows]
    assert a.mean("p") == pytest.approx(np.mean(pa))


def test_out_of_sample_summary_math(lq_solved):
    model, _, _, sol = lq_solved
    report = out_of_sample(model, sol, uniform_box(0.1, 2), runs=12, seed=2)
    s = report.summaries["policy"]
    costs = np.array([r.cost for r in report.rows])
    assert s.runs == 12
    assert s.mean_cost == pytest.approx(costs.mean())
    assert s.se_cost == pytest.approx(costs.std(ddof=1) / np.sqrt(12))
    assert s.n_diverged == 0
    assert s.collision_rate == 0.0


def test_out_of_sample_counts_divergence(lq_solved):
    model, _, _, sol = lq_solved
    # an explosive disturbance distribution drives some rollouts past the guard
    wild = gaussian(0.0, 1e20, 2)
    report = out_of_sample(model, sol, wild, runs=4, seed=0)
    s = report.summaries["policy"]
    assert s.n_diverged == 4
    assert s.mean_cost == np.inf


def test_collision_callable_feeds_rate(lq_solved):
    model, _, _, sol = lq_solved
    hits = {"count": 0}

    def always(x_traj):
        hits["count"] += 1
        return True

    report = out_of_sample(model, sol, uniform_box(0.1, 2), runs=5, seed=1, collision=always)
    assert hits["count"] == 5
    assert report.summaries["policy"].collision_rate == 1.0


def test_solve_controller_dispatch(lq_solved):
    model, x0, ds, _ = lq_solved
    inst = BenchmarkInstance(
        name="lq",
        model=model,
        x0=x0,
        true_dist=uniform_box(0.1, 2),
        n_samples=5,
        default_lam=100.0,
    )
    cfg = SolverConfig(lam=100.0)
    dr = solve_controller("drddp", inst, ds, cfg, seed=3)
    box = solve_controller("box", inst, ds, cfg, seed=3)
    mm = solve_controller("minimax", inst, ds, cfg, seed=3, gamma_w=1e6)
    assert dr.converged and box.converged and mm.converged
    assert not np.array_equal(dr.nominal.u, box.nominal.u)
    with pytest.raises(ValueError, match="unknown controller"):
        solve_controller("lqr", inst, ds, cfg, seed=3)


def test_compare_controllers_shares_draws(lq_solved):
    model, x0, ds, _ = lq_solved
    inst = BenchmarkInstance(
        name="lq", model=model, x0=x0, true_dist=uniform_box(0.1, 2), n_samples=5, default_lam=100.0
    )
    report, solutions = compare_controllers(
        inst, ["drddp", "box"], ds, SolverConfig(lam=100.0), runs=6, seed=3
    )
    assert set(solutions) == {"drddp", "box"}
    assert {r.controller for r in report.rows} == {"drddp", "box"}
    assert all(np.isfinite(r.cost) for r in report.rows)
    with pytest.raises(ValueError, match="at least one"):
        compare_controllers(inst, [], ds, SolverConfig(lam=100.0), runs=2, seed=0)


# --- worst case --------------------------------------------------------------------

def test_worst_case_shift_respects_radius(lq_solved):
    model, _, ds, sol = lq_solved
    theta = 0.05
    # replicate the rollout, checking the per-step transport budget
    x = sol.nominal.x[0]
    rng = substream(0, "evaluation", 0)
    for t in range(model.dims.horizon):
        pol = sol.policies[t]
        dx = x - sol.nominal.x[t]
        u = model.clamp(sol.nominal.u[t] + pol.k + pol.K @ dx)
        shifts = (sol.nominal.w[t] + pol.h_i + pol.H @ dx) - ds.samples[t]
        rms = float(np.sqrt(np.mean(np.sum(shifts**2, axis=1))))
        scale = min(1.0, theta / rms)
        shifted = ds.samples[t] + scale * shifts
        moved = float(np.sqrt(np.mean(np.sum((shifted - ds.samples[t]) ** 2, axis=1))))
        assert moved <= theta + 1e-12
        i = int(rng.integers(ds.n_samples))
        x = model.dynamics(x, u, shifted[i])


def test_estimate_worst_case_deterministic(lq_solved):
    model, _, ds, sol = lq_solved
    a = estimate_worst_case(model, sol, ds, theta=0.1, runs=16, seed=5)
    b = estimate_worst_case(model, sol, ds, theta=0.1, runs=16, seed=5)
    assert a[0] == b[0] and a[1] == b[1]
    np.testing.assert_array_equal(a[2], b[2])
    assert np.all(np.isfinite(a[2]))
    assert a[0] == pytest.approx(float(a[2].mean()))


def test_worst_case_above_clean_rollout(lq_solved):
    model, _, ds, sol = lq_solved
    clean, _, _ = policy_rollout(model, sol, sol.nominal.w)
    wc = worst_case_rollout(model, sol, ds, theta=0.1, rng=substream(1, "evaluation", 0))
    assert wc > clean


# --- timing -----------------------------------------------------------------------

def test_timing_sweep_and_slope():
    def make_instance(size: int, seed: int) -> BenchmarkInstance:
        lq = make_lq_data(seed=seed, n_x=size, n_u=2, n_w=2)
        model = lq_model(lq, horizon=6)
        return BenchmarkInstance(
            name="lq",
            model=model,
            x0=np.ones(size),
            true_dist=uniform_box(0.1, 2),
            n_samples=3,
            default_lam=50.0,
        )

    rows = timing_sweep(make_instance, [4, 8], seed=0, iters=2)
    assert [r.size for r in rows] == [4, 8]
    assert all(r.iterations >= 1 for r in rows)
    assert all(r.iter_time_mean > 0.0 for r in rows)
    assert loglog_slope([10, 100], [1.0, 1000.0]) == pytest.approx(3.0)
