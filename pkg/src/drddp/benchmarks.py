"""Benchmark problems: kinematic car with a drifting obstacle, and a
controlled Kuramoto oscillator network.

Both ship analytic first derivatives and value-contracted second derivatives;
finite differences are only a fallback for user models.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .disturbance import TrueDistribution, gaussian, uniform_box
from .problem import CostDerivs, Dims, OcpModel
from .rng import substream

Array = np.ndarray


@dataclass
class BenchmarkInstance:
    name: str
    model: OcpModel
    x0: Array
    true_dist: TrueDistribution
    n_samples: int
    default_lam: float
    collision: Optional[Callable[[Array], bool]] = None
    params: dict = field(default_factory=dict)


def _apply_params(defaults: dict, params: Optional[dict], name: str) -> dict:
    merged = dict(defaults)
    if params:
        unknown = set(params) - set(defaults)
        if unknown:
            raise ValueError(f"unknown {name} parameter(s): {sorted(unknown)}")
        merged.update(params)
    return merged


# --- kinematic car -----------------------------------------------------------

CAR_DEFAULTS: dict = {
    "horizon": 800,
    "dt": 0.05,
    "wheelbase": 1.0,
    "ref_start": (0.0, 0.0, 0.0),
    "ref_speed": 1.0,
    "reference_file": None,
    "obstacle_start": (20.0, 1.0),
    "obstacle_drift": (0.0, -0.0025),
    "noise_halfwidth": 0.001,
    "n_samples": 10,
    "lam": 9000.0,
    "q_track": 10.0,
    "r_ctrl": 0.1,
    "q_obs": 20.0,
    "r_obs": 0.2,
    "r_safe": 0.2,
    "u_lower": (0.0, -0.6),
    "u_upper": (10.0, 0.6),
}


def car_reduced_params() -> dict:
    """Reduced-scale crossing scenario used by the acceptance suite: shorter
    horizon, obstacle drifting across the reference path, disturbance scaled
    so the obstacle's wander is geometrically meaningful. lam is the
    grid-tuned certificate minimizer for this instance at theta=0.1."""
    return {
        "horizon": 200,
        "obstacle_start": (5.0, 0.5),
        "obstacle_drift": (0.0, -0.003),
        "noise_halfwidth": 0.02,
        "lam": 36000.0,
    }


def _car_reference(p: dict) -> Array:
    if p["reference_file"]:
        ref = np.loadtxt(p["reference_file"], delimiter=",", ndmin=2)
        if ref.shape != (p["horizon"] + 1, 3):
            raise ValueError(
                f"reference file must have shape ({p['horizon'] + 1}, 3), got {ref.shape}"
            )
        return ref
    start = np.asarray(p["ref_start"], dtype=float)
    ks = np.arange(p["horizon"] + 1)
    ref = np.tile(start, (p["horizon"] + 1, 1))
    ref[:, 0] += np.cos(start[2]) * p["ref_speed"] * p["dt"] * ks
    ref[:, 1] += np.sin(start[2]) * p["ref_speed"] * p["dt"] * ks
    return ref


def make_car(params: Optional[dict] = None, seed: int = 0) -> BenchmarkInstance:
    p = _apply_params(CAR_DEFAULTS, params, "car")
    horizon = int(p["horizon"])
    dt = float(p["dt"])
    wb = float(p["wheelbase"])
    drift = np.asarray(p["obstacle_drift"], dtype=float)
    ref = _car_reference(p)
    q_track = float(p["q_track"])
    r_ctrl = float(p["r_ctrl"])
    q_obs = float(p["q_obs"])
    s2 = (float(p["r_obs"]) + float(p["r_safe"])) ** 2
    r_obs = float(p["r_obs"])

    def dynamics(x: Array, u: Array, w: Array) -> Array:
        px, py, phi, ox, oy = x
        v, delta = u
        return np.array(
            [
                px + dt * v * np.cos(phi),
                py + dt * v * np.sin(phi),
                phi + dt * v * np.tan(delta) / wb,
                ox + drift[0] + w[0],
                oy + drift[1] + w[1],
            ]
        )

    def jacobians(x: Array, u: Array, w: Array):
        phi = x[2]
        v, delta = u
        f_x = np.eye(5)
        f_x[0, 2] = -dt * v * np.sin(phi)
        f_x[1, 2] = dt * v * np.cos(phi)
        f_u = np.zeros((5, 2))
        f_u[0, 0] = dt * np.cos(phi)
        f_u[1, 0] = dt * np.sin(phi)
        f_u[2, 0] = dt * np.tan(delta) / wb
        f_u[2, 1] = dt * v / (wb * np.cos(delta) ** 2)
        f_w = np.zeros((5, 2))
        f_w[3, 0] = 1.0
        f_w[4, 1] = 1.0
        return f_x, f_u, f_w

    def hessians(x: Array, u: Array, w: Array, v_vec: Array):
        phi = x[2]
        v, delta = u
        vfxx = np.zeros((5, 5))
        vfxx[2, 2] = -dt * v * (v_vec[0] * np.cos(phi) + v_vec[1] * np.sin(phi))
        sec2 = 1.0 / np.cos(delta) ** 2
        vfuu = np.zeros((2, 2))
        vfuu[0, 1] = vfuu[1, 0] = v_vec[2] * dt * sec2 / wb
        vfuu[1, 1] = v_vec[2] * dt * v * 2.0 * sec2 * np.tan(delta) / wb
        return vfxx, vfuu, np.zeros((2, 2))

    def _bump(x: Array) -> tuple:
        d = x[:2] - x[3:5]
        val = q_obs * np.exp(-0.5 * float(d @ d) / s2)
        return d, val

    def running_cost(x: Array, u: Array, t: int) -> float:
        track = x[:3] - ref[t]
        _, bump = _bump(x)
        return q_track * float(track @ track) + r_ctrl * float(u @ u) + bump

    def running_cost_derivs(x: Array, u: Array, t: int) -> CostDerivs:
        track = x[:3] - ref[t]
        d, bump = _bump(x)
        l_x = np.zeros(5)
        l_x[:3] = 2.0 * q_track * track
        g = bump * d / s2
        l_x[:2] -= g
        l_x[3:] += g
        l_xx = np.zeros((5, 5))
        l_xx[:3, :3] = 2.0 * q_track * np.eye(3)
        hb = bump * (np.outer(d, d) / s2**2 - np.eye(2) / s2)
        l_xx[:2, :2] += hb
        l_xx[3:, 3:] += hb
        l_xx[:2, 3:] -= hb
        l_xx[3:, :2] -= hb
        return CostDerivs(
            l_x=l_x,
            l_u=2.0 * r_ctrl * u,
            l_xx=l_xx,
            l_uu=2.0 * r_ctrl * np.eye(2),
            l_xu=np.zeros((5, 2)),
        )

    def terminal_cost(x: Array) -> float:
        track = x[:3] - ref[horizon]
        _, bump = _bump(x)
        return q_track * float(track @ track) + bump

    def terminal_cost_derivs(x: Array):
        # tracking + obstacle terms at t = T, no control
        cd = running_cost_derivs(x, np.zeros(2), horizon)
        return cd.l_x, cd.l_xx

    model = OcpModel(
        dims=Dims(n_x=5, n_u=2, n_w=2, horizon=horizon),
        dynamics=dynamics,
        running_cost=running_cost,
        terminal_cost=terminal_cost,
        control_lower=np.asarray(p["u_lower"], dtype=float),
        control_upper=np.asarray(p["u_upper"], dtype=float),
        dynamics_jacobians=jacobians,
        dynamics_hessians=hessians,
        running_cost_derivs=running_cost_derivs,
        terminal_cost_derivs=terminal_cost_derivs,
        name="car",
    )
    x0 = np.concatenate([np.asarray(p["ref_start"], dtype=float), np.asarray(p["obstacle_start"], dtype=float)])

    def collision(x_traj: Array) -> bool:
        dists = np.linalg.norm(x_traj[:, :2] - x_traj[:, 3:5], axis=1)
        return bool(dists.min() < r_obs)

    return BenchmarkInstance(
        name="car",
        model=model,
        x0=x0,
        true_dist=uniform_box(float(p["noise_halfwidth"]), 2),
        n_samples=int(p["n_samples"]),
        default_lam=float(p["lam"]),
        collision=collision,
        params=p,
    )


# --- Kuramoto oscillators ----------------------------------------------------

KURAMOTO_DEFAULTS: dict = {
    "n_oscillators": 50,
    "horizon": 100,
    "dt": 0.03,
    "coupling": 1.0,
    "freq_var": 0.004,
    "noise_mean": 0.001,
    "noise_var": 0.001,
    "control_weight": 1e-4,
    "u_max": None,
    "n_samples": 50,
    "lam": 10000.0,
}


def make_kuramoto(params: Optional[dict] = None, seed: int = 0) -> BenchmarkInstance:
    p = _apply_params(KURAMOTO_DEFAULTS, params, "kuramoto")
    n_osc = int(p["n_oscillators"])
    horizon = int(p["horizon"])
    dt = float(p["dt"])
    coupling = float(p["coupling"])
    cw = float(p["control_weight"])
    rng = substream(seed, "benchmark")
    omega = rng.normal(0.0, np.sqrt(float(p["freq_var"])), size=n_osc)
    theta0 = rng.uniform(-np.pi, np.pi, size=n_osc)
    # The control scales the attractive coupling; negative values would make
    # it repulsive and a gain above ~2/(dt*K*L) overshoots the synchronized
    # state within one step, so the actuator range is [0, 1.5/(dt*K*L)]
    # unless overridden.
    u_max = p["u_max"]
    if u_max is None:
        u_max = 1.5 / (dt * coupling * n_osc)
    u_max = float(u_max)

    def dynamics(x: Array, u: Array, w: Array) -> Array:
        diff = x[None, :] - x[:, None]  # diff[i, j] = theta_j - theta_i
        return x + dt * (omega + coupling * u[0] * np.sin(diff).sum(axis=1)) + w

    def jacobians(x: Array, u: Array, w: Array):
        diff = x[None, :] - x[:, None]
        cos_off = np.cos(diff)
        np.fill_diagonal(cos_off, 0.0)
        f_x = np.eye(n_osc) + dt * coupling * u[0] * (cos_off - np.diag(cos_off.sum(axis=1)))
        f_u = (dt * coupling * np.sin(diff).sum(axis=1))[:, None]
        return f_x, f_u, np.eye(n_osc)

    def hessians(x: Array, u: Array, w: Array, v_vec: Array):
        diff = x[None, :] - x[:, None]
        sin_d = np.sin(diff)  # zero diagonal by construction
        b = (v_vec[:, None] * sin_d).T
        m = b + b.T
        np.fill_diagonal(m, -(v_vec @ sin_d) - v_vec * sin_d.sum(axis=1))
        vfxx = dt * coupling * u[0] * m
        return vfxx, np.zeros((1, 1)), np.zeros((n_osc, n_osc))

    def _phase_cost(x: Array) -> float:
        # Coherence cost sum_ij (1 - cos(theta_j - theta_i)) = L^2 (1 - r^2);
        # unlike sin^2 it has no second minimum at anti-phase, so raising the
        # attractive gain is a descent direction from any phase configuration.
        diff = x[None, :] - x[:, None]
        return float((1.0 - np.cos(diff)).sum())

    def running_cost(x: Array, u: Array, t: int) -> float:
        return _phase_cost(x) + cw * float(u[0] ** 2)

    def _phase_cost_derivs(x: Array):
        diff = x[:, None] - x[None, :]  # [k, j] -> theta_k - theta_j
        grad = 2.0 * np.sin(diff).sum(axis=1)
        hess = -2.0 * np.cos(diff)
        np.fill_diagonal(hess, 2.0 * (np.cos(diff).sum(axis=1) - 1.0))
        return grad, hess

    def running_cost_derivs(x: Array, u: Array, t: int) -> CostDerivs:
        grad, hess = _phase_cost_derivs(x)
        return CostDerivs(
            l_x=grad,
            l_u=np.array([2.0 * cw * u[0]]),
            l_xx=hess,
            l_uu=np.array([[2.0 * cw]]),
            l_xu=np.zeros((n_osc, 1)),
        )

    def terminal_cost_derivs(x: Array):
        grad, hess = _phase_cost_derivs(x)
        return grad, hess

    model = OcpModel(
        dims=Dims(n_x=n_osc, n_u=1, n_w=n_osc, horizon=horizon),
        dynamics=dynamics,
        running_cost=running_cost,
        terminal_cost=_phase_cost,
        control_lower=np.zeros(1),
        control_upper=np.full(1, u_max),
        dynamics_jacobians=jacobians,
        dynamics_hessians=hessians,
        running_cost_derivs=running_cost_derivs,
        terminal_cost_derivs=terminal_cost_derivs,
        name="kuramoto",
    )
    return BenchmarkInstance(
        name="kuramoto",
        model=model,
        x0=theta0,
        true_dist=gaussian(float(p["noise_mean"]), float(p["noise_var"]), n_osc),
        n_samples=int(p["n_samples"]),
        default_lam=float(p["lam"]),
        collision=None,
        params=p,
    )


BENCHMARKS = {"car": make_car, "kuramoto": make_kuramoto}


def make_benchmark(name: str, params: Optional[dict] = None, seed: int = 0) -> BenchmarkInstance:
    if name not in BENCHMARKS:
        raise KeyError(f"unknown benchmark {name!r}; registered: {sorted(BENCHMARKS)}")
    return BENCHMARKS[name](params, seed)
