"""Optimal-control problem containers and derivative plumbing.

A model is a discrete-time system x_{t+1} = f(x_t, u_t, w_t) with a running
cost l(x, u, t), a terminal cost l_f(x), and elementwise box bounds on the
control. Models may supply analytic derivative callbacks; anything missing
falls back to central finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

Array = np.ndarray

# First-derivative step is pinned: h = max(1e-6, 1e-6 * |coordinate|).
_FD_REL = 1e-6
# Second-derivative (contraction) step; eps**(1/4)-ish balances truncation
# against roundoff for the 4-point formula.
_FD2_REL = 1e-4


class DerivativeError(RuntimeError):
    """A derivative evaluation produced a non-finite entry."""


@dataclass(frozen=True)
class Dims:
    """Problem sizes: state, control, disturbance, and horizon length."""

    n_x: int
    n_u: int
    n_w: int
    horizon: int

    def __post_init__(self) -> None:
        for name in ("n_x", "n_u", "n_w", "horizon"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ValueError(f"Dims.{name} must be a positive integer, got {value!r}")


@dataclass
class DynamicsDerivs:
    """First derivatives of f plus value-gradient contractions of its Hessians.

    vfxx, vfuu, vfww are sum_k v_k * d2 f_k / dz dz for z in {x, u, w}; the
    cross second derivatives are never formed.
    """

    f_x: Array
    f_u: Array
    f_w: Array
    vfxx: Array
    vfuu: Array
    vfww: Array


@dataclass
class CostDerivs:
    """Gradient and Hessian blocks of the running cost at one point."""

    l_x: Array
    l_u: Array
    l_xx: Array
    l_uu: Array
    l_xu: Array


@dataclass
class OcpModel:
    """Container for one control problem.

    Required pieces are the dynamics/cost callables and the control box.
    The *_derivs / jacobian callbacks are optional; when absent, central
    finite differences are used.
    """

    dims: Dims
    dynamics: Callable[[Array, Array, Array], Array]
    running_cost: Callable[[Array, Array, int], float]
    terminal_cost: Callable[[Array], float]
    control_lower: Array
    control_upper: Array
    dynamics_jacobians: Optional[Callable[[Array, Array, Array], tuple]] = None
    dynamics_hessians: Optional[Callable[[Array, Array, Array, Array], tuple]] = None
    running_cost_derivs: Optional[Callable[[Array, Array, int], CostDerivs]] = None
    terminal_cost_derivs: Optional[Callable[[Array], tuple]] = None
    name: str = ""

    def __post_init__(self) -> None:
        lo = np.asarray(self.control_lower, dtype=float).reshape(-1)
        hi = np.asarray(self.control_upper, dtype=float).reshape(-1)
        if lo.shape != (self.dims.n_u,) or hi.shape != (self.dims.n_u,):
            raise ValueError(
                f"control bounds must have shape ({self.dims.n_u},), "
                f"got {lo.shape} and {hi.shape}"
            )
        if np.any(lo > hi):
            bad = int(np.argmax(lo > hi))
            raise ValueError(f"control_lower[{bad}]={lo[bad]} exceeds control_upper[{bad}]={hi[bad]}")
        self.control_lower = lo
        self.control_upper = hi

    @property
    def bounded(self) -> bool:
        return bool(np.any(np.isfinite(self.control_lower)) or np.any(np.isfinite(self.control_upper)))

    def clamp(self, u: Array) -> Array:
        return np.clip(u, self.control_lower, self.control_upper)


def _require_finite(name: str, arr: Array, context: str = "") -> Array:
    arr = np.asarray(arr, dtype=float)
    if not np.all(np.isfinite(arr)):
        idx = np.argwhere(~np.isfinite(np.atleast_1d(arr)))[0]
        where = ",".join(str(int(i)) for i in idx)
        suffix = f" ({context})" if context else ""
        raise DerivativeError(f"{name}[{where}] is non-finite{suffix}")
    return arr


def fd_jacobian(fun: Callable[[Array], Array], z: Array) -> Array:
    """Central-difference Jacobian with the pinned step h = max(1e-6, 1e-6|z_j|)."""
    z = np.asarray(z, dtype=float)
    y0 = np.atleast_1d(np.asarray(fun(z), dtype=float))
    jac = np.empty((y0.size, z.size))
    steps = np.maximum(_FD_REL, _FD_REL * np.abs(z))
    for j in range(z.size):
        zp = z.copy()
        zp[j] += steps[j]
        zm = z.copy()
        zm[j] -= steps[j]
        fp = np.atleast_1d(np.asarray(fun(zp), dtype=float))
        fm = np.atleast_1d(np.asarray(fun(zm), dtype=float))
        jac[:, j] = (fp - fm) / (2.0 * steps[j])
    return jac


def fd_gradient(fun: Callable[[Array], float], z: Array) -> Array:
    return fd_jacobian(lambda v: np.array([fun(v)]), z)[0]


def fd_hessian(fun: Callable[[Array], float], z: Array) -> Array:
    """Symmetric 4-point central-difference Hessian of a scalar function."""
    z = np.asarray(z, dtype=float)
    n = z.size
    steps = np.maximum(_FD2_REL, _FD2_REL * np.abs(z))
    hess = np.empty((n, n))
    for i in range(n):
        for j in range(i, n):
            hi, hj = steps[i], steps[j]
            zpp = z.copy()
            zpp[i] += hi
            zpp[j] += hj
            zpm = z.copy()
            zpm[i] += hi
            zpm[j] -= hj
            zmp = z.copy()
            zmp[i] -= hi
            zmp[j] += hj
            zmm = z.copy()
            zmm[i] -= hi
            zmm[j] -= hj
            val = (fun(zpp) - fun(zpm) - fun(zmp) + fun(zmm)) / (4.0 * hi * hj)
            hess[i, j] = val
            hess[j, i] = val
    return hess


def eval_dynamics_derivs(
    model: OcpModel,
    x: Array,
    u: Array,
    w: Array,
    v: Optional[Array] = None,
) -> DynamicsDerivs:
    """Dynamics derivatives at (x, u, w); v is the value gradient contracted
    against the second derivatives. v=None skips the contractions (they come
    back as zeros), which is what the Gauss-Newton setting wants."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    w = np.asarray(w, dtype=float)
    dims = model.dims
    if model.dynamics_jacobians is not None:
        f_x, f_u, f_w = model.dynamics_jacobians(x, u, w)
    else:
        f_x = fd_jacobian(lambda z: model.dynamics(z, u, w), x)
        f_u = fd_jacobian(lambda z: model.dynamics(x, z, w), u)
        f_w = fd_jacobian(lambda z: model.dynamics(x, u, z), w)
    if v is None:
        vfxx = np.zeros((dims.n_x, dims.n_x))
        vfuu = np.zeros((dims.n_u, dims.n_u))
        vfww = np.zeros((dims.n_w, dims.n_w))
    elif model.dynamics_hessians is not None:
        vfxx, vfuu, vfww = model.dynamics_hessians(x, u, w, np.asarray(v, dtype=float))
    else:
        vv = np.asarray(v, dtype=float)
        vfxx = fd_hessian(lambda z: float(vv @ model.dynamics(z, u, w)), x)
        vfuu = fd_hessian(lambda z: float(vv @ model.dynamics(x, z, w)), u)
        vfww = fd_hessian(lambda z: float(vv @ model.dynamics(x, u, z)), w)
    out = DynamicsDerivs(
        f_x=_require_finite("f_x", f_x),
        f_u=_require_finite("f_u", f_u),
        f_w=_require_finite("f_w", f_w),
        vfxx=_require_finite("vfxx", vfxx),
        vfuu=_require_finite("vfuu", vfuu),
        vfww=_require_finite("vfww", vfww),
    )
    _check_shape("f_x", out.f_x, (dims.n_x, dims.n_x))
    _check_shape("f_u", out.f_u, (dims.n_x, dims.n_u))
    _check_shape("f_w", out.f_w, (dims.n_x, dims.n_w))
    return out


def eval_cost_derivs(model: OcpModel, x: Array, u: Array, t: int) -> CostDerivs:
    """Running-cost gradient/Hessian blocks at (x, u, t), analytic or FD."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if model.running_cost_derivs is not None:
        cd = model.running_cost_derivs(x, u, t)
    else:
        n_x, n_u = model.dims.n_x, model.dims.n_u

        def joint(z: Array) -> float:
            return float(model.running_cost(z[:n_x], z[n_x:], t))

        z0 = np.concatenate([x, u])
        grad = fd_gradient(joint, z0)
        hess = fd_hessian(joint, z0)
        cd = CostDerivs(
            l_x=grad[:n_x],
            l_u=grad[n_x:],
            l_xx=hess[:n_x, :n_x],
            l_uu=hess[n_x:, n_x:],
            l_xu=hess[:n_x, n_x:],
        )
    for name in ("l_x", "l_u", "l_xx", "l_uu", "l_xu"):
        _require_finite(name, getattr(cd, name), context=f"t={t}")
    return cd


def eval_terminal_derivs(model: OcpModel, x: Array) -> tuple[float, Array, Array]:
    """Terminal cost value, gradient, and Hessian at x."""
    x = np.asarray(x, dtype=float)
    value = float(model.terminal_cost(x))
    if model.terminal_cost_derivs is not None:
        l_x, l_xx = model.terminal_cost_derivs(x)
    else:
        l_x = fd_gradient(lambda z: float(model.terminal_cost(z)), x)
        l_xx = fd_hessian(lambda z: float(model.terminal_cost(z)), x)
    if not np.isfinite(value):
        raise DerivativeError("terminal cost is non-finite")
    return value, _require_finite("lf_x", l_x), _require_finite("lf_xx", l_xx)


def _check_shape(name: str, arr: Array, shape: tuple) -> None:
    if arr.shape != shape:
        raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")


@dataclass
class DerivativeCheck:
    """Result of comparing analytic first derivatives against central FD."""

    tol: float
    max_rel_err: float
    worst_block: str
    flagged: list  # (point_index, block, entry_index, rel_err)

    @property
    def passed(self) -> bool:
        return not self.flagged


def _rel_err(a: Array, b: Array) -> Array:
    # Relative where entries are large, absolute where they are tiny; a pure
    # ratio would flag FD roundoff noise against exact zeros.
    return np.abs(a - b) / (1.0 + np.abs(b))


def check_derivatives(
    model: OcpModel,
    rng: np.random.Generator,
    n_points: int = 20,
    tol: float = 1e-4,
    x_scale: float = 1.0,
    w_scale: float = 1e-3,
    point_sampler: Optional[Callable[[np.random.Generator], tuple]] = None,
) -> DerivativeCheck:
    """Compare the model's first derivatives against central finite differences
    at randomly sampled interior points.

    Controls are drawn strictly inside the box (10% inset on finite sides).
    Entries with relative error above tol are flagged.
    """
    dims = model.dims
    flagged: list = []
    max_err = 0.0
    worst = ""
    for p in range(n_points):
        if point_sampler is not None:
            x, u, w, t = point_sampler(rng)
        else:
            x = x_scale * rng.standard_normal(dims.n_x)
            u = _interior_control(model, rng)
            w = w_scale * rng.standard_normal(dims.n_w)
            t = int(rng.integers(0, dims.horizon))
        dd = eval_dynamics_derivs(model, x, u, w, v=None)
        cd = eval_cost_derivs(model, x, u, t)
        _, lf_x, _ = eval_terminal_derivs(model, x)
        pairs = {
            "f_x": (dd.f_x, fd_jacobian(lambda z: model.dynamics(z, u, w), x)),
            "f_u": (dd.f_u, fd_jacobian(lambda z: model.dynamics(x, z, w), u)),
            "f_w": (dd.f_w, fd_jacobian(lambda z: model.dynamics(x, u, z), w)),
            "l_x": (cd.l_x, fd_gradient(lambda z: float(model.running_cost(z, u, t)), x)),
            "l_u": (cd.l_u, fd_gradient(lambda z: float(model.running_cost(x, z, t)), u)),
            "lf_x": (lf_x, fd_gradient(lambda z: float(model.terminal_cost(z)), x)),
        }
        for block, (analytic, numeric) in pairs.items():
            err = _rel_err(np.atleast_1d(analytic), np.atleast_1d(numeric))
            block_max = float(err.max())
            if block_max > max_err:
                max_err = block_max
                worst = block
            if block_max > tol:
                for idx in np.argwhere(err > tol):
                    flagged.append((p, block, tuple(int(i) for i in idx), float(err[tuple(idx)])))
    return DerivativeCheck(tol=tol, max_rel_err=max_err, worst_block=worst, flagged=flagged)


def _interior_control(model: OcpModel, rng: np.random.Generator) -> Array:
    lo, hi = model.control_lower, model.control_upper
    u = np.empty(model.dims.n_u)
    for j in range(u.size):
        if np.isfinite(lo[j]) and np.isfinite(hi[j]):
            span = hi[j] - lo[j]
            u[j] = rng.uniform(lo[j] + 0.1 * span, hi[j] - 0.1 * span)
        else:
            u[j] = rng.standard_normal()
    return u
