"""Type-2 Wasserstein distance between discrete distributions, and the
penalty-to-constraint certificate bound.

The squared distance is the optimal-transport LP with squared Euclidean
ground cost. Uniform equal-size supports reduce to an assignment problem
(Birkhoff), which is much faster and exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment, linprog

Array = np.ndarray


@dataclass
class DiscreteDistribution:
    """Finitely supported distribution: atoms (M, d) with weights (M,)."""

    atoms: Array
    weights: Array

    def __post_init__(self) -> None:
        self.atoms = np.atleast_2d(np.asarray(self.atoms, dtype=float))
        self.weights = np.atleast_1d(np.asarray(self.weights, dtype=float))
        if self.weights.shape != (self.atoms.shape[0],):
            raise ValueError(
                f"weights shape {self.weights.shape} does not match {self.atoms.shape[0]} atoms"
            )
        if np.any(self.weights < 0):
            raise ValueError("weights must be nonnegative")
        if abs(self.weights.sum() - 1.0) > 1e-9:
            raise ValueError(f"weights must sum to 1, got {self.weights.sum()!r}")

    @property
    def dim(self) -> int:
        return self.atoms.shape[1]

    @property
    def is_uniform(self) -> bool:
        return bool(np.allclose(self.weights, 1.0 / self.weights.size, atol=1e-12))


def uniform_atoms(atoms: Array) -> DiscreteDistribution:
    atoms = np.atleast_2d(np.asarray(atoms, dtype=float))
    m = atoms.shape[0]
    return DiscreteDistribution(atoms=atoms, weights=np.full(m, 1.0 / m))


def _sqdist_matrix(a: Array, b: Array) -> Array:
    diff = a[:, None, :] - b[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def w2_distance(p: DiscreteDistribution, q: DiscreteDistribution, method: str = "auto") -> float:
    """Type-2 Wasserstein distance between two discrete distributions.

    method: "auto" picks the assignment path for uniform equal-size supports
    and the LP otherwise; "lp" and "assignment" force a path.
    """
    if p.dim != q.dim:
        raise ValueError(f"atom dimension mismatch: {p.dim} vs {q.dim}")
    if p.atoms.shape[0] == 1 and q.atoms.shape[0] == 1:
        # Single atoms: the coupling is forced, the distance is the norm.
        return float(np.linalg.norm(p.atoms[0] - q.atoms[0]))
    if method == "auto":
        same_size = p.atoms.shape[0] == q.atoms.shape[0]
        method = "assignment" if (same_size and p.is_uniform and q.is_uniform) else "lp"
    if method == "assignment":
        if p.atoms.shape[0] != q.atoms.shape[0] or not (p.is_uniform and q.is_uniform):
            raise ValueError("assignment path requires uniform weights and equal support sizes")
        cost = _sqdist_matrix(p.atoms, q.atoms)
        rows, cols = linear_sum_assignment(cost)
        sq = float(cost[rows, cols].mean())
    elif method == "lp":
        sq = _transport_lp(p, q)
    else:
        raise ValueError(f"unknown method {method!r}")
    return float(np.sqrt(max(sq, 0.0)))


def _transport_lp(p: DiscreteDistribution, q: DiscreteDistribution) -> float:
    """Squared W2 via the transport-polytope LP (HiGHS)."""
    m, n = p.atoms.shape[0], q.atoms.shape[0]
    cost = _sqdist_matrix(p.atoms, q.atoms).ravel()
    a_eq = np.zeros((m + n, m * n))
    for i in range(m):
        a_eq[i, i * n : (i + 1) * n] = 1.0
    for j in range(n):
        a_eq[m + j, j::n] = 1.0
    b_eq = np.concatenate([p.weights, q.weights])
    # The marginal constraints are rank-deficient by one; drop the last row.
    res = linprog(cost, A_eq=a_eq[:-1], b_eq=b_eq[:-1], bounds=(0, None), method="highs")
    if not res.success:
        raise RuntimeError(f"transport LP failed: {res.message}")
    return float(res.fun)


@dataclass(frozen=True)
class AmbiguityParams:
    """Wasserstein ball radius theta, penalty weight lambda, and horizon T."""

    theta: float
    lam: float
    horizon: int

    def __post_init__(self) -> None:
        if self.theta < 0:
            raise ValueError("theta must be nonnegative")
        if self.lam <= 0:
            raise ValueError("lam must be positive")
        if self.horizon < 1:
            raise ValueError("horizon must be positive")


def guaranteed_bound(params: AmbiguityParams, sup_penalized_estimate: float) -> float:
    """Upper bound on the worst-case cost over the per-step W2 ball:
    lambda * T * theta**2 plus the (estimated) optimal penalized value."""
    return params.lam * params.horizon * params.theta**2 + float(sup_penalized_estimate)
