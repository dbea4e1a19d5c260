"""Disturbance samples: true distributions, empirical datasets, moments.

The solver only ever sees a finite dataset of disturbance samples, shape
(T, N, n_w): N draws per timestep. The true distribution is used exclusively
for drawing datasets and for out-of-sample evaluation.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

Array = np.ndarray


@dataclass
class TrueDistribution:
    """Disturbance law, one of: uniform_box, gaussian, discrete.

    uniform_box: low/high are per-component bounds.
    gaussian:    mean (n_w,) and cov (n_w, n_w).
    discrete:    atoms (M, n_w) with probs (M,).
    """

    kind: str
    low: Optional[Array] = None
    high: Optional[Array] = None
    mean: Optional[Array] = None
    cov: Optional[Array] = None
    atoms: Optional[Array] = None
    probs: Optional[Array] = None

    def __post_init__(self) -> None:
        if self.kind == "uniform_box":
            self.low = np.atleast_1d(np.asarray(self.low, dtype=float))
            self.high = np.atleast_1d(np.asarray(self.high, dtype=float))
            if self.low.shape != self.high.shape:
                raise ValueError("uniform_box low/high shape mismatch")
            if np.any(self.low > self.high):
                raise ValueError("uniform_box requires low <= high")
        elif self.kind == "gaussian":
            self.mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
            self.cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
            if self.cov.shape != (self.mean.size, self.mean.size):
                raise ValueError("gaussian cov shape mismatch")
        elif self.kind == "discrete":
            self.atoms = np.atleast_2d(np.asarray(self.atoms, dtype=float))
            self.probs = np.atleast_1d(np.asarray(self.probs, dtype=float))
            if self.probs.shape != (self.atoms.shape[0],):
                raise ValueError("discrete probs shape mismatch")
            if np.any(self.probs < 0) or abs(self.probs.sum() - 1.0) > 1e-9:
                raise ValueError("discrete probs must be nonnegative and sum to 1")
        else:
            raise ValueError(f"unknown distribution kind {self.kind!r}")

    @property
    def dim(self) -> int:
        if self.kind == "uniform_box":
            return self.low.size
        if self.kind == "gaussian":
            return self.mean.size
        return self.atoms.shape[1]

    def sample(self, rng: np.random.Generator, *shape: int) -> Array:
        """Draw samples with the given leading shape; trailing axis is n_w."""
        if self.kind == "uniform_box":
            return rng.uniform(self.low, self.high, size=tuple(shape) + (self.dim,))
        if self.kind == "gaussian":
            chol = np.linalg.cholesky(self.cov + 1e-300 * np.eye(self.dim))
            z = rng.standard_normal(tuple(shape) + (self.dim,))
            return self.mean + z @ chol.T
        idx = rng.choice(self.atoms.shape[0], size=tuple(shape), p=self.probs)
        return self.atoms[idx]


def uniform_box(halfwidth: float | Array, dim: int) -> TrueDistribution:
    hw = np.broadcast_to(np.asarray(halfwidth, dtype=float), (dim,)).copy()
    return TrueDistribution(kind="uniform_box", low=-hw, high=hw)


def gaussian(mean: float | Array, var: float | Array, dim: int) -> TrueDistribution:
    m = np.broadcast_to(np.asarray(mean, dtype=float), (dim,)).copy()
    v = np.broadcast_to(np.asarray(var, dtype=float), (dim,)).copy()
    return TrueDistribution(kind="gaussian", mean=m, cov=np.diag(v))


def empirical_moments(samples: Array) -> tuple[Array, Array]:
    """Per-step mean (T, n_w) and population covariance (T, n_w, n_w).

    Population convention (divisor N): the covariance appears inside the
    penalty constant via the bias-variance identity
    (1/N) sum_i ||a - s_i||^2 = ||a - mean||^2 + tr(cov), which only holds
    with divisor N.
    """
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 3:
        raise ValueError(f"samples must have shape (T, N, n_w), got {samples.shape}")
    means = samples.mean(axis=1)
    centered = samples - means[:, None, :]
    covs = np.einsum("tij,tik->tjk", centered, centered) / samples.shape[1]
    return means, covs


@dataclass
class DisturbanceDataset:
    """Finite disturbance sample with cached per-step moments."""

    samples: Array  # (T, N, n_w)
    means: Array = field(init=False)
    covs: Array = field(init=False)

    def __post_init__(self) -> None:
        self.samples = np.asarray(self.samples, dtype=float)
        if self.samples.ndim != 3:
            raise ValueError(f"samples must have shape (T, N, n_w), got {self.samples.shape}")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("dataset contains non-finite samples")
        self.means, self.covs = empirical_moments(self.samples)

    @property
    def horizon(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def n_w(self) -> int:
        return self.samples.shape[2]


def draw_dataset(dist: TrueDistribution, horizon: int, n_samples: int, rng: np.random.Generator) -> DisturbanceDataset:
    """Draw (T, N, n_w) iid samples from the true distribution."""
    if horizon < 1 or n_samples < 1:
        raise ValueError("horizon and n_samples must be positive")
    return DisturbanceDataset(samples=dist.sample(rng, horizon, n_samples))


def zero_dataset(horizon: int, n_w: int) -> DisturbanceDataset:
    """Single all-zeros atom per step; the degenerate dataset the baselines use."""
    return DisturbanceDataset(samples=np.zeros((horizon, 1, n_w)))


def save_dataset(ds: DisturbanceDataset, path) -> None:
    """CSV with columns t, i, w_1..w_{n_w}; floats round-trip exactly."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "i"] + [f"w_{j}" for j in range(1, ds.n_w + 1)])
        for t in range(ds.horizon):
            for i in range(ds.n_samples):
                writer.writerow([t, i] + [repr(float(v)) for v in ds.samples[t, i]])


def load_dataset(path) -> DisturbanceDataset:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        n_w = len(header) - 2
        if n_w < 1 or header[:2] != ["t", "i"]:
            raise ValueError(f"unrecognized dataset header {header!r}")
        rows = [(int(r[0]), int(r[1]), [float(v) for v in r[2:]]) for r in reader]
    if not rows:
        raise ValueError("dataset file is empty")
    horizon = max(r[0] for r in rows) + 1
    n_samples = max(r[1] for r in rows) + 1
    samples = np.full((horizon, n_samples, n_w), np.nan)
    for t, i, vals in rows:
        samples[t, i] = vals
    if np.any(np.isnan(samples)):
        raise ValueError("dataset file has missing (t, i) rows")
    return DisturbanceDataset(samples=samples)
