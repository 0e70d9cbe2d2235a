"""Shared containers and likelihood objectives for mixture-of-regressions fitting.

Conventions used across the package:

* Design matrices carry an explicit leading intercept column of ones, so a
  model with P covariates has P+1 coefficients (element 0 is the intercept).
* Component labels are 1-based: partition entries live in ``1..K`` and
  observation indices reported to users live in ``1..N``.  Internal numpy
  work is 0-based; conversion happens at these type boundaries.
* All floating point work is float64.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

LOG_2PI = float(np.log(2.0 * np.pi))

# Relative floor applied to component variances, as a fraction of var(y).
# Unbounded likelihoods arise when a component interpolates its members and
# its variance is driven to zero; a floor keeps every objective finite.
SIGMA_FLOOR_FRACTION = 1e-6


def sigma_floor(y: np.ndarray) -> float:
    """Smallest admissible component variance for a response vector."""
    v = SIGMA_FLOOR_FRACTION * float(np.var(np.asarray(y, dtype=float)))
    return max(v, float(np.finfo(float).tiny))


def default_trim_count(n: int) -> int:
    """Number of retained observations for half-trimming: floor(n/2) + 1."""
    return n // 2 + 1


@dataclass(frozen=True, eq=False)
class Dataset:
    """Response vector plus design matrix with explicit intercept column.

    Attributes
    ----------
    y : ndarray, shape (N,)
        Response values.
    x : ndarray, shape (N, P+1)
        Design matrix; column 0 must be identically 1.0.
    """

    y: np.ndarray
    x: np.ndarray

    def __post_init__(self) -> None:
        y = np.asarray(self.y, dtype=float)
        x = np.asarray(self.x, dtype=float)
        if y.ndim != 1:
            raise ValueError("y must be one-dimensional")
        if x.ndim != 2:
            raise ValueError("x must be two-dimensional")
        if x.shape[0] != y.shape[0]:
            raise ValueError("y and x must have the same number of rows")
        if y.shape[0] < 1:
            raise ValueError("dataset needs at least one observation")
        if x.shape[1] < 1:
            raise ValueError("x needs at least the intercept column")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(x))):
            raise ValueError("dataset contains non-finite entries")
        if not np.all(x[:, 0] == 1.0):
            raise ValueError("column 0 of x must be identically 1.0")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        """Number of covariates, excluding the intercept column."""
        return self.x.shape[1] - 1

    @classmethod
    def from_covariates(cls, y: np.ndarray, covariates: np.ndarray) -> "Dataset":
        """Build a dataset from raw covariates, prepending the intercept column."""
        y = np.asarray(y, dtype=float)
        c = np.asarray(covariates, dtype=float)
        if c.ndim == 1:
            c = c[:, None]
        x = np.column_stack([np.ones(len(y)), c])
        return cls(y, x)

    def take(self, rows: np.ndarray) -> "Dataset":
        """Row subset as a new dataset (0-based row positions)."""
        return Dataset(self.y[rows], self.x[rows])


@dataclass(frozen=True, eq=False)
class Component:
    """One mixture component: weight, regression coefficients, noise variance."""

    pi: float
    beta: np.ndarray
    sigma2: float

    def __post_init__(self) -> None:
        beta = np.asarray(self.beta, dtype=float)
        if beta.ndim != 1 or not np.all(np.isfinite(beta)):
            raise ValueError("beta must be a finite vector")
        if not 0.0 < self.pi <= 1.0:
            raise ValueError(f"pi must lie in (0, 1], got {self.pi}")
        if not self.sigma2 > 0.0:
            raise ValueError(f"sigma2 must be positive, got {self.sigma2}")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "pi", float(self.pi))
        object.__setattr__(self, "sigma2", float(self.sigma2))


@dataclass(frozen=True, eq=False)
class MixtureModel:
    """K regression components with mixing proportions summing to one."""

    components: tuple

    def __post_init__(self) -> None:
        comps = tuple(self.components)
        if len(comps) < 1:
            raise ValueError("model needs at least one component")
        widths = {c.beta.shape[0] for c in comps}
        if len(widths) != 1:
            raise ValueError("components disagree on coefficient dimension")
        total = sum(c.pi for c in comps)
        if abs(total - 1.0) > 1e-10:
            raise ValueError(f"mixing proportions sum to {total}, expected 1")
        object.__setattr__(self, "components", comps)

    @property
    def k(self) -> int:
        return len(self.components)

    @property
    def pis(self) -> np.ndarray:
        return np.array([c.pi for c in self.components])

    @property
    def betas(self) -> np.ndarray:
        """Coefficient matrix, shape (K, P+1)."""
        return np.stack([c.beta for c in self.components])

    @property
    def sigma2s(self) -> np.ndarray:
        return np.array([c.sigma2 for c in self.components])


@dataclass(frozen=True, eq=False)
class Partition:
    """Hard assignment of each observation to one component (labels 1..K)."""

    z: np.ndarray

    def __post_init__(self) -> None:
        z = np.asarray(self.z)
        if z.ndim != 1 or z.shape[0] < 1:
            raise ValueError("z must be a non-empty vector")
        if not np.issubdtype(z.dtype, np.integer):
            zi = z.astype(int)
            if not np.array_equal(zi, z):
                raise ValueError("z must contain integers")
            z = zi
        if z.min() < 1:
            raise ValueError("partition labels are 1-based")
        object.__setattr__(self, "z", z.astype(np.int64))

    @property
    def n(self) -> int:
        return self.z.shape[0]

    def counts(self, k: int) -> np.ndarray:
        """Component sizes n_1..n_k; raises if any label exceeds k."""
        if self.z.max() > k:
            raise ValueError(f"partition label {self.z.max()} exceeds k={k}")
        return np.bincount(self.z, minlength=k + 1)[1:]

    def members(self, k: int) -> np.ndarray:
        """0-based row positions of component k (1-based label)."""
        return np.flatnonzero(self.z == k)


@dataclass(frozen=True, eq=False)
class PosteriorMatrix:
    """Posterior membership probabilities, one row per observation."""

    w: np.ndarray

    def __post_init__(self) -> None:
        w = np.asarray(self.w, dtype=float)
        if w.ndim != 2:
            raise ValueError("w must be a matrix")
        if np.any(w < 0.0) or np.any(w > 1.0):
            raise ValueError("posterior entries must lie in [0, 1]")
        if np.any(np.abs(w.sum(axis=1) - 1.0) > 1e-10):
            raise ValueError("posterior rows must sum to 1")
        object.__setattr__(self, "w", w)


def gaussian_log_density(y, mu, sigma2):
    """log N(y; mu, sigma2).  Accepts scalars or broadcastable arrays."""
    sigma2 = np.asarray(sigma2, dtype=float)
    if np.any(sigma2 <= 0.0):
        raise ValueError("sigma2 must be positive")
    out = -0.5 * (LOG_2PI + np.log(sigma2)) - (np.asarray(y, dtype=float) - mu) ** 2 / (2.0 * sigma2)
    return float(out) if np.isscalar(y) and out.ndim == 0 else out


def component_log_densities(data: Dataset, model: MixtureModel) -> np.ndarray:
    """Matrix of log N(y_i; x_i' beta_k, sigma_k^2), shape (N, K)."""
    resid = data.y[:, None] - data.x @ model.betas.T
    s2 = model.sigma2s
    return -0.5 * (LOG_2PI + np.log(s2))[None, :] - resid**2 / (2.0 * s2)[None, :]


def observed_log_likelihood(data: Dataset, model: MixtureModel) -> float:
    """Marginal log-likelihood sum_i log sum_k pi_k N(y_i; x_i' beta_k, sigma_k^2).

    Evaluated in log space (log-sum-exp), so individual mixture terms may
    underflow to densities far below float range without corrupting the sum.
    """
    ld = component_log_densities(data, model) + np.log(model.pis)[None, :]
    return float(logsumexp(ld, axis=1).sum())


def _validate_partition(part: Partition, data: Dataset, model: MixtureModel) -> None:
    if part.n != data.n:
        raise ValueError("partition length does not match dataset")
    if part.z.max() > model.k:
        raise ValueError("partition labels exceed the number of components")


def complete_log_likelihood(data: Dataset, model: MixtureModel, part: Partition) -> float:
    """Hard-assignment log-likelihood: each observation scored under its own
    component, plus n_k * log(pi_k) prior terms."""
    _validate_partition(part, data, model)
    ld = component_log_densities(data, model)
    own = ld[np.arange(data.n), part.z - 1]
    counts = part.counts(model.k)
    return float(own.sum() + counts @ np.log(model.pis))


def trimmed_complete_log_likelihood(data: Dataset, model: MixtureModel, part: Partition) -> float:
    """Half-trimmed variant of the complete-data log-likelihood.

    Per component, the member log-densities are ranked decreasingly and only
    the top h_k = floor(n_k/2) + 1 survive, each carrying one log(pi_k) prior
    term.  Every component must be non-empty.
    """
    _validate_partition(part, data, model)
    counts = part.counts(model.k)
    if counts.min() < 1:
        raise ValueError("trimmed likelihood requires every component non-empty")
    ld = component_log_densities(data, model)
    total = 0.0
    for k in range(model.k):
        vals = ld[part.z == k + 1, k]
        h = default_trim_count(vals.shape[0])
        top = np.partition(vals, vals.shape[0] - h)[vals.shape[0] - h:]
        total += top.sum() + h * np.log(model.components[k].pi)
    return float(total)
