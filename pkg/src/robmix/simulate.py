"""Synthetic data generators for the benchmark study.

Two generating models are built in:

* model 1 — two components over two standard-normal covariates, lines
  (1, -1, 1) and (1, 3, 1), default priors (0.43, 0.57);
* model 2 — three components over one covariate, lines (1, -1), (1, 3)
  and (-1, 0.1), default priors (0.3, 0.4, 0.3).

Five noise scenarios: standard normal errors (1), Student-t errors with 1
or 3 degrees of freedom (2, 3), and normal errors with a 5% or 10% chance
per observation of an additive mean shift drawn uniformly from (4, 6)
(4, 5).  Shifted observations are the ground-truth outliers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Component, Dataset, MixtureModel

MODEL_BETAS = {
    1: ((1.0, -1.0, 1.0), (1.0, 3.0, 1.0)),
    2: ((1.0, -1.0), (1.0, 3.0), (-1.0, 0.1)),
}
BALANCED_PRIORS = {1: (0.43, 0.57), 2: (0.3, 0.4, 0.3)}
UNBALANCED_PRIORS = {1: (0.38, 0.62), 2: (0.2, 0.32, 0.48)}
SHIFT_RATE = {4: 0.05, 5: 0.10}
SHIFT_RANGE = (4.0, 6.0)


@dataclass(frozen=True)
class ScenarioSpec:
    """Generator configuration; ``priors=None`` selects the balanced default."""

    model: int
    scenario: int
    n: int
    priors: tuple | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if self.model not in MODEL_BETAS:
            raise ValueError(f"model must be 1 or 2, got {self.model}")
        if self.scenario not in (1, 2, 3, 4, 5):
            raise ValueError(f"scenario must be 1..5, got {self.scenario}")
        if self.n < 50:
            raise ValueError("n must be at least 50")
        priors = self.priors
        if priors is None:
            priors = BALANCED_PRIORS[self.model]
        priors = tuple(float(p) for p in priors)
        if len(priors) != len(MODEL_BETAS[self.model]):
            raise ValueError("priors length must match the model's components")
        if abs(sum(priors) - 1.0) > 1e-10:
            raise ValueError("priors must sum to 1")
        object.__setattr__(self, "priors", priors)

    @property
    def k(self) -> int:
        return len(MODEL_BETAS[self.model])

    @property
    def p(self) -> int:
        return len(MODEL_BETAS[self.model][0]) - 1


@dataclass(frozen=True, eq=False)
class SimulatedData:
    """Generated dataset plus the ground truth behind it."""

    data: Dataset
    true_z: np.ndarray
    true_outlier: np.ndarray
    true_model: MixtureModel


def scenario_true_model(spec: ScenarioSpec) -> MixtureModel:
    """Generating parameters of a scenario as a mixture model (unit noise
    variance per component)."""
    betas = MODEL_BETAS[spec.model]
    return MixtureModel(tuple(
        Component(pi=spec.priors[j], beta=np.asarray(betas[j]), sigma2=1.0)
        for j in range(len(betas))
    ))


def sample_student_t(df: float, rng: np.random.Generator, size=None):
    """Standard Student-t draw(s) via the normal / chi-square ratio
    Z / sqrt(V / df)."""
    if df <= 0:
        raise ValueError("df must be positive")
    z = rng.standard_normal(size)
    v = rng.chisquare(df, size)
    return z / np.sqrt(v / df)


def _noise(scenario: int, n: int, rng: np.random.Generator) -> np.ndarray:
    if scenario == 2:
        return sample_student_t(1.0, rng, n)
    if scenario == 3:
        return sample_student_t(3.0, rng, n)
    return rng.standard_normal(n)


def generate(spec: ScenarioSpec) -> SimulatedData:
    """Draw one dataset.  Deterministic given ``spec`` (seed included).

    Draw order is fixed: covariates, labels, noise, shift indicators, shift
    magnitudes.  Mean shifts are applied with the per-observation rate of
    the scenario, independently of the component label.
    """
    rng = np.random.default_rng(spec.seed)
    betas = np.array(MODEL_BETAS[spec.model])
    k, p1 = betas.shape

    covariates = rng.standard_normal((spec.n, p1 - 1))
    x = np.column_stack([np.ones(spec.n), covariates])
    z = rng.choice(np.arange(1, k + 1), size=spec.n, p=spec.priors)
    eps = _noise(spec.scenario, spec.n, rng)

    gamma = np.zeros(spec.n)
    outlier = np.zeros(spec.n, dtype=bool)
    if spec.scenario in SHIFT_RATE:
        outlier = rng.random(spec.n) < SHIFT_RATE[spec.scenario]
        magnitudes = rng.uniform(*SHIFT_RANGE, size=spec.n)
        gamma = np.where(outlier, magnitudes, 0.0)

    y = np.einsum("ij,ij->i", x, betas[z - 1]) + gamma + eps
    data = Dataset(y, x)
    return SimulatedData(data=data, true_z=z.astype(np.int64),
                         true_outlier=outlier, true_model=scenario_true_model(spec))
