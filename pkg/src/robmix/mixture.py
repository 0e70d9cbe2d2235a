"""Mixture-of-regressions solvers.

Four solvers share one E/C/M skeleton:

* ``mle``  — classical soft EM maximizing the marginal log-likelihood.
* ``cem``  — classification EM: a hard assignment step between E and M,
  maximizing the complete-data log-likelihood.
* ``cat``  — CEM with the per-component OLS replaced by least trimmed
  squares (plus an efficiency-restoring refit on the unflagged members),
  maximizing the half-trimmed complete-data log-likelihood and flagging
  outliers component-wise.
* ``fast-cat`` — like ``cat`` but each iteration discards the flagged
  observations and refits a plain mixture MLE on the survivors, which
  becomes the next parameter state.

Every solver runs multiple independent random starts and keeps the start
with the best final objective.

Two details make the hard-assignment solvers well-behaved:

* The random subsets inside a component's LTS update are seeded from the
  component's member set, so revisiting a partition reproduces the same
  parameters exactly and a repeated partition is a true fixed point.
* The first E/C/M cycle completes the initialization (subset fits carry
  unreliable variances, which inflate the trimmed objective); the recorded
  trace starts at the first full-data parameter state.  From there the
  solvers stop when the partition repeats, when the objective is
  stationary, or when an iteration fails to improve the monitored
  objective (the previous state is kept, so recorded traces are
  non-decreasing).
"""

from __future__ import annotations

import enum
import zlib
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import rankdata

from .core import (
    LOG_2PI,
    Dataset,
    Component,
    MixtureModel,
    Partition,
    PosteriorMatrix,
    component_log_densities,
    complete_log_likelihood,
    default_trim_count,
    observed_log_likelihood,
    sigma_floor,
    trimmed_complete_log_likelihood,
)
from .linreg import (
    DegenerateDesignError,
    _floored,
    flag_outliers,
    lts_fit,
    ols_fit,
    reweighted_fit,
)

MONOTONE_SLACK = 1e-9
EXTRA_START_RETRIES = 3
REFIT_MAX_ITER = 50
# Largest allowed ratio between component variances.  A component that
# interpolates a handful of points would otherwise ride the likelihood to
# the variance floor and dominate every objective.  Fitted states where the
# cap binds are rejected as degenerate (see _run_start_hard).
VARIANCE_RATIO_CAP = 50.0
_CAT_REWEIGHT_ITER = True
_START_TAG = 1
_MSTEP_TAG = 3
_LTS_TAG = 7


class Solver(str, enum.Enum):
    EM_MLE = "mle"
    CEM = "cem"
    CAT = "cat"
    FAST_CAT = "fast-cat"


class ComponentSizeError(ValueError):
    """A component has too few members for its M-step estimator."""


class FitFailureError(RuntimeError):
    """No random start completed; carries per-attempt diagnostics."""

    def __init__(self, message: str, failures: list[str]):
        super().__init__(message)
        self.failures = failures


@dataclass(frozen=True)
class FitConfig:
    """Solver configuration.

    ``init_sample_size`` defaults to max(P+2, 10) when left as None,
    resolved against the dataset at fit time.
    """

    k: int
    solver: Solver = Solver.CAT
    n_starts: int = 20
    max_iter: int = 200
    tol: float = 1e-8
    init_sample_size: int | None = None
    outlier_cutoff: float = 2.5
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "solver", Solver(self.solver))
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if self.n_starts < 1:
            raise ValueError("n_starts must be at least 1")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if self.tol < 0:
            raise ValueError("tol must be non-negative")
        if self.outlier_cutoff <= 0:
            raise ValueError("outlier_cutoff must be positive")


@dataclass(frozen=True, eq=False)
class FitResult:
    """Fitted model plus assignments, flagged outliers and diagnostics.

    ``outliers`` holds sorted 1-based observation indices; it is empty for
    the ``mle`` and ``cem`` solvers, which do not flag.  ``trace`` holds the
    monitored objective per iteration of the winning start.
    """

    model: MixtureModel
    partition: Partition
    posterior: PosteriorMatrix
    outliers: np.ndarray
    trace: np.ndarray
    converged: bool
    iterations: int
    objective: float
    stop_reason: str
    n_restarts: int = 0


def derive_seed(*parts: int) -> int:
    """Stable 64-bit seed derived from a tuple of integers."""
    ss = np.random.SeedSequence(tuple(int(p) for p in parts))
    return int(ss.generate_state(1, np.uint64)[0])


def e_step(data: Dataset, model: MixtureModel) -> PosteriorMatrix:
    """Posterior membership probabilities, computed in log space."""
    logw = component_log_densities(data, model) + np.log(model.pis)[None, :]
    logw -= logw.max(axis=1, keepdims=True)
    w = np.exp(logw)
    w /= w.sum(axis=1, keepdims=True)
    return PosteriorMatrix(w)


def c_step(posterior: PosteriorMatrix) -> Partition:
    """Hard assignment to the most probable component (ties -> smallest k)."""
    return Partition(np.argmax(posterior.w, axis=1) + 1)


def m_step_ols(data: Dataset, part: Partition, k: int) -> MixtureModel:
    """Per-component OLS update with pi_k = n_k / N and floored variances."""
    floor = sigma_floor(data.y)
    return _m_step_ols(data, part, k, floor)


def _bounded_model(pis, betas, sigma2s, floor: float) -> MixtureModel:
    """Assemble a model with floored variances and a capped variance ratio."""
    s2 = np.maximum(np.asarray(sigma2s, dtype=float), floor)
    s2 = np.maximum(s2, s2.max() / VARIANCE_RATIO_CAP)
    return MixtureModel(tuple(
        Component(pi=p, beta=b, sigma2=v) for p, b, v in zip(pis, betas, s2)
    ))


def _m_step_ols(data: Dataset, part: Partition, k: int, floor: float) -> MixtureModel:
    counts = part.counts(k)
    min_size = data.p + 2
    if counts.min() < min_size:
        raise ComponentSizeError(
            f"component of size {counts.min()} is below the OLS minimum {min_size}"
        )
    fits = [ols_fit(data.y[part.members(j)], data.x[part.members(j)])
            for j in range(1, k + 1)]
    return _bounded_model(counts / data.n, [f.beta for f in fits],
                          [f.sigma2 for f in fits], floor)


def m_step_lts(data: Dataset, part: Partition, k: int, cfg: FitConfig):
    """Robust per-component update: LTS, flag, refit on unflagged members.

    Returns the updated model and the sorted 1-based indices flagged as
    outliers across all components.
    """
    floor = sigma_floor(data.y)
    model, mask = _m_step_lts(data, part, k, derive_seed(cfg.seed, _MSTEP_TAG),
                              cfg.outlier_cutoff, floor, incumbent=None)
    return model, np.flatnonzero(mask) + 1


def _lts_min_size(p: int) -> int:
    return max(p + 2, 2 * (p + 1))


def _member_rng(start_seed: int, j: int, rows: np.ndarray) -> np.random.Generator:
    """Generator keyed on the component's member set, so an unchanged
    partition reproduces the exact same robust fit (true fixed points)."""
    digest = zlib.crc32(rows.tobytes())
    return np.random.default_rng(derive_seed(start_seed, _LTS_TAG, j, digest))


def _m_step_lts(
    data: Dataset,
    part: Partition,
    k: int,
    start_seed: int,
    cutoff: float,
    floor: float,
    incumbent: MixtureModel | None,
    reweight: bool = True,
) -> tuple[MixtureModel, np.ndarray]:
    """Robust component update.

    With ``reweight`` the returned parameters are the reweighted estimates
    (OLS on the unflagged members, cutoff-corrected scale) — the reporting
    form.  Without it each component keeps the raw LTS coefficients and the
    *profile* scale (trimmed RSS / h), which is exactly the scale that
    maximizes the component's trimmed likelihood term: the iteration form.
    Flags are always derived from the consistency-corrected raw scale.
    """
    counts = part.counts(k)
    min_size = _lts_min_size(data.p)
    if counts.min() < min_size:
        raise ComponentSizeError(
            f"component of size {counts.min()} is below the LTS minimum {min_size}"
        )
    betas, sigma2s = [], []
    flag_mask = np.zeros(data.n, dtype=bool)
    for j in range(1, k + 1):
        rows = part.members(j)
        yj, xj = data.y[rows], data.x[rows]
        warm = incumbent.betas[j - 1][None, :] if incumbent is not None else None
        raw = lts_fit(yj, xj, rng=_member_rng(start_seed, j, rows),
                      candidate_betas=warm)
        raw = _floored(raw, floor)
        if reweight:
            fit, flags = reweighted_fit(yj, xj, raw, cutoff)
            betas.append(fit.beta)
            sigma2s.append(fit.sigma2)
        else:
            flags = flag_outliers(raw, yj, xj, cutoff)
            h = int(raw.inlier_mask.sum())
            betas.append(raw.beta)
            sigma2s.append(raw.objective / h)
        flag_mask[rows[flags]] = True
    return _bounded_model(counts / data.n, betas, sigma2s, floor), flag_mask


class _StartFailed(Exception):
    """Internal signal: abandon the current random start."""


def _initial_model(data: Dataset, cfg: FitConfig, rng: np.random.Generator,
                   floor: float, n0: int) -> MixtureModel:
    """Algorithm-style initialization: per component, fit a random n0-subset.

    The robust solvers use LTS subset fits, the others OLS.  Mixing
    proportions start uniform.
    """
    robust = cfg.solver in (Solver.CAT, Solver.FAST_CAT)
    comps = []
    for _ in range(cfg.k):
        rows = rng.choice(data.n, size=n0, replace=False)
        yj, xj = data.y[rows], data.x[rows]
        try:
            fit = lts_fit(yj, xj, rng=rng) if robust else ols_fit(yj, xj)
        except DegenerateDesignError as exc:
            raise _StartFailed(f"degenerate initialization subset: {exc}") from exc
        comps.append(Component(pi=1.0 / cfg.k, beta=fit.beta,
                               sigma2=max(fit.sigma2, floor)))
    return MixtureModel(tuple(comps))


def _weighted_m_step(data: Dataset, w: np.ndarray, floor: float) -> MixtureModel:
    """Soft EM M-step: weighted least squares per component."""
    nk = w.sum(axis=0)
    if nk.min() < data.p + 2:
        raise _StartFailed(f"effective component weight collapsed to {nk.min():.3f}")
    betas, sigma2s = [], []
    for j in range(w.shape[1]):
        sw = np.sqrt(w[:, j])
        try:
            beta = ols_fit(data.y * sw, data.x * sw[:, None]).beta
        except DegenerateDesignError as exc:
            raise _StartFailed(f"weighted design degenerate: {exc}") from exc
        resid = data.y - data.x @ beta
        betas.append(beta)
        sigma2s.append(float(w[:, j] @ resid**2 / nk[j]))
    return _bounded_model(nk / data.n, betas, sigma2s, floor)


def _em_iterations(
    data: Dataset,
    model: MixtureModel,
    floor: float,
    tol: float,
    max_iter: int,
) -> tuple[MixtureModel, list[float], bool, str]:
    """Soft EM loop on the marginal log-likelihood.

    Stops on a stationary objective; an objective decrease (possible only
    through variance flooring or numerical noise) reverts to the previous
    state, keeping the trace non-decreasing.
    """
    trace: list[float] = []
    prev_obj = None
    prev_model = model
    converged = False
    reason = "max_iter"
    for _ in range(max_iter):
        obj = observed_log_likelihood(data, model)
        if prev_obj is not None:
            if obj < prev_obj - MONOTONE_SLACK * (1.0 + abs(prev_obj)):
                model = prev_model
                converged = True
                reason = "objective_decrease"
                break
            trace.append(obj)
            if abs(obj - prev_obj) <= tol * (1.0 + abs(prev_obj)):
                converged = True
                reason = "objective_tol"
                break
        else:
            trace.append(obj)
        w = e_step(data, model).w
        prev_model, prev_obj = model, obj
        model = _weighted_m_step(data, w, floor)
    return model, trace, converged, reason


@dataclass
class _StartOutcome:
    model: MixtureModel
    outlier_mask: np.ndarray
    trace: list[float]
    converged: bool
    stop_reason: str
    selection_value: float = field(default=-np.inf)


def _run_start_em(data: Dataset, cfg: FitConfig, rng: np.random.Generator,
                  floor: float, n0: int, start_seed: int) -> _StartOutcome:
    model = _initial_model(data, cfg, rng, floor, n0)
    model, trace, converged, reason = _em_iterations(
        data, model, floor, cfg.tol, cfg.max_iter
    )
    return _StartOutcome(model, np.zeros(data.n, dtype=bool), trace, converged, reason)


def _checked_partition(data: Dataset, model: MixtureModel, k: int,
                       min_size: int) -> Partition:
    part = c_step(e_step(data, model))
    if part.counts(k).min() < min_size:
        raise _StartFailed(f"component shrank below the required size {min_size}")
    return part


def _run_start_hard(data: Dataset, cfg: FitConfig, rng: np.random.Generator,
                    floor: float, n0: int, start_seed: int) -> _StartOutcome:
    solver = cfg.solver
    robust = solver in (Solver.CAT, Solver.FAST_CAT)
    min_size = _lts_min_size(data.p) if robust else data.p + 2

    if solver == Solver.CEM:
        def objective(m, p):
            return complete_log_likelihood(data, m, p)
    else:
        def objective(m, p):
            return trimmed_complete_log_likelihood(data, m, p)

    def m_step(model, part):
        """One parameter update; returns (model, outlier mask)."""
        if solver == Solver.CAT:
            return _m_step_lts(data, part, cfg.k, start_seed, cfg.outlier_cutoff,
                               floor, incumbent=model, reweight=_CAT_REWEIGHT_ITER)
        if solver == Solver.FAST_CAT:
            # Flags come from per-component robust fits; the parameter update
            # is a plain mixture MLE on the unflagged observations.
            _, mask = _m_step_lts(data, part, cfg.k, start_seed,
                                  cfg.outlier_cutoff, floor, incumbent=model,
                                  reweight=False)
            survivors = np.flatnonzero(~mask)
            if survivors.size < cfg.k * (data.p + 2):
                raise _StartFailed("too few unflagged observations to refit")
            refit = _em_iterations(data.take(survivors), model, floor,
                                   cfg.tol, REFIT_MAX_ITER)[0]
            return refit, mask
        return _m_step_ols(data, part, cfg.k, floor), np.zeros(data.n, dtype=bool)

    # Subset-based initial variances are unreliable, so the first E/C/M
    # cycle completes the initialization; monitoring starts at the first
    # full-data parameter state.
    model = _initial_model(data, cfg, rng, floor, n0)
    part = _checked_partition(data, model, cfg.k, min_size)
    model, mask = m_step(model, part)

    trace: list[float] = []
    prev: tuple | None = None  # (model, partition, mask, objective)
    seen_partitions: set[int] = set()
    converged = False
    reason = "max_iter"
    for _ in range(cfg.max_iter):
        part = _checked_partition(data, model, cfg.k, min_size)
        obj = objective(model, part)
        if prev is not None:
            if solver != Solver.FAST_CAT and \
                    obj < prev[3] - MONOTONE_SLACK * (1.0 + abs(prev[3])):
                # The step failed to improve; keep the previous state so the
                # recorded trace stays non-decreasing.
                model, _, mask, _ = prev
                converged, reason = True, "objective_decrease"
                break
            trace.append(obj)
            if np.array_equal(part.z, prev[1].z):
                converged, reason = True, "partition_fixed"
                break
            if abs(obj - prev[3]) <= cfg.tol * (1.0 + abs(prev[3])):
                converged, reason = True, "objective_tol"
                break
        else:
            trace.append(obj)
        digest = zlib.crc32(part.z.tobytes())
        if digest in seen_partitions:
            # Parameter updates are a deterministic function of the
            # partition, so a revisited partition closes a cycle.
            converged, reason = True, "partition_cycle"
            break
        seen_partitions.add(digest)
        prev = (model, part, mask, obj)
        model, mask = m_step(model, part)

    if solver == Solver.CAT and prev is not None:
        # Reporting form: reweighted refit on the final partition.
        final_part = prev[1] if reason == "objective_decrease" else part
        model, mask = _m_step_lts(data, final_part, cfg.k, start_seed,
                                  cfg.outlier_cutoff, floor, incumbent=model,
                                  reweight=True)

    # A component stuck at the variance-ratio cap has collapsed onto a
    # handful of interpolated points; such states ride the likelihood's
    # degeneracy and are not admissible fits.
    s2 = model.sigma2s
    if s2.min() * VARIANCE_RATIO_CAP <= s2.max() * (1.0 + 1e-9) and s2.min() < s2.max():
        raise _StartFailed("component variance collapsed against the ratio cap")

    return _StartOutcome(model, mask, trace, converged, reason)


def fit(data: Dataset, cfg: FitConfig) -> FitResult:
    """Run ``cfg.n_starts`` independent random starts and keep the best.

    Starts that lose a component below the estimator's minimum size are
    abandoned and retried (a bounded number of extra attempts), matching the
    restart policy described in the module docstring.  Deterministic given
    (data, cfg): every attempt draws from its own seed-derived stream.
    """
    n0 = cfg.init_sample_size if cfg.init_sample_size is not None \
        else max(data.p + 2, 10)
    if n0 < data.p + 1:
        raise ValueError(f"init_sample_size={n0} is below P+1={data.p + 1}")
    needed = cfg.k * max(2 * (data.p + 1), n0)
    if data.n < needed:
        raise ValueError(
            f"n={data.n} observations cannot support k={cfg.k} components "
            f"(need at least {needed})"
        )
    floor = sigma_floor(data.y)
    run_start = _run_start_em if cfg.solver == Solver.EM_MLE else _run_start_hard

    outcomes: list[_StartOutcome] = []
    failures: list[str] = []
    attempts = 0
    # Abandoned starts are retried: beyond the small bonus for undersized
    # components, each degeneracy rejection frees one extra attempt, capped
    # at twice the requested number of starts.
    max_attempts = 2 * cfg.n_starts + EXTRA_START_RETRIES
    while len(outcomes) < cfg.n_starts and attempts < max_attempts:
        start_seed = derive_seed(cfg.seed, _START_TAG, attempts)
        rng = np.random.default_rng(start_seed)
        attempts += 1
        try:
            outcome = run_start(data, cfg, rng, floor, n0, start_seed)
        except (_StartFailed, ComponentSizeError, DegenerateDesignError) as exc:
            failures.append(f"start {attempts - 1}: {exc}")
            continue
        outcomes.append(outcome)

    if not outcomes:
        raise FitFailureError(
            f"all {attempts} starts failed for solver {cfg.solver.value}",
            failures,
        )
    best = _select_start(data, cfg, outcomes)

    posterior = e_step(data, best.model)
    partition = c_step(posterior)
    final_obj = _final_objective(data, cfg.solver, best.model, partition)
    if cfg.solver in (Solver.CAT, Solver.FAST_CAT):
        # Reported outliers follow the flagging rule applied to the final
        # state: observation i is an outlier when its standardized residual
        # under its assigned component exceeds the cutoff.
        outlier_mask = _definition_flags(data, best.model, partition,
                                         cfg.outlier_cutoff)
    else:
        outlier_mask = best.outlier_mask
    outliers = np.flatnonzero(outlier_mask) + 1
    return FitResult(
        model=best.model,
        partition=partition,
        posterior=posterior,
        outliers=outliers,
        trace=np.asarray(best.trace, dtype=float),
        converged=best.converged,
        iterations=len(best.trace),
        objective=final_obj,
        stop_reason=best.stop_reason,
        n_restarts=len(failures),
    )


def _winsorized_complete_ll(data: Dataset, model: MixtureModel, part: Partition,
                            cutoff: float) -> float:
    """Complete-data log-likelihood with residuals capped at cutoff * sigma_k.

    Observations beyond the flagging cutoff contribute the density at the
    cutoff boundary instead of their own, so the value stays meaningful on
    contaminated data: a state cannot profit from hiding outliers inside an
    inflated-variance component, nor from flagging points wholesale.  (The
    variance-ratio guard removes the remaining degenerate-scale states this
    value could otherwise be gamed with.)
    """
    z0 = part.z - 1
    betas = model.betas
    s2 = model.sigma2s[z0]
    resid2 = (data.y - np.einsum("ij,ij->i", data.x, betas[z0])) ** 2
    capped = np.minimum(resid2, cutoff**2 * s2)
    dens = np.sum(-0.5 * (LOG_2PI + np.log(s2)) - capped / (2.0 * s2))
    return float(dens + part.counts(model.k) @ np.log(model.pis))


def _select_start(data: Dataset, cfg: FitConfig,
                  outcomes: list[_StartOutcome]) -> _StartOutcome:
    """Pick the winning start.

    The soft solver compares marginal log-likelihoods and plain CEM its own
    complete-data log-likelihood.  The robust solvers cannot use a single
    likelihood: the trimmed objective is not comparable across partition
    shapes (a start can inflate it by hiding a subpopulation inside one
    component's trimmed half) and untrimmed ones credit spurious tight
    clusters of contaminated points as components.  Each failure mode is
    caught by the other criterion, so the robust solvers keep the start
    with the best worst-rank under the two: the winsorized complete-data
    log-likelihood and the trimmed objective.
    """
    if cfg.solver == Solver.EM_MLE:
        vals = [o.trace[-1] if o.trace else -np.inf for o in outcomes]
        for o, v in zip(outcomes, vals):
            o.selection_value = v
        return outcomes[int(np.argmax(vals))]
    parts = [c_step(e_step(data, o.model)) for o in outcomes]
    if cfg.solver == Solver.CEM:
        vals = [complete_log_likelihood(data, o.model, p)
                for o, p in zip(outcomes, parts)]
        for o, v in zip(outcomes, vals):
            o.selection_value = v
        return outcomes[int(np.argmax(vals))]
    win = [_winsorized_complete_ll(data, o.model, p, cfg.outlier_cutoff)
           for o, p in zip(outcomes, parts)]
    trim = []
    for o, p in zip(outcomes, parts):
        try:
            trim.append(trimmed_complete_log_likelihood(data, o.model, p))
        except ValueError:
            trim.append(-np.inf)
    worst_rank = np.minimum(rankdata(win), rankdata(trim))
    for o, v in zip(outcomes, worst_rank):
        o.selection_value = float(v)
    return outcomes[int(np.argmax(worst_rank))]


def _definition_flags(data: Dataset, model: MixtureModel, part: Partition,
                      cutoff: float) -> np.ndarray:
    """Outlier mask at a fitted state: |y_i - x_i' beta_{z_i}| standardized
    by the assigned component's scale exceeds the cutoff."""
    z0 = part.z - 1
    resid = data.y - np.einsum("ij,ij->i", data.x, model.betas[z0])
    return np.abs(resid) / np.sqrt(model.sigma2s[z0]) > cutoff


def _final_objective(data: Dataset, solver: Solver, model: MixtureModel,
                     part: Partition) -> float:
    if solver == Solver.EM_MLE:
        return observed_log_likelihood(data, model)
    if solver == Solver.CEM:
        return complete_log_likelihood(data, model, part)
    try:
        return trimmed_complete_log_likelihood(data, model, part)
    except ValueError:
        # An empty component can appear in the reporting partition of a
        # non-converged start; fall back to the untrimmed objective.
        return complete_log_likelihood(data, model, part)
