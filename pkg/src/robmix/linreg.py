"""Single-component estimators: ordinary least squares and FAST-LTS.

The least-trimmed-squares solver minimizes the sum of the h smallest squared
residuals.  It follows the classical fast scheme: many random elemental fits,
two concentration steps each, then the best few candidates iterated to a
concentration fixed point.  A concentration step refits OLS on the h
observations with the smallest squared residuals and never increases the
trimmed objective.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
from scipy.stats import chi2

DEFAULT_N_SUBSETS = 500
N_WARM_STEPS = 2
N_REFINE = 10
MAX_C_STEPS = 100
RANK_TOL = 1e-10


class DegenerateDesignError(ValueError):
    """Design matrix (or every candidate subset) is numerically rank-deficient."""


@dataclass(frozen=True, eq=False)
class RegressionFit:
    """Result of a single-component regression fit.

    ``inlier_mask`` marks the retained observations: all of them for OLS, the
    h smallest-squared-residual ones for LTS.  ``objective`` is the sum of
    squared residuals over the retained set.
    """

    beta: np.ndarray
    sigma2: float
    residuals: np.ndarray
    inlier_mask: np.ndarray
    objective: float


def _check_design(y: np.ndarray, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    if y.ndim != 1 or x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ValueError("y must be (n,) and x must be (n, p+1) with matching n")
    return y, x


def _svd_solve(y: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Least-squares coefficients with an explicit rank check."""
    u, s, vt = np.linalg.svd(x, full_matrices=False)
    if s[-1] < RANK_TOL * s[0] or s[0] == 0.0:
        raise DegenerateDesignError(
            f"design is rank-deficient (smallest/largest singular value "
            f"= {s[-1]:.3e}/{s[0]:.3e})"
        )
    return vt.T @ ((u.T @ y) / s)


def ols_fit(y: np.ndarray, x: np.ndarray) -> RegressionFit:
    """Ordinary least squares with maximum-likelihood scale (RSS / n)."""
    y, x = _check_design(y, x)
    n, p1 = x.shape
    if n < p1:
        raise ValueError(f"need at least {p1} observations, got {n}")
    beta = _svd_solve(y, x)
    residuals = y - x @ beta
    rss = float(residuals @ residuals)
    return RegressionFit(
        beta=beta,
        sigma2=rss / n,
        residuals=residuals,
        inlier_mask=np.ones(n, dtype=bool),
        objective=rss,
    )


@lru_cache(maxsize=4096)
def lts_consistency_factor(h: int, n: int) -> float:
    """Variance inflation making the trimmed scale consistent under normality.

    The raw LTS scale averages squared residuals over the central h/n mass of
    a normal sample; dividing by the truncated second moment restores
    consistency.  E[Z^2 1{|Z| <= c}] equals the chi-square(3) CDF at c^2.
    """
    alpha = h / n
    if alpha >= 1.0:
        return 1.0
    q = chi2.ppf(alpha, 1)
    return float(alpha / chi2.cdf(q, 3))


@lru_cache(maxsize=256)
def cutoff_variance_factor(cutoff: float) -> float:
    """Consistency correction for a scale computed from |r|/sigma <= cutoff
    survivors (same truncated-normal argument, fixed cutoff instead of an
    order statistic)."""
    c2 = cutoff * cutoff
    return float(chi2.cdf(c2, 1) / chi2.cdf(c2, 3))


def _solve_batch(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve a stack of small square systems; singular members fall back to
    the pseudo-inverse (their candidates simply score poorly)."""
    try:
        return np.linalg.solve(a, b[..., None])[..., 0]
    except np.linalg.LinAlgError:
        return np.einsum("mij,mj->mi", np.linalg.pinv(a), b)


class _CStepWorkspace:
    """Precomputed per-observation moments so each concentration step is a
    single membership-matrix matmul instead of per-candidate gathers."""

    def __init__(self, y: np.ndarray, x: np.ndarray):
        n, p1 = x.shape
        self.y, self.x, self.p1 = y, x, p1
        self.xx = (x[:, :, None] * x[:, None, :]).reshape(n, p1 * p1)
        self.xy = x * y[:, None]

    def _resid2(self, betas: np.ndarray) -> np.ndarray:
        r = betas @ self.x.T
        np.subtract(self.y[None, :], r, out=r)
        np.square(r, out=r)
        return r

    def step(self, betas: np.ndarray, h: int):
        """One concentration step for a stack of candidates.

        Returns (refit betas, trimmed RSS of the *input* betas, membership
        matrix of the retained sets).  Candidates whose refit system is
        unsolvable come back as zero vectors; they simply rank poorly.
        """
        resid2 = self._resid2(betas)
        keep = np.argpartition(resid2, h - 1, axis=1)[:, :h]
        rows = np.arange(betas.shape[0])[:, None]
        obj = resid2[rows, keep].sum(axis=1)
        member = np.zeros(resid2.shape)
        member[rows, keep] = 1.0
        a = (member @ self.xx).reshape(-1, self.p1, self.p1)
        b = member @ self.xy
        out = _solve_batch(a, b)
        bad = ~np.isfinite(out).all(axis=1)
        if bad.any():
            out[bad] = 0.0
        return out, obj, member

    def trimmed_rss(self, betas: np.ndarray, h: int) -> np.ndarray:
        resid2 = self._resid2(betas)
        resid2.partition(h - 1, axis=1)
        return resid2[:, :h].sum(axis=1)


def _elemental_subsets(rng: np.random.Generator, m: int, n: int, p1: int) -> np.ndarray:
    """m index sets of size p1, duplicates redrawn until each set is distinct."""
    idx = rng.integers(0, n, size=(m, p1))
    while True:
        s = np.sort(idx, axis=1)
        bad = (np.diff(s, axis=1) == 0).any(axis=1)
        if not bad.any():
            return idx
        idx[bad] = rng.integers(0, n, size=(int(bad.sum()), p1))


def lts_fit(
    y: np.ndarray,
    x: np.ndarray,
    h: int | None = None,
    n_subsets: int = DEFAULT_N_SUBSETS,
    seed: int = 0,
    rng: np.random.Generator | None = None,
    candidate_betas: np.ndarray | None = None,
) -> RegressionFit:
    """Approximate least-trimmed-squares fit.

    Parameters
    ----------
    h : retained count; defaults to floor(n/2) + 1 (highest breakdown point).
    n_subsets : number of random elemental candidates.
    seed : RNG seed; ignored when an explicit ``rng`` generator is supplied.
    candidate_betas : optional (m, p+1) warm-start coefficients added to the
        candidate pool (used by the mixture solvers to seed the incumbent).

    Returns a fit whose ``objective`` is the sum of the h smallest squared
    residuals and whose ``sigma2`` is the consistency-corrected trimmed scale.
    Ties in squared residuals are broken toward the lower index when the
    retained set is reported.
    """
    y, x = _check_design(y, x)
    n, p1 = x.shape
    if h is None:
        h = n // 2 + 1
    if h < p1:
        raise ValueError(f"h={h} is below the p+1={p1} needed for a fit")
    if h > n:
        raise ValueError(f"h={h} exceeds the number of observations n={n}")
    if n_subsets < 1:
        raise ValueError("n_subsets must be positive")
    # Reject designs no subset can rescue.
    s = np.linalg.svd(x, compute_uv=False)
    if s[-1] < RANK_TOL * s[0] or s[0] == 0.0:
        raise DegenerateDesignError("design is rank-deficient; all subsets degenerate")
    if h == n:
        return ols_fit(y, x)

    if rng is None:
        rng = np.random.default_rng(seed)
    subsets = _elemental_subsets(rng, n_subsets, n, p1)
    betas = _solve_batch(x[subsets], y[subsets])
    if candidate_betas is not None:
        extra = np.atleast_2d(np.asarray(candidate_betas, dtype=float))
        betas = np.vstack([betas, extra])
    finite = np.isfinite(betas).all(axis=1)
    if not finite.any():
        raise DegenerateDesignError("all candidate subsets degenerate")
    betas[~finite] = 0.0

    ws = _CStepWorkspace(y, x)
    for _ in range(N_WARM_STEPS):
        betas = ws.step(betas, h)[0]
    # The ranking step doubles as the first refinement iteration: it scores
    # the warmed candidates and advances them one concentration step.
    advanced, warm_obj, warm_member = ws.step(betas, h)
    order = np.argsort(warm_obj, kind="stable")[:N_REFINE]
    cur = advanced[order]
    prev_member = warm_member[order]
    final_obj = None
    for _ in range(MAX_C_STEPS):
        nxt, cur_obj, cur_member = ws.step(cur, h)
        if np.array_equal(cur_member, prev_member):
            # Retained sets repeated: every candidate is at a fixed point.
            final_obj = cur_obj
            break
        cur, prev_member = nxt, cur_member
    if final_obj is None:
        final_obj = ws.trimmed_rss(cur, h)

    best = int(np.argmin(final_obj))
    beta = cur[best]
    residuals = y - x @ beta
    order = np.argsort(residuals**2, kind="stable")[:h]
    objective = float((residuals[order] ** 2).sum())
    mask = np.zeros(n, dtype=bool)
    mask[order] = True
    sigma2 = objective / h * lts_consistency_factor(h, n)
    return RegressionFit(
        beta=beta,
        sigma2=sigma2,
        residuals=residuals,
        inlier_mask=mask,
        objective=objective,
    )


def flag_outliers(fit: RegressionFit, y: np.ndarray, x: np.ndarray, cutoff: float = 2.5):
    """Boolean mask of observations whose standardized absolute residual
    exceeds ``cutoff`` under the fit's scale."""
    if not fit.sigma2 > 0.0:
        raise ValueError("fit.sigma2 must be positive to standardize residuals")
    y, x = _check_design(y, x)
    resid = y - x @ fit.beta
    return np.abs(resid) / np.sqrt(fit.sigma2) > cutoff


def reweighted_fit(
    y: np.ndarray,
    x: np.ndarray,
    raw: RegressionFit,
    cutoff: float = 2.5,
) -> tuple[RegressionFit, np.ndarray]:
    """Efficiency-restoring refit: OLS on the points the raw LTS scale does
    not flag, with a cutoff-matched consistency correction on the scale.

    Returns the refit together with the flag mask.  Falls back to the raw fit
    when too few points survive or the survivor design is degenerate.
    """
    flags = flag_outliers(raw, y, x, cutoff)
    keep = ~flags
    p1 = x.shape[1]
    m = int(keep.sum())
    if m >= p1 + 1:
        try:
            ref = ols_fit(y[keep], x[keep])
        except DegenerateDesignError:
            return raw, flags
        residuals = y - x @ ref.beta
        # Degrees-of-freedom corrected scale; the plain ML divisor would
        # bias the scale low and over-flag downstream.
        sigma2 = ref.objective / (m - p1) * cutoff_variance_factor(cutoff)
        fit = RegressionFit(
            beta=ref.beta,
            sigma2=sigma2,
            residuals=residuals,
            inlier_mask=keep,
            objective=ref.objective,
        )
        return fit, flags
    return raw, flags


def _floored(fit: RegressionFit, floor: float) -> RegressionFit:
    """Copy of ``fit`` with sigma2 raised to at least ``floor``."""
    if fit.sigma2 >= floor:
        return fit
    return replace(fit, sigma2=floor)
