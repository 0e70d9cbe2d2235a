import itertools

import numpy as np
import pytest
from mpmath import mp
from scipy.integrate import quad
from scipy.stats import norm

from robmix.linreg import (
    DegenerateDesignError,
    _CStepWorkspace,
    cutoff_variance_factor,
    flag_outliers,
    lts_consistency_factor,
    lts_fit,
    ols_fit,
    reweighted_fit,
)


def exhaustive_lts_objective(y, x, h):
    """Independent oracle: minimize RSS over every h-subset by OLS.

    The least-trimmed-squares optimum equals the best h-subset's own RSS.
    """
    n = len(y)
    best = np.inf
    for subset in itertools.combinations(range(n), h):
        idx = list(subset)
        beta, *_ = np.linalg.lstsq(x[idx], y[idx], rcond=None)
        rss = float(((y[idx] - x[idx] @ beta) ** 2).sum())
        best = min(best, rss)
    return best


class TestOls:
    def test_exact_interpolation(self):
        fit = ols_fit(np.array([1.0, 3.0]), np.array([[1.0, 0.0], [1.0, 1.0]]))
        assert fit.beta == pytest.approx([1.0, 2.0], abs=1e-12)
        assert fit.sigma2 == pytest.approx(0.0, abs=1e-20)
        assert fit.inlier_mask.all()

    def test_intercept_only_gives_mean_and_population_variance(self):
        y = np.array([1.0, 2.0, 6.0])
        fit = ols_fit(y, np.ones((3, 1)))
        assert fit.beta[0] == pytest.approx(y.mean(), rel=1e-12)
        assert fit.sigma2 == pytest.approx(np.var(y), rel=1e-12)

    def test_matches_high_precision_normal_equations(self):
        rng = np.random.default_rng(42)
        x = np.column_stack([np.ones(15), rng.standard_normal((15, 2))])
        y = rng.standard_normal(15)
        fit = ols_fit(y, x)
        mp.dps = 50
        xm = mp.matrix(x.tolist())
        ym = mp.matrix([[v] for v in y])
        beta = mp.lu_solve(xm.T * xm, xm.T * ym)
        for j in range(3):
            assert fit.beta[j] == pytest.approx(float(beta[j]), abs=1e-9)

    def test_rank_deficient_design_raises(self):
        x = np.column_stack([np.ones(6), np.full(6, 2.0)])
        with pytest.raises(DegenerateDesignError):
            ols_fit(np.arange(6.0), x)

    def test_too_few_rows_raises(self):
        with pytest.raises(ValueError):
            ols_fit(np.array([1.0]), np.array([[1.0, 2.0]]))


class TestLtsFit:
    def test_exact_fit_with_gross_outliers(self):
        x = np.column_stack([np.ones(10), np.arange(10.0)])
        y = 1.0 + 2.0 * x[:, 1]
        y[7:] += 500.0
        fit = lts_fit(y, x, h=6, seed=0)
        assert fit.beta == pytest.approx([1.0, 2.0], abs=1e-9)
        assert fit.objective == pytest.approx(0.0, abs=1e-10)
        assert fit.inlier_mask.sum() == 6
        assert not fit.inlier_mask[7:].any()

    def test_matches_combinatorial_oracle(self):
        rng = np.random.default_rng(7)
        for trial in range(20):
            n = int(rng.integers(8, 13))
            x = np.column_stack([np.ones(n), rng.standard_normal(n)])
            y = rng.standard_normal(n)
            y[: n // 4] += 8.0
            h = n // 2 + 1
            fit = lts_fit(y, x, h=h, seed=trial)
            oracle = exhaustive_lts_objective(y, x, h)
            assert fit.objective >= oracle - 1e-8
            assert fit.objective == pytest.approx(oracle, abs=1e-8)

    def test_close_to_ols_on_clean_data(self):
        # The raw half-sample estimate trades efficiency for breakdown, so
        # only its reweighted form tracks OLS tightly on clean draws; the
        # raw coefficients must still stay in the neighbourhood on average.
        rng = np.random.default_rng(11)
        raw_gaps, rw_gaps = [], []
        for trial in range(50):
            x = np.column_stack([np.ones(200), rng.standard_normal(200)])
            y = 1.0 + 2.0 * x[:, 1] + rng.standard_normal(200)
            raw = lts_fit(y, x, seed=trial)
            rw, _ = reweighted_fit(y, x, raw)
            ols = ols_fit(y, x)
            raw_gaps.append(np.abs(raw.beta - ols.beta).max())
            rw_gaps.append(np.abs(rw.beta - ols.beta).max())
        assert np.mean(raw_gaps) < 0.35
        assert np.mean(np.array(rw_gaps) < 0.15) >= 0.96

    def test_breakdown_under_heavy_contamination(self):
        rng = np.random.default_rng(3)
        for magnitude in (1e3, 1e6):
            x = np.column_stack([np.ones(100), rng.normal(0.0, 2.0, 100)])
            y = 1.0 + 2.0 * x[:, 1] + rng.normal(0.0, 0.5, 100)
            bad = rng.choice(100, 40, replace=False)
            y[bad] += magnitude
            lts = lts_fit(y, x, seed=9)
            ols = ols_fit(y, x)
            assert abs(lts.beta[1] - 2.0) < 0.1
            assert abs(ols.beta[1] - 2.0) > 1.0

    def test_concentration_step_never_increases_objective(self):
        rng = np.random.default_rng(13)
        for _ in range(1000):
            n = int(rng.integers(10, 40))
            x = np.column_stack([np.ones(n), rng.standard_normal(n)])
            y = rng.standard_normal(n) * rng.uniform(0.5, 3.0)
            h = n // 2 + 1
            ws = _CStepWorkspace(y, x)
            betas = rng.standard_normal((4, 2))
            before = ws.trimmed_rss(betas, h)
            after = ws.trimmed_rss(ws.step(betas, h)[0], h)
            assert np.all(after <= before + 1e-9 * (1.0 + before))

    def test_exact_fit_property_randomized(self):
        rng = np.random.default_rng(17)
        for trial in range(100):
            n = int(rng.integers(12, 30))
            p = int(rng.integers(1, 3))
            x = np.column_stack([np.ones(n), rng.standard_normal((n, p))])
            beta = rng.standard_normal(p + 1)
            y = x @ beta
            h = n // 2 + 1
            corrupt = rng.choice(n, n - h, replace=False)
            y[corrupt] += rng.uniform(5.0, 50.0, size=n - h)
            fit = lts_fit(y, x, h=h, seed=trial)
            assert fit.objective <= 1e-10

    def test_affine_equivariance(self):
        rng = np.random.default_rng(23)
        x = np.column_stack([np.ones(40), rng.standard_normal(40)])
        y = rng.standard_normal(40)
        y[:8] += 10.0
        c = 3.7
        base = lts_fit(y, x, seed=5)
        scaled = lts_fit(c * y, x, seed=5)
        assert scaled.beta == pytest.approx((c * base.beta).tolist(), rel=1e-9)
        assert np.sqrt(scaled.sigma2) == pytest.approx(c * np.sqrt(base.sigma2), rel=1e-9)

    def test_deterministic_given_seed(self):
        rng = np.random.default_rng(29)
        x = np.column_stack([np.ones(50), rng.standard_normal(50)])
        y = rng.standard_normal(50)
        a = lts_fit(y, x, seed=4)
        b = lts_fit(y, x, seed=4)
        assert np.array_equal(a.beta, b.beta)
        assert a.objective == b.objective
        assert np.array_equal(a.inlier_mask, b.inlier_mask)

    def test_h_validation(self):
        x = np.column_stack([np.ones(10), np.arange(10.0)])
        y = np.arange(10.0)
        with pytest.raises(ValueError):
            lts_fit(y, x, h=1)
        with pytest.raises(ValueError):
            lts_fit(y, x, h=11)

    def test_rank_deficient_raises(self):
        x = np.column_stack([np.ones(12), np.ones(12) * 4.0])
        with pytest.raises(DegenerateDesignError):
            lts_fit(np.arange(12.0), x)

    def test_h_equal_n_matches_ols(self):
        rng = np.random.default_rng(31)
        x = np.column_stack([np.ones(20), rng.standard_normal(20)])
        y = rng.standard_normal(20)
        lts = lts_fit(y, x, h=20, seed=0)
        ols = ols_fit(y, x)
        assert lts.beta == pytest.approx(ols.beta.tolist(), rel=1e-12)
        assert lts.sigma2 == pytest.approx(ols.sigma2, rel=1e-12)


class TestScaleFactors:
    def test_no_correction_at_full_sample(self):
        assert lts_consistency_factor(25, 25) == 1.0

    def test_matches_quadrature_oracle(self):
        # independent derivation: the raw trimmed scale estimates
        # E[Z^2 | central alpha mass] * alpha^{-1}... computed by quadrature
        for h, n in ((51, 100), (26, 40), (75, 100)):
            alpha = h / n
            c = norm.ppf((1 + alpha) / 2)
            truncated_second_moment, _ = quad(lambda z: z * z * norm.pdf(z), -c, c)
            assert lts_consistency_factor(h, n) == pytest.approx(
                alpha / truncated_second_moment, rel=1e-9)

    def test_cutoff_factor_matches_quadrature(self):
        for cutoff in (2.0, 2.5, 3.0):
            mass = 2 * norm.cdf(cutoff) - 1
            mom, _ = quad(lambda z: z * z * norm.pdf(z), -cutoff, cutoff)
            assert cutoff_variance_factor(cutoff) == pytest.approx(mass / mom * mass / mass,
                                                                   rel=1e-9)

    def test_raw_scale_consistent_on_clean_normal(self):
        rng = np.random.default_rng(37)
        vals = []
        for trial in range(40):
            x = np.column_stack([np.ones(500), rng.standard_normal(500)])
            y = x @ np.array([0.5, -1.0]) + rng.standard_normal(500)
            vals.append(lts_fit(y, x, seed=trial).sigma2)
        assert np.mean(vals) == pytest.approx(1.0, abs=0.08)


class TestFlagging:
    def test_no_flags_when_residuals_zero(self):
        x = np.column_stack([np.ones(5), np.arange(5.0)])
        y = x @ np.array([1.0, 2.0])
        fit = ols_fit(y, x)
        flags = flag_outliers(
            type(fit)(beta=fit.beta, sigma2=1.0, residuals=fit.residuals,
                      inlier_mask=fit.inlier_mask, objective=fit.objective),
            y, x)
        assert not flags.any()

    def test_single_large_residual_flagged(self):
        rng = np.random.default_rng(41)
        x = np.column_stack([np.ones(50), rng.standard_normal(50)])
        y = x @ np.array([0.0, 1.0]) + rng.standard_normal(50) * 0.5
        y[17] += 10.0 * np.sqrt(0.25)
        fit = lts_fit(y, x, seed=0)
        flags = flag_outliers(fit, y, x, cutoff=2.5)
        assert flags[17]

    def test_requires_positive_scale(self):
        from robmix.linreg import RegressionFit

        x = np.column_stack([np.ones(3), np.arange(3.0)])
        y = x @ np.array([1.0, 1.0])
        fit = RegressionFit(beta=np.array([1.0, 1.0]), sigma2=0.0,
                            residuals=np.zeros(3),
                            inlier_mask=np.ones(3, dtype=bool), objective=0.0)
        with pytest.raises(ValueError):
            flag_outliers(fit, y, x)

    def test_mean_shift_recall(self):
        # single-component data with 5% shifts drawn U(4, 6), unit noise
        rng = np.random.default_rng(43)
        recalls = []
        for trial in range(50):
            n = 200
            x = np.column_stack([np.ones(n), rng.standard_normal(n)])
            y = x @ np.array([1.0, 2.0]) + rng.standard_normal(n)
            shifted = rng.random(n) < 0.05
            y = y + np.where(shifted, rng.uniform(4.0, 6.0, n), 0.0)
            if not shifted.any():
                continue
            raw = lts_fit(y, x, seed=trial)
            fit, _ = reweighted_fit(y, x, raw)
            flags = flag_outliers(fit, y, x, cutoff=2.5)
            recalls.append(flags[shifted].mean())
        assert np.mean(recalls) >= 0.9

    def test_reweighted_close_to_ols_on_clean_data(self):
        rng = np.random.default_rng(47)
        x = np.column_stack([np.ones(400), rng.standard_normal(400)])
        y = x @ np.array([1.0, -2.0]) + rng.standard_normal(400)
        raw = lts_fit(y, x, seed=1)
        fit, flags = reweighted_fit(y, x, raw)
        ols = ols_fit(y, x)
        assert np.abs(fit.beta - ols.beta).max() < 0.2
        assert flags.mean() < 0.05
