import math

import numpy as np
import pytest
from mpmath import mp

from robmix.core import (
    Component,
    Dataset,
    MixtureModel,
    Partition,
    PosteriorMatrix,
    complete_log_likelihood,
    component_log_densities,
    default_trim_count,
    gaussian_log_density,
    observed_log_likelihood,
    sigma_floor,
    trimmed_complete_log_likelihood,
)


def random_instance(rng, n, k, p=1):
    x = np.column_stack([np.ones(n), rng.standard_normal((n, p))])
    y = rng.standard_normal(n) * 2.0
    comps = []
    pis = rng.dirichlet(np.ones(k) * 5.0)
    for j in range(k):
        comps.append(Component(pi=pis[j],
                               beta=rng.standard_normal(p + 1),
                               sigma2=float(rng.uniform(0.2, 3.0))))
    model = MixtureModel(tuple(comps))
    part = Partition(rng.integers(1, k + 1, size=n))
    return Dataset(y, x), model, part


class TestGaussianLogDensity:
    def test_zero_residual_unit_variance(self):
        assert gaussian_log_density(0.0, 0.0, 1.0) == pytest.approx(
            -0.5 * math.log(2 * math.pi), abs=1e-14)

    def test_unit_residual(self):
        expected = gaussian_log_density(0.0, 0.0, 1.0) - 0.5
        assert gaussian_log_density(1.0, 0.0, 1.0) == pytest.approx(expected, abs=1e-14)

    def test_matches_naive_pdf_then_log(self):
        # independent oracle: evaluate the density directly, then take log
        pdf = 1.0 / math.sqrt(2 * math.pi * 0.25) * math.exp(-(2.5 - 1.0) ** 2 / (2 * 0.25))
        assert gaussian_log_density(2.5, 1.0, 0.25) == pytest.approx(math.log(pdf), abs=1e-12)

    def test_rejects_nonpositive_variance(self):
        with pytest.raises(ValueError):
            gaussian_log_density(0.0, 0.0, 0.0)
        with pytest.raises(ValueError):
            gaussian_log_density(0.0, 0.0, -1.0)

    def test_vectorized(self):
        y = np.array([0.0, 1.0, 2.0])
        out = gaussian_log_density(y, 0.0, 1.0)
        assert out.shape == (3,)
        assert out[0] == pytest.approx(-0.5 * math.log(2 * math.pi))


class TestObservedLogLikelihood:
    def test_single_component_reduces_to_sum(self):
        rng = np.random.default_rng(1)
        data, model, _ = random_instance(rng, 8, 1)
        comp = model.components[0]
        direct = sum(
            gaussian_log_density(data.y[i], float(data.x[i] @ comp.beta), comp.sigma2)
            for i in range(data.n)
        )
        assert observed_log_likelihood(data, model) == pytest.approx(direct, rel=1e-12)

    def test_identical_components_collapse(self):
        rng = np.random.default_rng(2)
        data, model, _ = random_instance(rng, 10, 1)
        c = model.components[0]
        single = MixtureModel((Component(1.0, c.beta, c.sigma2),))
        double = MixtureModel((
            Component(0.5, c.beta, c.sigma2), Component(0.5, c.beta, c.sigma2)))
        assert observed_log_likelihood(data, double) == pytest.approx(
            observed_log_likelihood(data, single), rel=1e-12)

    def test_matches_extended_precision_sum(self):
        # brute-force evaluation without log-sum-exp, in 50-digit arithmetic
        rng = np.random.default_rng(3)
        data, model, _ = random_instance(rng, 5, 2, p=1)
        mp.dps = 50
        total = mp.mpf(0)
        for i in range(data.n):
            s = mp.mpf(0)
            for c in model.components:
                mu = float(data.x[i] @ c.beta)
                dens = mp.exp(-(mp.mpf(data.y[i]) - mu) ** 2 / (2 * c.sigma2)) / \
                    mp.sqrt(2 * mp.pi * c.sigma2)
                s += c.pi * dens
            total += mp.log(s)
        assert observed_log_likelihood(data, model) == pytest.approx(float(total), rel=1e-12)

    def test_no_underflow_for_extreme_residuals(self):
        x = np.ones((3, 1))
        data = Dataset(np.array([0.0, 350.0, 700.0]), x)
        model = MixtureModel((Component(1.0, np.zeros(1), 1.0),))
        val = observed_log_likelihood(data, model)
        assert math.isfinite(val)
        assert val == pytest.approx(3 * gaussian_log_density(0, 0, 1)
                                    - (350.0**2 + 700.0**2) / 2, rel=1e-12)

    def test_logsumexp_agrees_with_naive_summation(self):
        rng = np.random.default_rng(4)
        for _ in range(200):
            data, model, _ = random_instance(rng, 12, 3)
            ld = component_log_densities(data, model)
            naive_terms = model.pis[None, :] * np.exp(ld)
            row_sums = naive_terms.sum(axis=1)
            if np.any(row_sums == 0.0):
                continue
            naive = float(np.log(row_sums).sum())
            assert observed_log_likelihood(data, model) == pytest.approx(naive, rel=1e-9)


class TestCompleteLogLikelihood:
    def test_single_component_equals_observed(self):
        rng = np.random.default_rng(5)
        data, model, _ = random_instance(rng, 9, 1)
        part = Partition(np.ones(9, dtype=int))
        assert complete_log_likelihood(data, model, part) == pytest.approx(
            observed_log_likelihood(data, model), rel=1e-12)

    def test_never_exceeds_observed(self):
        rng = np.random.default_rng(6)
        for _ in range(1000):
            n = int(rng.integers(2, 21))
            k = int(rng.integers(1, 4))
            data, model, part = random_instance(rng, n, k)
            assert complete_log_likelihood(data, model, part) <= \
                observed_log_likelihood(data, model) + 1e-9

    def test_hand_built_term_by_term(self):
        x = np.column_stack([np.ones(4), np.array([0.0, 1.0, 2.0, 3.0])])
        y = np.array([0.5, 1.5, 1.0, 4.0])
        data = Dataset(y, x)
        model = MixtureModel((
            Component(0.3, np.array([0.0, 1.0]), 1.0),
            Component(0.7, np.array([1.0, 0.5]), 2.0),
        ))
        part = Partition(np.array([1, 2, 1, 2]))
        expected = 0.0
        for i, k in enumerate([1, 2, 1, 2]):
            c = model.components[k - 1]
            expected += gaussian_log_density(y[i], float(x[i] @ c.beta), c.sigma2)
        expected += 2 * math.log(0.3) + 2 * math.log(0.7)
        assert complete_log_likelihood(data, model, part) == pytest.approx(expected, rel=1e-12)

    def test_rejects_label_out_of_range(self):
        rng = np.random.default_rng(7)
        data, model, _ = random_instance(rng, 6, 2)
        with pytest.raises(ValueError):
            complete_log_likelihood(data, model, Partition(np.full(6, 3)))


class TestTrimmedCompleteLogLikelihood:
    def test_singleton_components_equal_complete(self):
        rng = np.random.default_rng(8)
        data, model, _ = random_instance(rng, 3, 3)
        part = Partition(np.array([1, 2, 3]))
        assert trimmed_complete_log_likelihood(data, model, part) == pytest.approx(
            complete_log_likelihood(data, model, part), rel=1e-12)

    def test_equals_complete_when_nothing_trimmed(self):
        # h_k = n_k whenever n_k <= 2
        rng = np.random.default_rng(9)
        for _ in range(50):
            data, model, _ = random_instance(rng, 4, 2)
            part = Partition(np.array([1, 1, 2, 2]))
            assert trimmed_complete_log_likelihood(data, model, part) == pytest.approx(
                complete_log_likelihood(data, model, part), rel=1e-12)

    def test_matches_sort_and_sum_oracle(self):
        rng = np.random.default_rng(10)
        data, model, part = random_instance(rng, 6, 2)
        part = Partition(np.array([1, 1, 1, 2, 2, 2]))
        expected = 0.0
        for k in (1, 2):
            c = model.components[k - 1]
            vals = sorted(
                (gaussian_log_density(data.y[i], float(data.x[i] @ c.beta), c.sigma2)
                 for i in np.flatnonzero(part.z == k)),
                reverse=True,
            )
            h = default_trim_count(len(vals))
            expected += sum(vals[:h]) + h * math.log(c.pi)
        assert trimmed_complete_log_likelihood(data, model, part) == pytest.approx(
            expected, rel=1e-12)

    def test_gross_outlier_below_cut_does_not_change_value(self):
        # component of 5 -> h = 3; making the worst point much worse must not
        # move the trimmed value
        x = np.column_stack([np.ones(5), np.arange(5.0)])
        y = np.array([0.0, 1.0, 2.0, 3.0, 10.0])
        model = MixtureModel((Component(1.0, np.array([0.0, 1.0]), 1.0),))
        part = Partition(np.ones(5, dtype=int))
        base = trimmed_complete_log_likelihood(Dataset(y, x), model, part)
        y2 = y.copy()
        y2[4] = 1e6
        worse = trimmed_complete_log_likelihood(Dataset(y2, x), model, part)
        assert worse == pytest.approx(base, rel=1e-12)

    def test_rejects_empty_component(self):
        rng = np.random.default_rng(11)
        data, model, _ = random_instance(rng, 5, 2)
        with pytest.raises(ValueError):
            trimmed_complete_log_likelihood(data, model, Partition(np.ones(5, dtype=int)))


class TestTypes:
    def test_dataset_requires_intercept_column(self):
        with pytest.raises(ValueError):
            Dataset(np.array([1.0, 2.0]), np.array([[1.0, 0.0], [0.9, 1.0]]))

    def test_dataset_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            Dataset(np.array([1.0, np.nan]), np.ones((2, 1)))

    def test_from_covariates_adds_intercept(self):
        d = Dataset.from_covariates(np.array([1.0, 2.0]), np.array([3.0, 4.0]))
        assert d.p == 1
        assert np.all(d.x[:, 0] == 1.0)

    def test_component_validation(self):
        with pytest.raises(ValueError):
            Component(pi=0.0, beta=np.zeros(2), sigma2=1.0)
        with pytest.raises(ValueError):
            Component(pi=0.5, beta=np.zeros(2), sigma2=0.0)

    def test_mixture_weights_must_sum_to_one(self):
        c = Component(0.6, np.zeros(2), 1.0)
        with pytest.raises(ValueError):
            MixtureModel((c, c))

    def test_partition_counts_and_members(self):
        part = Partition(np.array([1, 2, 1, 1]))
        assert part.counts(2).tolist() == [3, 1]
        assert part.members(1).tolist() == [0, 2, 3]
        with pytest.raises(ValueError):
            Partition(np.array([0, 1]))

    def test_posterior_rows_must_sum_to_one(self):
        with pytest.raises(ValueError):
            PosteriorMatrix(np.array([[0.5, 0.4]]))
        PosteriorMatrix(np.array([[0.5, 0.5]]))

    def test_sigma_floor_scales_with_variance(self):
        y = np.array([0.0, 2.0, 4.0])
        assert sigma_floor(y) == pytest.approx(1e-6 * np.var(y))
        assert sigma_floor(np.zeros(3)) > 0.0
