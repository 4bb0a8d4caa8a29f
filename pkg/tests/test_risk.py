import math

import numpy as np
import pytest
from scipy import integrate
from scipy.stats import norm

from hypass.risk import (
    RiskReport,
    adaptive_simpson,
    argmin_equivalence_check,
    gaussian_density,
    gaussian_mixture_density,
    quadrature_risk,
    renyi_divergence,
    renyi_divergence_quadrature,
    uniform_density,
    variance_bound,
    weight_ratio,
    weighted_empirical_risk,
)


def test_densities_integrate_to_one():
    for dens in (
        gaussian_density(0.0, 1.0),
        gaussian_density(-2.0, 0.5),
        gaussian_mixture_density([-1.0, 2.0], [0.5, 1.0], [0.3, 0.7]),
        uniform_density(-1.0, 3.0),
    ):
        total = adaptive_simpson(lambda x: float(dens.pdf(x)), *dens.support, tol=1e-9)
        assert total == pytest.approx(1.0, abs=1e-3)


def test_adaptive_simpson_matches_scipy():
    f = lambda x: math.exp(-x * x) * math.cos(3 * x)
    ours = adaptive_simpson(f, -4.0, 4.0, tol=1e-10)
    ref, _ = integrate.quad(f, -4.0, 4.0)
    assert ours == pytest.approx(ref, abs=1e-8)


class TestWeightRatio:
    def test_identical_densities_ratio_one(self):
        p = gaussian_density(0.0, 1.0)
        for x in (-2.0, 0.0, 1.5):
            assert weight_ratio(p, p, x) == pytest.approx(1.0, rel=1e-12)

    def test_closed_form_gaussians_at_zero(self):
        p_t = gaussian_density(0.0, 1.0)
        p_s = gaussian_density(0.0, 2.0)  # N(0, 4)
        assert weight_ratio(p_t, p_s, 0.0) == pytest.approx(2.0, rel=1e-12)

    def test_outside_source_support_rejected(self):
        p_t = uniform_density(0.0, 2.0)
        p_s = uniform_density(0.0, 1.0)
        with pytest.raises(ValueError):
            weight_ratio(p_t, p_s, 1.5)

    def test_vectorized(self):
        p_t = gaussian_density(0.5, 1.0)
        p_s = gaussian_density(0.0, 1.0)
        xs = np.linspace(-1, 1, 7)
        np.testing.assert_allclose(weight_ratio(p_t, p_s, xs), p_t.pdf(xs) / p_s.pdf(xs))


class TestWeightedEmpiricalRisk:
    def test_unit_weights_plain_mean(self):
        report = weighted_empirical_risk([1.0, 2.0, 3.0], [1.0, 1.0, 1.0], [0.2, 0.4, 0.9])
        assert report.estimate == pytest.approx(0.5)
        assert report.n_samples == 3

    def test_zero_costs(self):
        report = weighted_empirical_risk([0.0, 1.0], [2.0, 3.0], [0.0, 0.0])
        assert report.estimate == 0.0
        assert report.empirical_variance == 0.0

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            weighted_empirical_risk([], [], [])

    def test_negative_weights_rejected(self):
        with pytest.raises(ValueError):
            weighted_empirical_risk([0.0], [-1.0], [0.5])

    def test_matches_quadrature_within_three_se(self):
        p_t = gaussian_density(0.0, 1.0)
        p_s = gaussian_density(0.6, 1.0)
        target = quadrature_risk(p_t, lambda x: 1.0 if x > 0 else 0.0)
        assert target == pytest.approx(0.5, abs=1e-8)  # symmetric target
        x = p_s.sample(123, 100_000)
        w = weight_ratio(p_t, p_s, x)
        report = weighted_empirical_risk(x, np.asarray(w), (x > 0).astype(float))
        se = math.sqrt(report.empirical_variance / report.n_samples)
        assert abs(report.estimate - target) <= 3.0 * se


class TestRenyiDivergence:
    def test_identical_densities_exactly_one(self):
        p = gaussian_density(0.0, 1.0)
        assert renyi_divergence(2.0, p, p, 500, seed=0) == pytest.approx(1.0, abs=1e-12)
        assert renyi_divergence(0.5, p, p, 500, seed=1) == pytest.approx(1.0, abs=1e-12)

    def test_alpha_one_rejected(self):
        p = gaussian_density(0.0, 1.0)
        with pytest.raises(ValueError):
            renyi_divergence(1.0, p, p, 100, seed=0)

    def test_matches_gaussian_closed_form(self):
        # equal-variance Gaussians: value = exp(alpha * gap^2 / (2 sigma^2))
        p_t = gaussian_density(0.0, 1.0)
        p_s = gaussian_density(0.5, 1.0)
        closed = math.exp(2.0 * 0.25 / 2.0)
        mc = renyi_divergence(2.0, p_t, p_s, 200_000, seed=7)
        assert mc == pytest.approx(closed, rel=0.02)
        quad = renyi_divergence_quadrature(2.0, p_t, p_s)
        assert quad == pytest.approx(closed, rel=1e-6)

    def test_quadrature_various_alphas(self):
        p_t = gaussian_density(0.0, 1.0)
        p_s = gaussian_density(0.8, 1.0)
        for alpha in (0.5, 2.0, 3.0):
            closed = math.exp(alpha * 0.64 / 2.0)
            assert renyi_divergence_quadrature(alpha, p_t, p_s) == pytest.approx(closed, rel=1e-6)


class TestVarianceBound:
    def test_zero_risk_zero_bound(self):
        assert variance_bound(1.0, 5.0, 0.0, 100) == 0.0
        assert variance_bound(2.0, 5.0, 0.0, 100) == 0.0

    def test_algebraic_substitution_alpha_one(self):
        d2 = 1.7
        assert variance_bound(1.0, d2, 0.25, 100) == pytest.approx((d2 - 0.0625) / 100)

    def test_bad_args_rejected(self):
        with pytest.raises(ValueError):
            variance_bound(0.0, 1.0, 0.5, 10)
        with pytest.raises(ValueError):
            variance_bound(1.0, 1.0, 1.5, 10)
        with pytest.raises(ValueError):
            variance_bound(1.0, 1.0, 0.5, 0)

    def test_replicated_variance_within_bound(self):
        p_t = gaussian_density(0.0, 1.0)
        p_s = gaussian_density(0.5, 1.0)
        n = 1000
        rng = np.random.default_rng(42)
        x = p_s.sample(rng, 2000 * n).reshape(2000, n)
        y = np.asarray(weight_ratio(p_t, p_s, x)) * (x > 0)
        measured = y.mean(axis=1).var(ddof=1)
        target = quadrature_risk(p_t, lambda v: 1.0 if v > 0 else 0.0)
        for alpha in (1.0, 2.0):
            d_next = renyi_divergence_quadrature(alpha + 1.0, p_t, p_s)
            assert measured <= variance_bound(alpha, d_next, target, n)


class TestArgminEquivalence:
    def test_constant_weights_always_true(self):
        rng = np.random.default_rng(0)
        grid = np.linspace(0, 2, 21)
        for _ in range(50):
            risks = rng.random(21)
            c = rng.uniform(0.01, 100.0)
            assert argmin_equivalence_check(grid, risks, c * risks, weights_constant=True)

    def test_adversarial_flip(self):
        grid = [0.0, 1.0]
        src = [0.2, 0.3]
        weighted = [0.2 * 10.0, 0.3 * 0.1]  # weights vary per lambda
        assert not argmin_equivalence_check(grid, src, weighted)

    def test_single_lambda_trivially_true(self):
        assert argmin_equivalence_check([0.5], [0.1], [99.0])

    def test_empty_grid_rejected(self):
        with pytest.raises(ValueError):
            argmin_equivalence_check([], [], [])

    def test_inconsistent_constant_claim_raises(self):
        with pytest.raises(ValueError):
            argmin_equivalence_check([0.0, 1.0], [0.2, 0.3], [3.0, 0.1], weights_constant=True)


def test_unbiasedness_property_2000_replicates():
    p_t = gaussian_density(0.0, 1.0)
    p_s = gaussian_density(0.4, 1.0)
    n = 400
    rng = np.random.default_rng(3)
    x = p_s.sample(rng, 2000 * n).reshape(2000, n)
    estimates = (np.asarray(weight_ratio(p_t, p_s, x)) * (x > 0)).mean(axis=1)
    target = norm.sf(0.0)  # exactly 0.5
    se = estimates.std(ddof=1) / math.sqrt(2000)
    assert abs(estimates.mean() - target) <= 3.0 * se


def test_risk_report_validation():
    with pytest.raises(ValueError):
        RiskReport(estimate=0.1, n_samples=0, empirical_variance=0.0)
    with pytest.raises(ValueError):
        RiskReport(estimate=0.1, n_samples=5, empirical_variance=-1.0)
