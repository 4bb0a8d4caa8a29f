"""Importance-weighted risk estimation on analytic 1-D toy densities.

The pieces here make the selection theory checkable: density-ratio weights
turn source samples into an unbiased estimate of the target risk, the
exponential Renyi divergence bounds the estimator variance, and a constant
ratio makes source-risk and weighted-risk argmins coincide. Everything is
evaluated on closed-form scalar densities where quadrature gives ground
truth; costs are restricted to [0, 1], the regime the variance bound covers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np


@dataclass(frozen=True)
class AnalyticDensity:
    """Closed-form 1-D density with a pdf and a seeded sampler."""

    pdf: Callable[[np.ndarray], np.ndarray]
    sampler: Callable[[np.random.Generator, int], np.ndarray]
    support: tuple[float, float]
    description: str = ""

    def sample(self, seed, n: int) -> np.ndarray:
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        return np.asarray(self.sampler(rng, n), dtype=float)


def gaussian_density(mean: float, sigma: float) -> AnalyticDensity:
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    norm = 1.0 / (sigma * math.sqrt(2.0 * math.pi))

    def pdf(x):
        x = np.asarray(x, dtype=float)
        return norm * np.exp(-0.5 * ((x - mean) / sigma) ** 2)

    return AnalyticDensity(
        pdf=pdf,
        sampler=lambda rng, n: mean + sigma * rng.normal(size=n),
        support=(mean - 10.0 * sigma, mean + 10.0 * sigma),
        description=f"N({mean}, {sigma}^2)",
    )


def gaussian_mixture_density(means, sigmas, weights) -> AnalyticDensity:
    means = np.asarray(means, dtype=float)
    sigmas = np.asarray(sigmas, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if np.any(sigmas <= 0) or np.any(weights < 0):
        raise ValueError("sigmas must be > 0, weights >= 0")
    weights = weights / weights.sum()
    norms = 1.0 / (sigmas * np.sqrt(2.0 * np.pi))

    def pdf(x):
        x = np.asarray(x, dtype=float)[..., None]
        comps = norms * np.exp(-0.5 * ((x - means) / sigmas) ** 2)
        return comps @ weights

    def sampler(rng, n):
        comp = rng.choice(means.size, size=n, p=weights)
        return means[comp] + sigmas[comp] * rng.normal(size=n)

    lo = float(np.min(means - 10.0 * sigmas))
    hi = float(np.max(means + 10.0 * sigmas))
    return AnalyticDensity(pdf, sampler, (lo, hi), "gaussian mixture")


def uniform_density(a: float, b: float) -> AnalyticDensity:
    if not a < b:
        raise ValueError("need a < b")
    h = 1.0 / (b - a)

    def pdf(x):
        x = np.asarray(x, dtype=float)
        return np.where((x >= a) & (x <= b), h, 0.0)

    return AnalyticDensity(
        pdf=pdf,
        sampler=lambda rng, n: rng.uniform(a, b, size=n),
        support=(a, b),
        description=f"U[{a}, {b}]",
    )


def adaptive_simpson(f, a: float, b: float, tol: float = 1e-8, max_depth: int = 50) -> float:
    """Recursive adaptive Simpson quadrature with Richardson correction."""

    def simpson(lo, hi, flo, fmid, fhi):
        return (hi - lo) / 6.0 * (flo + 4.0 * fmid + fhi)

    def recurse(lo, hi, flo, fmid, fhi, whole, eps, depth):
        mid = 0.5 * (lo + hi)
        lmid = 0.5 * (lo + mid)
        rmid = 0.5 * (mid + hi)
        fl, fr = f(lmid), f(rmid)
        left = simpson(lo, mid, flo, fl, fmid)
        right = simpson(mid, hi, fmid, fr, fhi)
        if depth <= 0 or abs(left + right - whole) <= 15.0 * eps:
            return left + right + (left + right - whole) / 15.0
        return recurse(lo, mid, flo, fl, fmid, left, eps / 2.0, depth - 1) + recurse(
            mid, hi, fmid, fr, fhi, right, eps / 2.0, depth - 1
        )

    fa, fb = f(a), f(b)
    m = 0.5 * (a + b)
    fm = f(m)
    return recurse(a, b, fa, fm, fb, simpson(a, b, fa, fm, fb), tol, max_depth)


def quadrature_risk(density: AnalyticDensity, cost: Callable[[float], float], tol: float = 1e-8) -> float:
    """Expected cost under the density, by adaptive Simpson over its support."""
    lo, hi = density.support
    return adaptive_simpson(lambda x: float(density.pdf(x)) * cost(x), lo, hi, tol=tol)


def weight_ratio(p_t: AnalyticDensity, p_s: AnalyticDensity, sample) -> np.ndarray | float:
    """Density ratio p_t/p_s at the sample; errors where the source density vanishes."""
    x = np.asarray(sample, dtype=float)
    num = p_s.pdf(x)
    if np.any(np.asarray(num) <= 0.0):
        raise ValueError("sample outside the source density support")
    ratio = p_t.pdf(x) / num
    return float(ratio) if np.ndim(sample) == 0 else ratio


@dataclass
class RiskReport:
    """Weighted empirical risk together with its Monte-Carlo spread and,
    once attached, the divergence-based variance bound."""

    estimate: float
    n_samples: int
    empirical_variance: float
    renyi_bound: float | None = None
    alpha: float | None = None

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.empirical_variance < 0:
            raise ValueError("empirical_variance must be >= 0")


def weighted_empirical_risk(samples, weights, costs) -> RiskReport:
    """Mean of weight * cost over source samples; the summand's sample
    variance is recorded so the estimator variance can be bounded."""
    samples = np.asarray(samples, dtype=float)
    weights = np.asarray(weights, dtype=float)
    costs = np.asarray(costs, dtype=float)
    if samples.size == 0:
        raise ValueError("empty sample")
    if not samples.shape == weights.shape == costs.shape:
        raise ValueError("samples, weights and costs must have equal shapes")
    if np.any(weights < 0):
        raise ValueError("weights must be >= 0")
    y = weights * costs
    var = float(np.var(y, ddof=1)) if y.size > 1 else 0.0
    return RiskReport(estimate=float(y.mean()), n_samples=y.size, empirical_variance=var)


def renyi_divergence(alpha: float, p_t: AnalyticDensity, p_s: AnalyticDensity, n_mc: int, seed) -> float:
    """Monte-Carlo estimate of the exponential Renyi divergence
    (E_{p_t}[w^-alpha])^(1/(alpha-1)) with samples drawn from p_t."""
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    if alpha == 1:
        raise ValueError("alpha = 1 is excluded")
    if n_mc < 1:
        raise ValueError("n_mc must be >= 1")
    x = p_t.sample(seed, n_mc)
    w = weight_ratio(p_t, p_s, x)
    return float(np.mean(np.asarray(w) ** (-alpha)) ** (1.0 / (alpha - 1.0)))


def renyi_divergence_quadrature(alpha: float, p_t: AnalyticDensity, p_s: AnalyticDensity, tol: float = 1e-10) -> float:
    """Quadrature value of the same quantity: (integral p_s^alpha p_t^(1-alpha))^(1/(alpha-1))."""
    if alpha < 0 or alpha == 1:
        raise ValueError("alpha must be >= 0 and != 1")
    lo = min(p_t.support[0], p_s.support[0])
    hi = max(p_t.support[1], p_s.support[1])

    def integrand(x):
        ps = float(p_s.pdf(x))
        pt = float(p_t.pdf(x))
        if ps == 0.0 or pt == 0.0:
            return 0.0
        return ps**alpha * pt ** (1.0 - alpha)

    return float(adaptive_simpson(integrand, lo, hi, tol=tol) ** (1.0 / (alpha - 1.0)))


def variance_bound(alpha: float, d_alpha_plus_1: float, target_risk: float, n: int) -> float:
    """Upper bound (d_{a+1} * R^(1-1/a) - R^2) / n on the variance of the
    weighted empirical risk; zero risk forces a zero bound since the summand
    is then almost surely zero."""
    if alpha <= 0:
        raise ValueError("alpha must be > 0")
    if not 0.0 <= target_risk <= 1.0:
        raise ValueError("target_risk must be in [0, 1] for 0-1 costs")
    if n < 1:
        raise ValueError("n must be >= 1")
    if target_risk == 0.0:
        return 0.0
    return (d_alpha_plus_1 * target_risk ** (1.0 - 1.0 / alpha) - target_risk**2) / n


def argmin_equivalence_check(lambda_grid, source_risks, weighted_risks, weights_constant: bool = False) -> bool:
    """Do the source-risk and weighted-risk minimizers coincide on the grid?

    With constant weights the weighted risk is a positive multiple of the
    source risk, so disagreement can only mean inconsistent inputs.
    """
    grid = np.asarray(lambda_grid, dtype=float)
    src = np.asarray(source_risks, dtype=float)
    wgt = np.asarray(weighted_risks, dtype=float)
    if grid.size == 0:
        raise ValueError("empty grid")
    if not grid.shape == src.shape == wgt.shape:
        raise ValueError("grid and risk arrays must be aligned")
    same = int(np.argmin(src)) == int(np.argmin(wgt))
    if weights_constant and not same:
        raise ValueError("constant weights must preserve the argmin; inputs are inconsistent")
    return same
