"""Automatic clustering-hyperparameter tuning against a labeled validation set.

Each candidate value is scored with a single clustering of the full
validation feature set (one-clustering evaluation keeps the implicit weight
ratio constant across candidates, so maximizing the validation score is a
faithful selection rule). Search strategies: exhaustive grid, or Bayesian
search with a fixed-kernel Gaussian process and expected improvement.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.special import ndtr  # standard normal CDF, vectorized

from . import metrics
from .clustering import ClusteringSpec

log = logging.getLogger(__name__)

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
_N_INIT = 3
_N_CANDIDATES = 512
_KMEANS_OBJECTIVE_SEED = 0


@dataclass(frozen=True)
class HPSearchSpace:
    """Bounds and budget for a single tuned hyperparameter."""

    lower: float
    upper: float
    integer: bool = False
    budget: int = 50

    def __post_init__(self):
        if not self.lower < self.upper:
            raise ValueError("need lower < upper")
        if self.budget < 1:
            raise ValueError("budget must be >= 1")

    @property
    def span(self) -> float:
        return self.upper - self.lower

    def clip(self, lam: float) -> float:
        lam = min(max(lam, self.lower), self.upper)
        return float(round(lam)) if self.integer else float(lam)


@dataclass
class TracePoint:
    iteration: int
    lam: float
    score: float
    incumbent: float


def write_trace(path, trace: list[TracePoint]) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "lambda", "score", "incumbent"])
        for t in trace:
            writer.writerow([t.iteration, repr(t.lam), repr(t.score), repr(t.incumbent)])


def objective_one_clustering(
    val_features: np.ndarray,
    val_labels,
    spec_template: ClusteringSpec,
    lam: float,
    metric: str = "ari",
) -> float:
    """Score one hyperparameter value by clustering the whole validation set
    once and comparing against its ground-truth labels. Degenerate
    clusterings (e.g. all noise) still score under the singleton convention."""
    spec = spec_template.with_lambda(lam)
    part = spec.cluster(np.asarray(val_features, dtype=float), seed=_KMEANS_OBJECTIVE_SEED)
    return metrics.score(metric, val_labels, part)


def grid_search(space: HPSearchSpace, step: float, objective: Callable[[float], float]) -> tuple[float, list[TracePoint]]:
    """Evaluate every grid point in ascending order; ties keep the smaller value."""
    if step <= 0:
        raise ValueError("step must be > 0")
    values = np.arange(space.lower, space.upper + 1e-9, step)
    if space.integer:
        values = np.unique(np.round(values))
    if values.size == 0:
        raise ValueError("empty grid")
    best_lam, best_score = None, -np.inf
    trace: list[TracePoint] = []
    for i, lam in enumerate(values):
        s = objective(float(lam))
        if s > best_score:
            best_lam, best_score = float(lam), s
        trace.append(TracePoint(i, float(lam), s, best_lam))
    return best_lam, trace


class GPSurrogate:
    """Gaussian process on scalar inputs with an RBF kernel.

    The kernel is fixed (length-scale = 0.2 x input range, unit signal
    variance on standardized scores); the noise jitter escalates tenfold on
    Cholesky failure up to 1e-2.
    """

    def __init__(self, lengthscale: float, jitter: float = 1e-6, max_jitter: float = 1e-2):
        self.lengthscale = lengthscale
        self.jitter = jitter
        self.max_jitter = max_jitter
        self._fitted = False

    def _kernel(self, xa: np.ndarray, xb: np.ndarray) -> np.ndarray:
        d = (xa[:, None] - xb[None, :]) / self.lengthscale
        return np.exp(-0.5 * d * d)

    def fit(self, lams, scores) -> None:
        x = np.asarray(lams, dtype=float)
        y = np.asarray(scores, dtype=float)
        self._mean = float(y.mean())
        std = float(y.std())
        self._std = std if std > 0 else 1.0
        yn = (y - self._mean) / self._std
        k = self._kernel(x, x)
        jitter = self.jitter
        while True:
            try:
                chol = np.linalg.cholesky(k + jitter * np.eye(x.size))
                break
            except np.linalg.LinAlgError:
                if jitter >= self.max_jitter:
                    raise
                jitter *= 10.0
        self._x = x
        self._chol = chol
        self._alpha = np.linalg.solve(chol.T, np.linalg.solve(chol, yn))
        self._fitted = True

    def predict(self, cands) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and standard deviation on the standardized scale."""
        if not self._fitted:
            raise RuntimeError("fit first")
        xc = np.asarray(cands, dtype=float)
        ks = self._kernel(xc, self._x)
        mean = ks @ self._alpha
        v = np.linalg.solve(self._chol, ks.T)
        var = np.maximum(1.0 - np.sum(v * v, axis=0), 0.0)
        return mean, np.sqrt(var)

    def standardize(self, scores) -> np.ndarray:
        return (np.asarray(scores, dtype=float) - self._mean) / self._std


def expected_improvement(mean: np.ndarray, std: np.ndarray, best: float) -> np.ndarray:
    """EI for maximization; nonnegative everywhere."""
    std = np.asarray(std, dtype=float)
    improve = np.asarray(mean, dtype=float) - best
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(std > 0, improve / np.where(std > 0, std, 1.0), 0.0)
    pdf = np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
    ei = np.where(std > 0, improve * ndtr(z) + std * pdf, np.maximum(improve, 0.0))
    return np.maximum(ei, 0.0)


def _quasi_random(space: HPSearchSpace, seed: int, n: int, start: list[float] | None = None) -> list[float]:
    """Seeded golden-ratio sequence over the space, optionally led by fixed points."""
    points = [space.clip(v) for v in (start or [])][:n]
    u = np.random.default_rng(seed).random()
    k = 0
    while len(points) < n:
        val = space.clip(space.lower + space.span * ((u + k * _GOLDEN) % 1.0))
        k += 1
        if all(abs(val - p) > 1e-12 for p in points):
            points.append(val)
    return points


def bayes_search(
    space: HPSearchSpace,
    objective: Callable[[float], float],
    seed: int = 0,
    init_points: list[float] | None = None,
) -> tuple[float, list[TracePoint]]:
    """GP + expected-improvement search spending the space's budget.

    Starts from 3 seeded quasi-random evaluations (optionally overridden),
    then proposes the EI maximizer over a 512-point candidate lattice each
    iteration. Cholesky failure past the jitter ceiling falls back to a
    random proposal for that iteration.
    """
    if space.budget < 3:
        raise ValueError("bayes_search needs budget >= 3")
    rng = np.random.default_rng(seed)
    lattice = np.linspace(space.lower, space.upper, _N_CANDIDATES)
    if space.integer:
        lattice = np.unique(np.round(lattice))

    lams: list[float] = []
    scores: list[float] = []
    trace: list[TracePoint] = []
    best_lam, best_score = None, -np.inf

    def evaluate(lam: float, it: int) -> None:
        nonlocal best_lam, best_score
        s = objective(lam)
        lams.append(lam)
        scores.append(s)
        if s > best_score:
            best_lam, best_score = lam, s
        trace.append(TracePoint(it, lam, s, best_lam))

    for it, lam in enumerate(_quasi_random(space, seed, min(_N_INIT, space.budget), init_points)):
        evaluate(lam, it)

    gp = GPSurrogate(lengthscale=0.2 * space.span)
    while len(lams) < space.budget:
        it = len(lams)
        observed = np.asarray(lams)
        fresh = lattice[np.all(np.abs(lattice[:, None] - observed[None, :]) > 1e-12, axis=1)]
        if fresh.size == 0:
            fresh = lattice
        try:
            gp.fit(observed, scores)
            mean, std = gp.predict(fresh)
            ei = expected_improvement(mean, std, float(gp.standardize([best_score])[0]))
            lam = float(fresh[int(np.argmax(ei))])
        except np.linalg.LinAlgError:
            log.warning("GP fit failed at iteration %d; falling back to a random proposal", it)
            lam = space.clip(space.lower + space.span * rng.random())
        evaluate(lam, it)

    return best_lam, trace


def auto_hp_tuning(
    val_features: np.ndarray,
    val_labels,
    space: HPSearchSpace,
    strategy: str = "bayes",
    metric: str = "ari",
    spec_template: ClusteringSpec | None = None,
    seed: int = 0,
    grid_step: float = 0.05,
    bayes_init: float | None = None,
    trace_path=None,
) -> float:
    """Select the hyperparameter maximizing the one-clustering validation score."""
    labels = np.asarray(val_labels, dtype=int)
    if np.unique(labels).size < 2:
        raise ValueError("validation set needs at least 2 identities")
    spec_template = spec_template or ClusteringSpec()

    def objective(lam: float) -> float:
        return objective_one_clustering(val_features, labels, spec_template, lam, metric)

    if strategy == "grid":
        best, trace = grid_search(space, grid_step, objective)
    elif strategy == "bayes":
        init = [bayes_init] if bayes_init is not None else None
        best, trace = bayes_search(space, objective, seed=seed, init_points=init)
    else:
        raise ValueError(f"unknown strategy {strategy!r}")
    if trace_path is not None:
        write_trace(trace_path, trace)
    return best
