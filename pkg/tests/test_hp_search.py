import numpy as np
import pytest

from hypass.clustering import ClusteringSpec
from hypass.hp_search import (
    GPSurrogate,
    HPSearchSpace,
    auto_hp_tuning,
    bayes_search,
    expected_improvement,
    grid_search,
    objective_one_clustering,
    write_trace,
)


def make_blobs(rng, centers, spread, per):
    labels = np.repeat(np.arange(len(centers)), per)
    pts = np.asarray(centers)[labels] + spread * rng.normal(size=(len(labels), len(centers[0])))
    norms = np.linalg.norm(pts, axis=1, keepdims=True)
    return pts / norms, labels


def test_space_validation():
    with pytest.raises(ValueError):
        HPSearchSpace(1.0, 1.0)
    with pytest.raises(ValueError):
        HPSearchSpace(0.0, 2.0, budget=0)
    space = HPSearchSpace(1.0, 10.0, integer=True)
    assert space.clip(3.4) == 3.0
    assert space.clip(-5.0) == 1.0


class TestObjective:
    def test_all_singletons_truth_singletons(self):
        rng = np.random.default_rng(0)
        feats = rng.random((10, 4))
        feats /= np.linalg.norm(feats, axis=1, keepdims=True)
        spec = ClusteringSpec("dbscan", min_samples=2)
        score = objective_one_clustering(feats, np.arange(10), spec, lam=0.0)
        assert score == 1.0  # eps=0 -> all noise -> singletons match truth

    def test_one_big_cluster_multiclass_truth(self):
        rng = np.random.default_rng(1)
        feats = rng.random((12, 4))
        feats /= np.linalg.norm(feats, axis=1, keepdims=True)
        spec = ClusteringSpec("dbscan", min_samples=2)
        score = objective_one_clustering(feats, np.repeat([0, 1, 2], 4), spec, lam=2.0)
        assert score == pytest.approx(0.0, abs=1e-12)

    def test_blob_sweep_argmax_between_gap_bounds(self):
        rng = np.random.default_rng(2)
        feats, labels = make_blobs(rng, [[1, 0, 0], [0, 1, 0], [0, 0, 1]], 0.03, 8)
        spec = ClusteringSpec("dbscan", min_samples=3)
        grid = np.linspace(0.01, 1.99, 100)
        scores = [objective_one_clustering(feats, labels, spec, e) for e in grid]
        best_eps = grid[int(np.argmax(scores))]
        # brute-force bounds: max within-blob NN distance, min between-blob distance
        d = np.linalg.norm(feats[:, None] - feats[None, :], axis=2)
        within_max = max(
            d[i][(labels == labels[i]) & (np.arange(24) != i)].min() for i in range(24)
        )
        between_min = min(
            d[i][labels != labels[i]].min() for i in range(24)
        )
        assert within_max < best_eps < between_min
        assert max(scores) == 1.0


class TestGridSearch:
    def test_constant_objective_smallest_point(self):
        space = HPSearchSpace(0.0, 2.0)
        best, trace = grid_search(space, 0.05, lambda lam: 1.0)
        assert best == 0.0
        assert len(trace) == 41
        assert all(t.incumbent == 0.0 for t in trace)

    def test_exact_grid_hit(self):
        space = HPSearchSpace(0.0, 2.0)
        best, _ = grid_search(space, 0.05, lambda lam: -((lam - 0.7) ** 2))
        assert best == pytest.approx(0.7)

    def test_bad_step_rejected(self):
        with pytest.raises(ValueError):
            grid_search(HPSearchSpace(0.0, 2.0), 0.0, lambda lam: 0.0)

    def test_trace_csv(self, tmp_path):
        space = HPSearchSpace(0.0, 1.0)
        _, trace = grid_search(space, 0.25, lambda lam: lam)
        path = tmp_path / "trace.csv"
        write_trace(path, trace)
        lines = path.read_text().splitlines()
        assert lines[0] == "iteration,lambda,score,incumbent"
        assert len(lines) == 6


class TestGPSurrogate:
    def test_posterior_mean_interpolates_observations(self):
        # observations spaced on the order of the lengthscale: the posterior
        # mean must pass within 10x jitter of each standardized score
        rng = np.random.default_rng(3)
        for n in (5, 6):
            x = np.linspace(0.1, 1.9, n)
            y = np.sin(x * 3.0) + 0.1 * rng.normal(size=n)
            gp = GPSurrogate(lengthscale=0.4)
            gp.fit(x, y)
            mean, _ = gp.predict(x)
            np.testing.assert_allclose(mean, gp.standardize(y), atol=10 * gp.jitter)

    def test_predict_before_fit_rejected(self):
        with pytest.raises(RuntimeError):
            GPSurrogate(0.4).predict([0.5])

    def test_jitter_escalates_on_duplicates(self):
        x = np.array([0.5, 0.5, 0.5, 1.0])
        y = np.array([0.1, 0.9, 0.4, 0.2])  # contradictory duplicates
        gp = GPSurrogate(lengthscale=0.4)
        gp.fit(x, y)  # must not raise; escalation absorbs the singularity
        mean, std = gp.predict([0.75])
        assert np.isfinite(mean).all() and np.isfinite(std).all()


def test_expected_improvement_nonnegative_and_zero_when_certain():
    mean = np.array([0.0, 1.0, 2.0])
    std = np.array([0.0, 0.5, 0.0])
    ei = expected_improvement(mean, std, best=1.5)
    assert np.all(ei >= 0.0)
    assert ei[0] == 0.0
    assert ei[2] == pytest.approx(0.5)


class TestBayesSearch:
    def test_unimodal_objective_found(self):
        space = HPSearchSpace(0.0, 2.0, budget=50)
        objective = lambda lam: -((lam - 1.234) ** 2)
        for seed in range(3):
            best, trace = bayes_search(space, objective, seed=seed)
            assert abs(best - 1.234) < 0.05
            assert len(trace) == 50

    def test_constant_objective_incumbent_first(self):
        space = HPSearchSpace(0.0, 2.0, budget=10)
        best, trace = bayes_search(space, lambda lam: 0.5, seed=1)
        assert best == trace[0].lam

    def test_budget_too_small_rejected(self):
        with pytest.raises(ValueError):
            bayes_search(HPSearchSpace(0.0, 2.0, budget=2), lambda lam: 0.0)

    def test_incumbent_consistency(self):
        space = HPSearchSpace(0.0, 2.0, budget=25)
        rng = np.random.default_rng(5)
        wiggly = lambda lam: float(np.sin(5 * lam) + 0.3 * np.cos(17 * lam))
        best, trace = bayes_search(space, wiggly, seed=2)
        scores = {t.lam: t.score for t in trace}
        assert best == max(scores, key=lambda k: (scores[k], -list(scores).index(k)))
        assert scores[best] == max(scores.values())
        # grid over the evaluated points never beats the incumbent
        assert all(s <= scores[best] for s in scores.values())

    def test_init_override_used_first(self):
        space = HPSearchSpace(0.0, 2.0, budget=5)
        _, trace = bayes_search(space, lambda lam: lam, seed=0, init_points=[0.01])
        assert trace[0].lam == pytest.approx(0.01)

    def test_deterministic_per_seed(self):
        space = HPSearchSpace(0.0, 2.0, budget=15)
        objective = lambda lam: float(np.cos(lam * 4.0))
        a, ta = bayes_search(space, objective, seed=9)
        b, tb = bayes_search(space, objective, seed=9)
        assert a == b
        assert [t.lam for t in ta] == [t.lam for t in tb]


class TestAutoHP:
    def _blob_setup(self, seed=0):
        rng = np.random.default_rng(seed)
        feats, labels = make_blobs(rng, [[1, 0, 0], [0, 1, 0], [0, 0, 1]], 0.04, 10)
        return feats, labels

    def test_grid_strategy_matches_grid_search(self):
        feats, labels = self._blob_setup()
        spec = ClusteringSpec("dbscan", min_samples=3)
        space = HPSearchSpace(0.0, 2.0, budget=50)
        lam = auto_hp_tuning(feats, labels, space, strategy="grid", spec_template=spec)
        expected, _ = grid_search(
            space, 0.05, lambda e: objective_one_clustering(feats, labels, spec, e)
        )
        assert lam == expected

    def test_bayes_deterministic(self):
        feats, labels = self._blob_setup(1)
        spec = ClusteringSpec("dbscan", min_samples=3)
        space = HPSearchSpace(0.0, 2.0, budget=20)
        a = auto_hp_tuning(feats, labels, space, strategy="bayes", spec_template=spec, seed=4)
        b = auto_hp_tuning(feats, labels, space, strategy="bayes", spec_template=spec, seed=4)
        assert a == b

    def test_selected_eps_near_target_oracle(self):
        # validation mirrors the target blobs: selected eps within 0.1 of the
        # exhaustive oracle best on the target itself
        feats_val, labels_val = self._blob_setup(2)
        feats_tgt, labels_tgt = self._blob_setup(3)
        spec = ClusteringSpec("dbscan", min_samples=3)
        space = HPSearchSpace(0.0, 2.0, budget=50)
        lam = auto_hp_tuning(feats_val, labels_val, space, strategy="bayes", spec_template=spec, seed=0)
        grid = np.linspace(0.01, 1.99, 200)
        oracle_scores = [objective_one_clustering(feats_tgt, labels_tgt, spec, e) for e in grid]
        top = grid[np.asarray(oracle_scores) >= max(oracle_scores) - 1e-12]
        assert np.min(np.abs(top - lam)) < 0.1

    def test_single_identity_rejected(self):
        feats = np.random.default_rng(0).random((6, 3))
        with pytest.raises(ValueError):
            auto_hp_tuning(feats, np.zeros(6, dtype=int), HPSearchSpace(0.0, 2.0))

    def test_trace_written(self, tmp_path):
        feats, labels = self._blob_setup(4)
        spec = ClusteringSpec("dbscan", min_samples=3)
        path = tmp_path / "hp_trace.csv"
        auto_hp_tuning(
            feats, labels, HPSearchSpace(0.0, 2.0, budget=10),
            strategy="bayes", spec_template=spec, trace_path=path,
        )
        assert path.read_text().startswith("iteration,lambda,score,incumbent")
