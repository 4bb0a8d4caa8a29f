import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hypass.alignment import (
    SimilaritySample,
    conditional_alignment_loss,
    marginal_alignment_loss,
    median_heuristic_bandwidths,
    mmd,
    mmd_with_grad,
    pair_similarities,
)
from hypass.synth import ShiftSpec, generate_domain_pair

import oracles


class TestPairSimilarities:
    def test_identical_features_zero(self):
        f = np.tile(np.array([1.0, 0.0]), (5, 1))
        sample = pair_similarities(f, None, "all")
        assert np.all(sample.values == 0.0)

    def test_antipodal_unit_vectors(self):
        f = np.array([[1.0, 0.0], [-1.0, 0.0]])
        sample = pair_similarities(f, None, "all")
        assert sample.values == pytest.approx([2.0])

    def test_positive_pairs_match_enumeration(self):
        rng = np.random.default_rng(0)
        f = rng.random((6, 3))
        labels = np.array([0, 0, 1, 1, 2, 2])
        sample = pair_similarities(f, labels, "positive", max_pairs=100)
        expected = sorted(
            np.linalg.norm(f[i] - f[j])
            for i in range(6)
            for j in range(i + 1, 6)
            if labels[i] == labels[j]
        )
        assert sorted(sample.values.tolist()) == pytest.approx(expected)

    def test_negative_pairs_complement(self):
        rng = np.random.default_rng(1)
        f = rng.random((6, 2))
        labels = np.array([0, 0, 0, 1, 1, 1])
        pos = pair_similarities(f, labels, "positive", max_pairs=100)
        neg = pair_similarities(f, labels, "negative", max_pairs=100)
        assert len(pos) + len(neg) == 15

    def test_no_positive_pairs_rejected(self):
        f = np.eye(3)
        with pytest.raises(ValueError):
            pair_similarities(f, np.array([0, 1, 2]), "positive")

    def test_subsampling_cap_and_determinism(self):
        rng = np.random.default_rng(2)
        f = rng.random((30, 2))
        a = pair_similarities(f, None, "all", max_pairs=50, seed=3)
        b = pair_similarities(f, None, "all", max_pairs=50, seed=3)
        assert len(a) == 50
        assert np.array_equal(a.values, b.values)


class TestMMD:
    def test_identical_samples_zero(self):
        rng = np.random.default_rng(0)
        a = rng.random(40)
        assert mmd(a, a, bandwidths=[0.7]) <= 1e-12

    def test_symmetry_exact(self):
        rng = np.random.default_rng(1)
        a, b = rng.random(25), rng.random(30)
        bws = median_heuristic_bandwidths(a, b)
        assert mmd(a, b, bws) == mmd(b, a, bws)

    def test_point_masses_closed_form(self):
        a = np.zeros(10)
        b = np.full(10, 10.0)
        expected = 2.0 * (1.0 - math.exp(-50.0))
        assert mmd(a, b, bandwidths=[1.0]) == pytest.approx(expected, rel=1e-12)

    def test_same_law_small_at_500(self):
        rng = np.random.default_rng(7)
        a = rng.normal(size=500)
        b = rng.normal(size=500)
        assert mmd(a, b, median_heuristic_bandwidths(a, b)) < 1e-2

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            mmd([], [1.0], [1.0])

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        a = rng.random(8)
        b = rng.random(6)
        bws = [0.5, 1.0]
        _, ga, gb = mmd_with_grad(a, b, bws)
        fd_a = oracles.finite_difference_grad(lambda x: mmd(x, b, bws), a.copy())
        fd_b = oracles.finite_difference_grad(lambda x: mmd(a, x, bws), b.copy())
        assert oracles.relative_grad_error(ga, fd_a) < 1e-6
        assert oracles.relative_grad_error(gb, fd_b) < 1e-6

    @settings(deadline=None, max_examples=30)
    @given(seed=st.integers(0, 10_000), m=st.integers(2, 20), n=st.integers(2, 20))
    def test_nonnegative_property(self, seed, m, n):
        rng = np.random.default_rng(seed)
        a, b = rng.normal(size=m), 0.5 + rng.normal(size=n)
        assert mmd(a, b, bandwidths=[1.0]) >= -1e-12


class TestConditionalAlignment:
    def test_identical_batches_zero(self):
        rng = np.random.default_rng(4)
        f = rng.random((12, 4))
        labels = np.repeat([0, 1, 2], 4)
        loss, d_s, d_t, parts = conditional_alignment_loss(f, labels, f.copy(), labels.copy())
        assert loss <= 1e-10
        assert parts["positive"] <= 1e-10 and parts["negative"] <= 1e-10

    def test_additivity_exact(self):
        rng = np.random.default_rng(5)
        f_s = rng.random((10, 3))
        f_t = rng.random((12, 3))
        y_s = np.repeat([0, 1], 5)
        y_t = np.repeat([0, 1, 2], 4)
        bws = [0.5, 1.0, 2.0]
        loss, _, _, parts = conditional_alignment_loss(f_s, y_s, f_t, y_t, bandwidths=bws)
        pos_s = pair_similarities(f_s, y_s, "positive")
        pos_t = pair_similarities(f_t, y_t, "positive")
        neg_s = pair_similarities(f_s, y_s, "negative")
        neg_t = pair_similarities(f_t, y_t, "negative")
        assert loss == mmd(pos_s.values, pos_t.values, bws) + mmd(neg_s.values, neg_t.values, bws)
        assert loss == parts["positive"] + parts["negative"]

    def test_equal_positives_shifted_negatives(self):
        # two ids with identical within-id geometry but different separation:
        # the positive term vanishes, the loss is the negative term alone
        base = np.array([[0.0, 0.0], [0.1, 0.0]])
        f_s = np.vstack([base, base + [5.0, 0.0]])
        f_t = np.vstack([base, base + [9.0, 0.0]])
        labels = np.array([0, 0, 1, 1])
        bws = [1.0]
        loss, _, _, parts = conditional_alignment_loss(f_s, labels, f_t, labels, bandwidths=bws)
        assert parts["positive"] <= 1e-12
        assert loss == pytest.approx(parts["negative"])

    def test_degenerate_labels_rejected(self):
        f = np.random.default_rng(6).random((4, 2))
        with pytest.raises(ValueError):
            conditional_alignment_loss(f, np.array([0, 0, 0, 0]), f, np.array([0, 0, 1, 1]))

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(7)
        f_s = rng.random((8, 3))
        f_t = rng.random((8, 3))
        y_s = np.repeat([0, 1], 4)
        y_t = np.repeat([0, 1], 4)
        bws = [0.8]
        _, d_s, d_t, _ = conditional_alignment_loss(f_s, y_s, f_t, y_t, bandwidths=bws)
        fd_s = oracles.finite_difference_grad(
            lambda f: conditional_alignment_loss(f, y_s, f_t, y_t, bandwidths=bws)[0], f_s.copy()
        )
        fd_t = oracles.finite_difference_grad(
            lambda f: conditional_alignment_loss(f_s, y_s, f, y_t, bandwidths=bws)[0], f_t.copy()
        )
        assert oracles.relative_grad_error(d_s, fd_s) < 1e-4
        assert oracles.relative_grad_error(d_t, fd_t) < 1e-4


class TestMarginalAlignment:
    def test_zero_shift_synthetic_small(self):
        spec = ShiftSpec(noise_sigma_source=0.6, noise_sigma_target=0.6)
        src, tgt = generate_domain_pair(seed=0, n_ids_source=20, n_ids_target=20,
                                        samples_per_id=12, dim=3, shift=spec)
        loss, _, _ = marginal_alignment_loss(src.points, tgt.points, max_pairs=500, seed=1)
        assert loss < 1e-2

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(8)
        f_s = rng.random((7, 2))
        f_t = rng.random((9, 2))
        bws = [0.6]
        _, d_s, d_t = marginal_alignment_loss(f_s, f_t, bandwidths=bws)
        fd_s = oracles.finite_difference_grad(
            lambda f: marginal_alignment_loss(f, f_t, bandwidths=bws)[0], f_s.copy()
        )
        assert oracles.relative_grad_error(d_s, fd_s) < 1e-4
        fd_t = oracles.finite_difference_grad(
            lambda f: marginal_alignment_loss(f_s, f, bandwidths=bws)[0], f_t.copy()
        )
        assert oracles.relative_grad_error(d_t, fd_t) < 1e-4


def test_learnable_affine_shift_minimization():
    """Gradient descent on an affine target transform drives the conditional
    loss below 0.2x its initial value within 500 steps (fixed seed)."""
    from hypass.synth import SHIFT_PRESETS

    src, tgt = generate_domain_pair(seed=0, n_ids_source=8, n_ids_target=8,
                                    samples_per_id=6, dim=4, shift=SHIFT_PRESETS["standard"])
    y_s = src.identity_labels
    y_t = tgt.identity_labels
    A = np.eye(4)
    b = np.zeros(4)
    bws = [0.25, 0.5, 1.0]

    def loss_and_grads():
        f_t = tgt.points @ A.T + b
        loss, _, d_t, _ = conditional_alignment_loss(
            src.points, y_s, f_t, y_t, max_pairs=200, bandwidths=bws, seed=0
        )
        return loss, d_t.T @ tgt.points, d_t.sum(axis=0)

    initial, _, _ = loss_and_grads()
    lr = 0.05
    for _ in range(500):
        _, dA, db = loss_and_grads()
        A -= lr * dA
        b -= lr * db
    final, _, _ = loss_and_grads()
    assert final < 0.2 * initial, (initial, final)


def test_similarity_sample_validation():
    with pytest.raises(ValueError):
        SimilaritySample(np.array([np.inf]), "all")
    with pytest.raises(ValueError):
        SimilaritySample(np.array([1.0]), "friends")
