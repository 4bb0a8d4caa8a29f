"""Conditional domain alignment of feature-similarity distributions.

Similarities are scalar L2 distances between feature pairs (range [0, 2] for
unit-normalized features). Alignment is a biased V-statistic squared MMD
with a sum of Gaussian kernels, averaged over the bandwidth set; the biased
form keeps the loss nonnegative. Bandwidths are treated as constants during
differentiation (recomputed per step by the median heuristic).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

RELATIONS = ("positive", "negative", "all")

_EPS = 1e-12
_BANDWIDTH_SUBSAMPLE = 512
_BANDWIDTH_FLOOR = 1e-6


@dataclass
class SimilaritySample:
    """Scalar pair similarities plus the pair indices they came from."""

    values: np.ndarray
    relation: str
    domain: str = ""
    idx_a: np.ndarray | None = None
    idx_b: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.relation not in RELATIONS:
            raise ValueError(f"relation must be one of {RELATIONS}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("similarities must be finite")

    def __len__(self) -> int:
        return self.values.size


def pair_similarities(
    features: np.ndarray,
    labels,
    relation: str,
    max_pairs: int = 4096,
    seed: int = 0,
    domain: str = "",
) -> SimilaritySample:
    """L2 distances over the requested pair relation, uniformly subsampled
    without replacement down to ``max_pairs`` when there are more."""
    f = np.asarray(features, dtype=float)
    n = f.shape[0]
    if relation not in RELATIONS:
        raise ValueError(f"relation must be one of {RELATIONS}")
    ia, ja = np.triu_indices(n, k=1)
    if relation != "all":
        y = np.asarray(labels, dtype=int)
        same = y[ia] == y[ja]
        keep = same if relation == "positive" else ~same
        ia, ja = ia[keep], ja[keep]
    if ia.size == 0:
        raise ValueError(f"no {relation} pairs available")
    if ia.size > max_pairs:
        sel = np.random.default_rng(seed).choice(ia.size, size=max_pairs, replace=False)
        ia, ja = ia[sel], ja[sel]
    values = np.linalg.norm(f[ia] - f[ja], axis=1)
    return SimilaritySample(values, relation, domain, ia, ja)


def median_heuristic_bandwidths(*samples, factors=(0.5, 1.0, 2.0)) -> np.ndarray:
    """Median of pairwise gaps in the pooled sample, scaled by the factors."""
    pooled = np.concatenate([np.asarray(s, dtype=float).ravel() for s in samples])
    if pooled.size > _BANDWIDTH_SUBSAMPLE:
        srt = np.sort(pooled)
        idx = np.linspace(0, pooled.size - 1, _BANDWIDTH_SUBSAMPLE).astype(int)
        pooled = srt[idx]
    gaps = np.abs(pooled[:, None] - pooled[None, :])
    med = float(np.median(gaps[np.triu_indices(pooled.size, k=1)]))
    return max(med, _BANDWIDTH_FLOOR) * np.asarray(factors, dtype=float)


def _check_samples(a, b):
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.size == 0 or b.size == 0:
        raise ValueError("empty sample")
    return a, b


def mmd_with_grad(sample_a, sample_b, bandwidths) -> tuple[float, np.ndarray, np.ndarray]:
    """Squared MMD (biased V-statistic, kernels averaged over bandwidths)
    and its gradients w.r.t. the two scalar samples."""
    a, b = _check_samples(sample_a, sample_b)
    # canonicalize the orientation so mmd(a, b) and mmd(b, a) run the exact
    # same float operations (bit-identical symmetry)
    swapped = (b.size, b.tobytes()) < (a.size, a.tobytes())
    if swapped:
        a, b = b, a
    bws = np.atleast_1d(np.asarray(bandwidths, dtype=float))
    if np.any(bws <= 0):
        raise ValueError("bandwidths must be > 0")
    m, n = a.size, b.size
    daa = a[:, None] - a[None, :]
    dbb = b[:, None] - b[None, :]
    dab = a[:, None] - b[None, :]

    total = 0.0
    ga = np.zeros(m)
    gb = np.zeros(n)
    for h in bws:
        kaa = np.exp(-0.5 * (daa / h) ** 2)
        kbb = np.exp(-0.5 * (dbb / h) ** 2)
        kab = np.exp(-0.5 * (dab / h) ** 2)
        total += kaa.mean() + kbb.mean() - 2.0 * kab.mean()
        # d k(x,y)/dx = -(x-y)/h^2 * k
        inv_h2 = 1.0 / (h * h)
        ga += (-inv_h2) * (
            2.0 * (daa * kaa).sum(axis=1) / (m * m) - 2.0 * (dab * kab).sum(axis=1) / (m * n)
        )
        gb += (-inv_h2) * (
            2.0 * (dbb * kbb).sum(axis=1) / (n * n) + 2.0 * (dab * kab).sum(axis=0) / (m * n)
        )
    k = bws.size
    if swapped:
        ga, gb = gb, ga
    return total / k, ga / k, gb / k


def mmd(sample_a, sample_b, bandwidths) -> float:
    value, _, _ = mmd_with_grad(sample_a, sample_b, bandwidths)
    return value


def _scatter_similarity_grad(grad_values: np.ndarray, sample: SimilaritySample, features: np.ndarray) -> np.ndarray:
    """Push dL/d(similarities) back onto the features through s = ||f_i - f_j||."""
    out = np.zeros_like(features)
    diff = features[sample.idx_a] - features[sample.idx_b]
    safe = np.maximum(sample.values, _EPS)
    contrib = (grad_values / safe)[:, None] * diff
    contrib[sample.values < _EPS] = 0.0
    np.add.at(out, sample.idx_a, contrib)
    np.add.at(out, sample.idx_b, -contrib)
    return out


def conditional_alignment_loss(
    f_src: np.ndarray,
    labels_src,
    f_tgt: np.ndarray,
    labels_tgt,
    max_pairs: int = 4096,
    seed: int = 0,
    bandwidths=None,
) -> tuple[float, np.ndarray, np.ndarray, dict[str, float]]:
    """MMD between positive-pair similarity distributions plus MMD between
    negative-pair ones; gradients flow into both feature matrices.

    Raises if any of the four similarity sets is empty (degenerate labels).
    """
    f_src = np.asarray(f_src, dtype=float)
    f_tgt = np.asarray(f_tgt, dtype=float)
    s_pos = pair_similarities(f_src, labels_src, "positive", max_pairs, seed, "source")
    t_pos = pair_similarities(f_tgt, labels_tgt, "positive", max_pairs, seed + 1, "target")
    s_neg = pair_similarities(f_src, labels_src, "negative", max_pairs, seed + 2, "source")
    t_neg = pair_similarities(f_tgt, labels_tgt, "negative", max_pairs, seed + 3, "target")

    d_src = np.zeros_like(f_src)
    d_tgt = np.zeros_like(f_tgt)
    parts = {}
    total = 0.0
    for name, s_smp, t_smp in (("positive", s_pos, t_pos), ("negative", s_neg, t_neg)):
        bws = bandwidths if bandwidths is not None else median_heuristic_bandwidths(s_smp.values, t_smp.values)
        value, g_s, g_t = mmd_with_grad(s_smp.values, t_smp.values, bws)
        total += value
        parts[name] = value
        d_src += _scatter_similarity_grad(g_s, s_smp, f_src)
        d_tgt += _scatter_similarity_grad(g_t, t_smp, f_tgt)
    return total, d_src, d_tgt, parts


def marginal_alignment_loss(
    f_src: np.ndarray,
    f_tgt: np.ndarray,
    max_pairs: int = 4096,
    seed: int = 0,
    bandwidths=None,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Single MMD between unconditioned similarity distributions; used before
    any pseudo-labels exist."""
    f_src = np.asarray(f_src, dtype=float)
    f_tgt = np.asarray(f_tgt, dtype=float)
    s_all = pair_similarities(f_src, None, "all", max_pairs, seed, "source")
    t_all = pair_similarities(f_tgt, None, "all", max_pairs, seed + 1, "target")
    bws = bandwidths if bandwidths is not None else median_heuristic_bandwidths(s_all.values, t_all.values)
    value, g_s, g_t = mmd_with_grad(s_all.values, t_all.values, bws)
    return value, _scatter_similarity_grad(g_s, s_all, f_src), _scatter_similarity_grad(g_t, t_all, f_tgt)
