"""Clustering-quality criteria used as selection objectives plus retrieval mAP.

Noise handling: a NOISE (-1) prediction is treated as a singleton cluster by
default ("each unclustered point is its own identity"); pass ``noise="drop"``
to exclude noise points instead.
"""

from __future__ import annotations

import numpy as np

from .clustering import NOISE, Partition

METRIC_KINDS = ("ari", "nmi", "pairwise_error")


def _labels(x) -> np.ndarray:
    if isinstance(x, Partition):
        x = x.assignment
    return np.asarray(x, dtype=int)


def _resolve_noise(true_labels: np.ndarray, pred: np.ndarray, noise: str):
    if noise == "singleton":
        pred = pred.copy()
        idx = np.flatnonzero(pred == NOISE)
        if idx.size:
            fresh = pred.max(initial=-1) + 1
            pred[idx] = fresh + np.arange(idx.size)
        return true_labels, pred
    if noise == "drop":
        keep = pred != NOISE
        return true_labels[keep], pred[keep]
    raise ValueError(f"unknown noise mode {noise!r}")


def _contingency(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1), dtype=np.int64)
    np.add.at(table, (ai, bi), 1)
    return table


def _check_pair(true_labels, pred) -> tuple[np.ndarray, np.ndarray]:
    t = _labels(true_labels)
    p = _labels(pred)
    if t.shape != p.shape:
        raise ValueError(f"length mismatch: {t.shape} vs {p.shape}")
    return t, p


def ari(true_labels, pred, noise: str = "singleton") -> float:
    """Adjusted Rand index under the permutation model, in [-1, 1]."""
    t, p = _check_pair(true_labels, pred)
    t, p = _resolve_noise(t, p, noise)
    table = _contingency(t, p)
    n = table.sum()
    sum_ij = (table * (table - 1) // 2).sum()
    sum_a = (table.sum(axis=1) * (table.sum(axis=1) - 1) // 2).sum()
    sum_b = (table.sum(axis=0) * (table.sum(axis=0) - 1) // 2).sum()
    n_pairs = n * (n - 1) // 2
    expected = sum_a * sum_b / n_pairs if n_pairs else 0.0
    max_index = 0.5 * (sum_a + sum_b)
    if max_index == expected:
        return 1.0  # both partitions degenerate (all singletons or one cluster)
    return float((sum_ij - expected) / (max_index - expected))


def _entropy(counts: np.ndarray) -> float:
    n = counts.sum()
    probs = counts[counts > 0] / n
    return float(-np.sum(probs * np.log(probs)))


def nmi(true_labels, pred, noise: str = "singleton") -> float:
    """Normalized mutual information with arithmetic-mean normalization."""
    t, p = _check_pair(true_labels, pred)
    t, p = _resolve_noise(t, p, noise)
    table = _contingency(t, p)
    h_t = _entropy(table.sum(axis=1))
    h_p = _entropy(table.sum(axis=0))
    if h_t == 0.0 and h_p == 0.0:
        return 1.0  # identical single-cluster partitions
    n = table.sum()
    nz = table > 0
    joint = table[nz] / n
    outer = np.outer(table.sum(axis=1), table.sum(axis=0))[nz] / (n * n)
    mi = float(np.sum(joint * np.log(joint / outer)))
    denom = 0.5 * (h_t + h_p)
    return float(np.clip(mi / denom, 0.0, 1.0))


def pairwise_error(true_labels, pred, noise: str = "singleton") -> float:
    """Fraction of unordered point pairs whose same-cluster relation disagrees
    with the same-identity relation (the 0-1 pair verification cost)."""
    t, p = _check_pair(true_labels, pred)
    t, p = _resolve_noise(t, p, noise)
    if t.size < 2:
        raise ValueError("pairwise error needs at least 2 points")
    table = _contingency(t, p)
    n = table.sum()
    both = (table * (table - 1) // 2).sum()
    same_id = (table.sum(axis=1) * (table.sum(axis=1) - 1) // 2).sum()
    same_cl = (table.sum(axis=0) * (table.sum(axis=0) - 1) // 2).sum()
    disagreements = same_id + same_cl - 2 * both
    return float(disagreements / (n * (n - 1) // 2))


def score(metric: str, true_labels, pred, noise: str = "singleton") -> float:
    """Selection score for a metric kind; higher is always better."""
    if metric == "ari":
        return ari(true_labels, pred, noise)
    if metric == "nmi":
        return nmi(true_labels, pred, noise)
    if metric == "pairwise_error":
        return -pairwise_error(true_labels, pred, noise)
    raise ValueError(f"unknown metric {metric!r}")


def mean_average_precision(query_feats, gallery_feats, query_ids, gallery_ids) -> float:
    """Retrieval mAP with L2 ranking.

    When the query set is the gallery (same array), each query is excluded
    from its own ranking.
    """
    q = np.asarray(query_feats, dtype=float)
    g = np.asarray(gallery_feats, dtype=float)
    qid = np.asarray(query_ids, dtype=int)
    gid = np.asarray(gallery_ids, dtype=int)
    same_set = q is gallery_feats or (q.shape == g.shape and np.array_equal(q, g))
    d2 = np.sum(q * q, axis=1)[:, None] + np.sum(g * g, axis=1)[None, :] - 2.0 * (q @ g.T)

    aps = []
    for i in range(q.shape[0]):
        order = np.argsort(d2[i], kind="stable")
        if same_set:
            order = order[order != i]
        matches = gid[order] == qid[i]
        n_rel = int(matches.sum())
        if n_rel == 0:
            raise ValueError(f"query id {qid[i]} absent from gallery")
        ranks = np.flatnonzero(matches) + 1
        precisions = np.arange(1, n_rel + 1) / ranks
        aps.append(precisions.mean())
    return float(np.mean(aps))


def rank1(query_feats, gallery_feats, query_ids, gallery_ids) -> float:
    """Fraction of queries whose nearest gallery entry shares their ID."""
    q = np.asarray(query_feats, dtype=float)
    g = np.asarray(gallery_feats, dtype=float)
    qid = np.asarray(query_ids, dtype=int)
    gid = np.asarray(gallery_ids, dtype=int)
    same_set = q is gallery_feats or (q.shape == g.shape and np.array_equal(q, g))
    d2 = np.sum(q * q, axis=1)[:, None] + np.sum(g * g, axis=1)[None, :] - 2.0 * (q @ g.T)
    hits = 0
    for i in range(q.shape[0]):
        order = np.argsort(d2[i], kind="stable")
        if same_set:
            order = order[order != i]
        hits += int(gid[order[0]] == qid[i])
    return hits / q.shape[0]
