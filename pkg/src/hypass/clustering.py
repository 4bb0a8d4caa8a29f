"""Clustering algorithms used for pseudo-label generation and HP evaluation.

All algorithms operate on raw point matrices with the Euclidean (L2) metric
and return a :class:`Partition`. DBSCAN may mark points as noise
(``NOISE = -1``); k-means and agglomerative clustering label every point.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

NOISE = -1

VALID_ALGORITHMS = ("dbscan", "kmeans", "agglomerative")


@dataclass
class Partition:
    """Cluster assignment per point.

    Cluster IDs are contiguous ``0..n_clusters-1``; ``NOISE`` (-1) marks
    unclustered points (density methods only).
    """

    assignment: np.ndarray
    n_clusters: int = field(default=-1)

    def __post_init__(self):
        self.assignment = np.asarray(self.assignment, dtype=int)
        ids = np.unique(self.assignment[self.assignment != NOISE])
        n = len(ids)
        if n > 0 and (ids[0] != 0 or ids[-1] != n - 1):
            raise ValueError("cluster IDs must be contiguous starting at 0")
        if self.n_clusters < 0:
            self.n_clusters = n
        elif self.n_clusters != n:
            raise ValueError(f"n_clusters={self.n_clusters} but assignment has {n} clusters")

    @property
    def n_noise(self) -> int:
        return int(np.sum(self.assignment == NOISE))

    def __len__(self) -> int:
        return len(self.assignment)


@dataclass(frozen=True)
class ClusteringSpec:
    """Clusterer template; ``lam`` in the search loop fills eps (density) or k."""

    algorithm: str = "dbscan"
    eps: float = 0.5
    k: int = 2
    min_samples: int = 4

    def __post_init__(self):
        if self.algorithm not in VALID_ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.eps < 0:
            raise ValueError("eps must be >= 0")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.min_samples < 1:
            raise ValueError("min_samples must be >= 1")

    def with_lambda(self, lam: float) -> "ClusteringSpec":
        """Return a copy with the tuned hyperparameter set to ``lam``."""
        if self.algorithm == "kmeans":
            return ClusteringSpec(self.algorithm, self.eps, int(round(lam)), self.min_samples)
        return ClusteringSpec(self.algorithm, float(lam), self.k, self.min_samples)

    def cluster(self, points: np.ndarray, seed: int = 0) -> Partition:
        if self.algorithm == "dbscan":
            return dbscan(points, self.eps, self.min_samples)
        if self.algorithm == "kmeans":
            return kmeans(points, self.k, seed=seed)
        return agglomerative(points, self.eps)


def _as_points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[0] == 0:
        raise ValueError("points must be a non-empty N x d matrix")
    return pts


def pairwise_distances(points: np.ndarray) -> np.ndarray:
    """Dense Euclidean distance matrix with an exactly-zero diagonal."""
    pts = np.asarray(points, dtype=float)
    sq = np.sum(pts * pts, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (pts @ pts.T)
    np.maximum(d2, 0.0, out=d2)
    np.fill_diagonal(d2, 0.0)
    return np.sqrt(d2)


def dbscan(points, eps: float, min_samples: int) -> Partition:
    """Density-based clustering.

    A point is core iff its eps-neighborhood (self included) holds at least
    ``min_samples`` points. Clusters are the connected components of core
    points under eps-reachability, numbered in order of their smallest core
    index. A non-core point within eps of some core joins the adjacent
    cluster with the lowest ID; remaining points are NOISE.
    """
    pts = _as_points(points)
    if eps < 0:
        raise ValueError("eps must be >= 0")
    if min_samples < 1:
        raise ValueError("min_samples must be >= 1")
    n = pts.shape[0]
    dist = pairwise_distances(pts)
    within = dist <= eps
    core = within.sum(axis=1) >= min_samples

    labels = np.full(n, NOISE, dtype=int)
    cluster = 0
    for i in range(n):
        if not core[i] or labels[i] != NOISE:
            continue
        # BFS over core-core eps edges
        labels[i] = cluster
        frontier = [i]
        while frontier:
            j = frontier.pop()
            for m in np.flatnonzero(within[j] & core):
                if labels[m] == NOISE:
                    labels[m] = cluster
                    frontier.append(int(m))
        cluster += 1

    for i in range(n):
        if core[i] or not np.any(within[i] & core):
            continue
        labels[i] = labels[within[i] & core].min()
    return Partition(labels, cluster)


def _kmeans_pp_init(pts: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = pts.shape[0]
    centers = np.empty((k, pts.shape[1]))
    centers[0] = pts[rng.integers(n)]
    d2 = np.sum((pts - centers[0]) ** 2, axis=1)
    for c in range(1, k):
        total = d2.sum()
        if total <= 0:
            centers[c] = pts[rng.integers(n)]
            continue
        centers[c] = pts[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, np.sum((pts - centers[c]) ** 2, axis=1))
    return centers


def kmeans(points, k: int, seed: int = 0, max_iter: int = 100) -> Partition:
    """Lloyd iterations from k-means++ seeding; empty clusters are re-seeded
    to the point farthest from its current centroid."""
    pts = _as_points(points)
    n = pts.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k={k} outside [1, {n}]")
    rng = np.random.default_rng(seed)
    centers = _kmeans_pp_init(pts, k, rng)
    labels = np.zeros(n, dtype=int)
    for _ in range(max_iter):
        d2 = np.sum((pts[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        new_labels = np.argmin(d2, axis=1)
        point_d2 = d2[np.arange(n), new_labels]
        for c in range(k):
            mask = new_labels == c
            if mask.any():
                centers[c] = pts[mask].mean(axis=0)
            else:
                far = int(np.argmax(point_d2))
                centers[c] = pts[far]
                new_labels[far] = c
                point_d2[far] = 0.0
        if np.array_equal(new_labels, labels):
            labels = new_labels
            break
        labels = new_labels
    return _relabel_contiguous(labels)


def inertia(points, partition: Partition) -> float:
    """Sum of squared distances to assigned-cluster centroids."""
    pts = _as_points(points)
    total = 0.0
    for c in range(partition.n_clusters):
        mask = partition.assignment == c
        center = pts[mask].mean(axis=0)
        total += float(np.sum((pts[mask] - center) ** 2))
    return total


def agglomerative(points, distance_threshold: float, linkage: str = "average") -> Partition:
    """Hierarchical merging until the minimum average-linkage distance
    between clusters exceeds the threshold.

    Cluster distances are maintained with the Lance-Williams update for
    average linkage; the closest pair with the lexicographically smallest
    (i, j) wins ties. Final clusters are numbered by smallest member index.
    """
    pts = _as_points(points)
    if distance_threshold < 0:
        raise ValueError("distance_threshold must be >= 0")
    if linkage != "average":
        raise ValueError("only average linkage is supported")
    n = pts.shape[0]
    dist = pairwise_distances(pts)
    np.fill_diagonal(dist, np.inf)
    sizes = np.ones(n)
    members: dict[int, list[int]] = {i: [i] for i in range(n)}
    active = np.ones(n, dtype=bool)

    while len(members) > 1:
        masked = np.where(active[:, None] & active[None, :], dist, np.inf)
        flat = int(np.argmin(masked))  # row-major argmin = lexicographic tie-break
        i, j = divmod(flat, n)
        if i > j:
            i, j = j, i
        if masked[i, j] > distance_threshold:
            break
        # Lance-Williams average-linkage update, merged cluster kept at index i
        ni, nj = sizes[i], sizes[j]
        merged = (ni * dist[i] + nj * dist[j]) / (ni + nj)
        dist[i] = merged
        dist[:, i] = merged
        dist[i, i] = np.inf
        sizes[i] = ni + nj
        active[j] = False
        members[i].extend(members.pop(j))

    labels = np.empty(n, dtype=int)
    for new_id, key in enumerate(sorted(members, key=lambda k: min(members[k]))):
        labels[members[key]] = new_id
    return Partition(labels, len(members))


def _relabel_contiguous(labels: np.ndarray) -> Partition:
    """Relabel clusters to 0..m-1 in order of first appearance; NOISE kept."""
    labels = np.asarray(labels, dtype=int)
    out = np.full_like(labels, NOISE)
    mapping: dict[int, int] = {}
    for idx, lab in enumerate(labels):
        if lab == NOISE:
            continue
        if lab not in mapping:
            mapping[lab] = len(mapping)
        out[idx] = mapping[lab]
    return Partition(out, len(mapping))
