"""Small learnable feature encoder with ID-discriminative losses.

The encoder is a fixed 2-layer perceptron (tanh hidden layer) whose outputs
are L2-normalized row-wise, so downstream distances live in [0, 2]. All
gradients are computed in closed form; losses return the gradient with
respect to the (normalized) features and ``backprop_features`` pushes a
feature gradient through the normalization and the MLP onto the parameters.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

_NORM_FLOOR = 1e-12


class Encoder:
    """2-layer MLP: dim_in -> hidden (tanh) -> n_features, unit-normalized."""

    def __init__(self, dim_in: int, hidden: int = 64, n_features: int = 32, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.dim_in = dim_in
        self.hidden = hidden
        self.n_features = n_features
        self.w1 = rng.normal(scale=1.0 / np.sqrt(dim_in), size=(dim_in, hidden))
        self.b1 = np.zeros(hidden)
        self.w2 = rng.normal(scale=1.0 / np.sqrt(hidden), size=(hidden, n_features))
        self.b2 = np.zeros(n_features)

    def params(self) -> dict[str, np.ndarray]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}

    def forward(self, points: np.ndarray):
        """Return (features, cache); features are unit rows."""
        x = np.asarray(points, dtype=float)
        h = np.tanh(x @ self.w1 + self.b1)
        z = h @ self.w2 + self.b2
        norms = np.maximum(np.linalg.norm(z, axis=1, keepdims=True), _NORM_FLOOR)
        f = z / norms
        return f, (x, h, f, norms)

    def backprop_features(self, cache, d_features: np.ndarray) -> dict[str, np.ndarray]:
        """Gradient of a scalar loss w.r.t. parameters, given dL/d(features)."""
        x, h, f, norms = cache
        g = np.asarray(d_features, dtype=float)
        dz = (g - np.sum(g * f, axis=1, keepdims=True) * f) / norms
        dw2 = h.T @ dz
        db2 = dz.sum(axis=0)
        dh = (dz @ self.w2.T) * (1.0 - h * h)
        dw1 = x.T @ dh
        db1 = dh.sum(axis=0)
        return {"w1": dw1, "b1": db1, "w2": dw2, "b2": db2}


def encode(encoder: Encoder, points: np.ndarray) -> np.ndarray:
    """Unit-normalized features for a point matrix."""
    f, _ = encoder.forward(points)
    return f


class ClassifierHead:
    """Linear map from feature space to class logits."""

    def __init__(self, n_features: int, n_classes: int, seed: int = 0):
        if n_classes < 1:
            raise ValueError("n_classes must be >= 1")
        rng = np.random.default_rng(seed)
        self.n_classes = n_classes
        self.W = rng.normal(scale=1.0 / np.sqrt(n_features), size=(n_features, n_classes))
        self.b = np.zeros(n_classes)

    def params(self) -> dict[str, np.ndarray]:
        return {"W": self.W, "b": self.b}


def cross_entropy_loss(head: ClassifierHead, features: np.ndarray, labels) -> tuple[float, dict[str, np.ndarray]]:
    """Mean softmax cross-entropy; returns gradients for the head and features."""
    f = np.asarray(features, dtype=float)
    y = np.asarray(labels, dtype=int)
    if y.min(initial=0) < 0 or y.max(initial=0) >= head.n_classes:
        raise ValueError(f"labels must lie in [0, {head.n_classes})")
    logits = f @ head.W + head.b
    logits -= logits.max(axis=1, keepdims=True)
    exp = np.exp(logits)
    probs = exp / exp.sum(axis=1, keepdims=True)
    n = f.shape[0]
    loss = float(-np.mean(np.log(probs[np.arange(n), y] + 1e-300)))
    dlogits = probs.copy()
    dlogits[np.arange(n), y] -= 1.0
    dlogits /= n
    grads = {
        "W": f.T @ dlogits,
        "b": dlogits.sum(axis=0),
        "features": dlogits @ head.W.T,
    }
    return loss, grads


def _distance_matrix(f: np.ndarray) -> np.ndarray:
    sq = np.sum(f * f, axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * (f @ f.T), 0.0)
    np.fill_diagonal(d2, 0.0)
    return np.sqrt(d2)


def batch_hard_triplet_loss(features: np.ndarray, labels, margin: float = 0.3) -> tuple[float, np.ndarray]:
    """Batch-hard triplet loss with L2 distances.

    Each anchor is hinged on its farthest same-label and nearest other-label
    point; the subgradient is zero exactly at hinge boundaries and at
    zero-distance pairs.
    """
    f = np.asarray(features, dtype=float)
    y = np.asarray(labels, dtype=int)
    n = f.shape[0]
    ids, counts = np.unique(y, return_counts=True)
    if counts.min() < 2:
        raise ValueError("every batch label needs at least 2 instances")
    if ids.size < 2:
        raise ValueError("batch needs at least 2 distinct labels")

    dist = _distance_matrix(f)
    same = y[:, None] == y[None, :]
    pos_mask = same & ~np.eye(n, dtype=bool)
    neg_mask = ~same

    pos_d = np.where(pos_mask, dist, -np.inf)
    neg_d = np.where(neg_mask, dist, np.inf)
    hard_pos = np.argmax(pos_d, axis=1)
    hard_neg = np.argmin(neg_d, axis=1)
    dp = dist[np.arange(n), hard_pos]
    dn = dist[np.arange(n), hard_neg]
    hinge = dp - dn + margin
    active = hinge > 0.0
    loss = float(np.mean(np.maximum(hinge, 0.0)))

    grad = np.zeros_like(f)
    for i in np.flatnonzero(active):
        p, m = hard_pos[i], hard_neg[i]
        if dp[i] > _NORM_FLOOR:
            u = (f[i] - f[p]) / dp[i] / n
            grad[i] += u
            grad[p] -= u
        if dn[i] > _NORM_FLOOR:
            v = (f[i] - f[m]) / dn[i] / n
            grad[i] -= v
            grad[m] += v
    return loss, grad


def pk_batch_sampler(labels, P: int, K: int, seed: int):
    """Infinite stream of P*K index batches: P distinct labels, K instances
    each (drawn with replacement when a label has fewer than K)."""
    y = np.asarray(labels, dtype=int)
    ids = np.unique(y)
    if ids.size < P:
        raise ValueError(f"need >= {P} distinct labels, got {ids.size}")
    members = {int(i): np.flatnonzero(y == i) for i in ids}
    rng = np.random.default_rng(seed)

    def stream():
        while True:
            batch = []
            for ident in rng.choice(ids, size=P, replace=False):
                pool = members[int(ident)]
                replace = pool.size < K
                batch.append(rng.choice(pool, size=K, replace=replace))
            yield np.concatenate(batch)

    return stream()


@dataclass
class SGD:
    """Plain SGD with momentum over named parameter dicts."""

    lr: float
    momentum: float = 0.9

    def __post_init__(self):
        self._velocity: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        for name, g in grads.items():
            v = self._velocity.get(name)
            if v is None or v.shape != params[name].shape:  # fresh or re-created tensor
                v = np.zeros_like(params[name])
                self._velocity[name] = v
            v *= self.momentum
            v += g
            params[name] -= self.lr * v


def save_checkpoint(path, params: dict[str, np.ndarray]) -> None:
    """Text dump of named tensors (shape header + hex floats); exact round trip."""
    lines = ["hypass-checkpoint 1"]
    for name in sorted(params):
        arr = np.asarray(params[name], dtype=float)
        lines.append(f"{name} {' '.join(str(s) for s in arr.shape)}")
        lines.append(" ".join(float(v).hex() for v in arr.ravel()))
    Path(path).write_text("\n".join(lines) + "\n")


def load_checkpoint(path) -> dict[str, np.ndarray]:
    text = Path(path).read_text().splitlines()
    if not text or text[0] != "hypass-checkpoint 1":
        raise ValueError(f"{path}: not a hypass checkpoint")
    params: dict[str, np.ndarray] = {}
    i = 1
    while i < len(text):
        header = text[i].split()
        name, shape = header[0], tuple(int(s) for s in header[1:])
        values = np.array([float.fromhex(v) for v in text[i + 1].split()])
        params[name] = values.reshape(shape)
        i += 2
    return params
