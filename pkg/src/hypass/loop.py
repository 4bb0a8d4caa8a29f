"""Cyclic pseudo-labeling self-training with per-cycle hyperparameter selection.

One run is: an initialization phase (source ID losses plus marginal
similarity alignment, since the target has no labels yet), then ``n_epochs``
cycles of feature extraction -> hyperparameter selection on the source
validation set -> target pseudo-labeling -> one training epoch on the
enabled loss terms (target ID + source ID + conditional alignment, summed
unweighted). Ablation variants toggle loss terms and swap automatic
selection for a fixed value.

Target ground-truth labels are read only for the per-cycle oracle score in
the records, never for gradients or selection.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, replace

import numpy as np

from . import metrics
from .alignment import conditional_alignment_loss, marginal_alignment_loss
from .clustering import NOISE, ClusteringSpec, Partition
from .encoder import (
    SGD,
    ClassifierHead,
    Encoder,
    batch_hard_triplet_loss,
    cross_entropy_loss,
    pk_batch_sampler,
)
from .hp_search import HPSearchSpace, auto_hp_tuning
from .synth import DomainDataset

log = logging.getLogger(__name__)

HP_STRATEGIES = ("bayes", "grid", "fixed")
_KMEANS_SEED = 0


@dataclass
class LoopConfig:
    """Knobs for one self-training run; defaults are the standard benchmark."""

    n_epochs: int = 50
    init_epochs: int = 10
    # encoder / optimizer
    hidden: int = 64
    n_features: int = 32
    lr: float = 0.1
    lr_decay_epochs: tuple[int, ...] = ()
    lr_decay_factor: float = 0.1
    momentum: float = 0.9
    margin: float = 0.3
    batch_p: int = 8
    batch_k: int = 4
    # clustering
    algorithm: str = "dbscan"
    min_samples: int = 4
    # hyperparameter selection
    hp_strategy: str = "bayes"
    fixed_lambda: float | None = None
    bayes_init: float | None = None
    n_search: int = 50
    grid_step: float = 0.05
    metric: str = "ari"
    eps_range: tuple[float, float] = (0.0, 2.0)
    # loss switches (ablation variants)
    enable_target_id: bool = True
    enable_source_id: bool = True
    enable_align: bool = True
    # pseudo-label handling
    keep_noise: bool = False
    max_pairs: int = 4096
    seed: int = 0

    def __post_init__(self):
        if not (self.enable_target_id or self.enable_source_id or self.enable_align):
            raise ValueError("at least one loss term must be enabled")
        if self.hp_strategy not in HP_STRATEGIES:
            raise ValueError(f"hp_strategy must be one of {HP_STRATEGIES}")
        if self.hp_strategy == "fixed" and self.fixed_lambda is None:
            raise ValueError("fixed strategy requires fixed_lambda")
        if self.metric not in metrics.METRIC_KINDS:
            raise ValueError(f"metric must be one of {metrics.METRIC_KINDS}")

    def clustering_template(self) -> ClusteringSpec:
        return ClusteringSpec(algorithm=self.algorithm, min_samples=self.min_samples)

    def search_space(self, n_target: int) -> HPSearchSpace:
        if self.algorithm == "kmeans":
            return HPSearchSpace(1.0, float(n_target), integer=True, budget=self.n_search)
        return HPSearchSpace(self.eps_range[0], self.eps_range[1], budget=self.n_search)


# Loss-term switches of the ablation variants: (target ID, source ID,
# alignment, automatic HP selection). Variant 5 is the full method.
ABLATION_VARIANTS = {
    1: (True, False, False, True),
    2: (True, False, True, True),
    3: (True, True, False, True),
    4: (True, True, True, False),
    5: (True, True, True, True),
}


def ablation_config(variant: int, base: LoopConfig) -> LoopConfig:
    """Loss/selection switch set for an ablation variant; variant 4 keeps the
    configured fixed lambda (the transferred empirical value)."""
    if variant not in ABLATION_VARIANTS:
        raise ValueError(f"variant must be in {sorted(ABLATION_VARIANTS)}")
    t_id, s_id, align, auto = ABLATION_VARIANTS[variant]
    cfg = replace(base, enable_target_id=t_id, enable_source_id=s_id, enable_align=align)
    if auto:
        strategy = base.hp_strategy if base.hp_strategy != "fixed" else "bayes"
        return replace(cfg, hp_strategy=strategy)
    if base.fixed_lambda is None:
        raise ValueError("variant 4 needs fixed_lambda (the empirical value) set")
    return replace(cfg, hp_strategy="fixed")


@dataclass
class CycleRecord:
    """Per-cycle log row; the target score is oracle-only reporting."""

    epoch: int
    selected_lambda: float
    target_ari: float
    n_clusters: int
    n_noise: int
    loss_id_t: float
    loss_id_s: float
    loss_align: float
    loss_total: float
    wall_time: float

    FIELDS = (
        "epoch",
        "selected_lambda",
        "target_ari",
        "n_clusters",
        "n_noise",
        "loss_id_t",
        "loss_id_s",
        "loss_align",
        "loss_total",
        "wall_time",
    )

    def row(self) -> list:
        return [getattr(self, name) for name in self.FIELDS]


class _Trainer:
    """Holds the encoder, heads and optimizer state across phases."""

    def __init__(self, dim_in: int, n_source_classes: int, config: LoopConfig):
        self.config = config
        self.encoder = Encoder(dim_in, config.hidden, config.n_features, seed=config.seed)
        self.head_s = ClassifierHead(config.n_features, n_source_classes, seed=config.seed + 1)
        self.head_t: ClassifierHead | None = None
        self.opt = SGD(lr=config.lr, momentum=config.momentum)

    def ensure_target_head(self, n_classes: int, seed: int) -> None:
        if self.head_t is None or self.head_t.n_classes != n_classes:
            self.head_t = ClassifierHead(self.config.n_features, n_classes, seed=seed)

    def id_loss(self, head: ClassifierHead, features: np.ndarray, labels: np.ndarray):
        """Cross-entropy + batch-hard triplet on one P*K batch."""
        ce, ce_grads = cross_entropy_loss(head, features, labels)
        tri, d_tri = batch_hard_triplet_loss(features, labels, self.config.margin)
        return ce + tri, ce_grads["features"] + d_tri, {"W": ce_grads["W"], "b": ce_grads["b"]}

    def apply(self, grads: dict[str, np.ndarray]) -> None:
        params = {f"enc.{k}": v for k, v in self.encoder.params().items()}
        params.update({f"head_s.{k}": v for k, v in self.head_s.params().items()})
        if self.head_t is not None:
            params.update({f"head_t.{k}": v for k, v in self.head_t.params().items()})
        self.opt.step(params, {k: v for k, v in grads.items() if k in params})

    def named_params(self) -> dict[str, np.ndarray]:
        out = {f"enc.{k}": v for k, v in self.encoder.params().items()}
        out.update({f"head_s.{k}": v for k, v in self.head_s.params().items()})
        return out


def _dense_labels(labels: np.ndarray) -> np.ndarray:
    _, inverse = np.unique(labels, return_inverse=True)
    return inverse


def _steps_per_epoch(n_points: int, config: LoopConfig) -> int:
    return max(1, math.ceil(n_points / (config.batch_p * config.batch_k)))


def _check_dataset(ds: DomainDataset, role: str) -> None:
    if ds.n_ids < 2:
        raise ValueError(f"{role} dataset needs at least 2 identities")


def initialize(source_train: DomainDataset, target_train: DomainDataset, config: LoopConfig) -> Encoder:
    """Train a fresh encoder on source ID losses plus marginal similarity
    alignment; with ``init_epochs == 0`` the seeded encoder is returned as is."""
    trainer, _ = _init_phase(source_train, target_train, config)
    return trainer.encoder


def _init_phase(source_train: DomainDataset, target_train: DomainDataset, config: LoopConfig):
    _check_dataset(source_train, "source")
    if len(target_train) < 2:
        raise ValueError("target dataset needs at least 2 points")
    src_labels = _dense_labels(source_train.identity_labels)
    trainer = _Trainer(source_train.dim, int(src_labels.max()) + 1, config)
    losses: list[float] = []

    p = min(config.batch_p, int(np.unique(src_labels).size))
    batch_size = p * config.batch_k
    rng_t = np.random.default_rng(config.seed + 17)
    for epoch in range(config.init_epochs):
        sampler = pk_batch_sampler(src_labels, p, config.batch_k, seed=config.seed + 100 + epoch)
        for step in range(_steps_per_epoch(len(source_train), config)):
            idx_s = next(sampler)
            f_s, cache_s = trainer.encoder.forward(source_train.points[idx_s])
            loss_s, d_fs, head_grads = trainer.id_loss(trainer.head_s, f_s, src_labels[idx_s])

            idx_t = rng_t.choice(len(target_train), size=min(batch_size, len(target_train)), replace=False)
            f_t, cache_t = trainer.encoder.forward(target_train.points[idx_t])
            loss_a, d_as, d_at = marginal_alignment_loss(
                f_s, f_t, max_pairs=config.max_pairs, seed=config.seed + 31 * epoch + step
            )

            enc_grads = trainer.encoder.backprop_features(cache_s, d_fs + d_as)
            for k, v in trainer.encoder.backprop_features(cache_t, d_at).items():
                enc_grads[k] += v
            grads = {f"enc.{k}": v for k, v in enc_grads.items()}
            grads.update({f"head_s.{k}": v for k, v in head_grads.items()})
            trainer.apply(grads)
            losses.append(loss_s + loss_a)
    if losses and not np.all(np.isfinite(losses)):
        raise FloatingPointError("non-finite loss during initialization")
    return trainer, losses


def _pseudo_label(partition: Partition, keep_noise: bool) -> tuple[np.ndarray, np.ndarray]:
    """Indices kept for training and their dense pseudo-labels."""
    assignment = partition.assignment
    if keep_noise:
        labels = assignment.copy()
        noise_idx = np.flatnonzero(labels == NOISE)
        labels[noise_idx] = partition.n_clusters + np.arange(noise_idx.size)
        return np.arange(assignment.size), labels
    keep = np.flatnonzero(assignment != NOISE)
    return keep, assignment[keep]


def run(
    source_train: DomainDataset,
    source_val: DomainDataset,
    target_train: DomainDataset,
    config: LoopConfig,
) -> tuple[Encoder, list[CycleRecord]]:
    """Full self-training run; returns the trained encoder and per-cycle records."""
    _check_dataset(source_val, "validation")
    _assert_disjoint(source_train, source_val)
    trainer, _ = _init_phase(source_train, target_train, config)

    src_labels = _dense_labels(source_train.identity_labels)
    template = config.clustering_template()
    space = config.search_space(len(target_train))
    p_src = min(config.batch_p, int(np.unique(src_labels).size))
    records: list[CycleRecord] = []

    for epoch in range(config.n_epochs):
        started = time.perf_counter()
        if epoch in config.lr_decay_epochs:
            trainer.opt.lr *= config.lr_decay_factor
        f_target = trainer.encoder.forward(target_train.points)[0]
        if config.hp_strategy == "fixed":
            lam = float(config.fixed_lambda)
        else:
            f_val = trainer.encoder.forward(source_val.points)[0]
            lam = auto_hp_tuning(
                f_val,
                source_val.identity_labels,
                space,
                strategy=config.hp_strategy,
                metric=config.metric,
                spec_template=template,
                seed=config.seed + epoch,
                grid_step=config.grid_step,
                bayes_init=config.bayes_init,
            )

        partition = template.with_lambda(lam).cluster(f_target, seed=_KMEANS_SEED)
        keep_idx, pseudo = _pseudo_label(partition, config.keep_noise)
        n_pseudo_ids = int(np.unique(pseudo).size) if keep_idx.size else 0
        oracle_ari = metrics.ari(target_train.identity_labels, partition)

        train_target = config.enable_target_id and n_pseudo_ids >= 2
        align_target = config.enable_align and n_pseudo_ids >= 2
        if n_pseudo_ids < 2 and (config.enable_target_id or config.enable_align):
            log.warning(
                "epoch %d: only %d pseudo-classes after clustering; skipping target-side terms",
                epoch,
                n_pseudo_ids,
            )
        if train_target:
            trainer.ensure_target_head(n_pseudo_ids, seed=config.seed + 5000 + epoch)

        sampler_s = pk_batch_sampler(src_labels, p_src, config.batch_k, seed=config.seed + 200 + epoch)
        sampler_t = None
        if train_target or align_target:
            p_tgt = min(config.batch_p, n_pseudo_ids)
            sampler_t = pk_batch_sampler(pseudo, p_tgt, config.batch_k, seed=config.seed + 300 + epoch)

        sums = {"id_t": 0.0, "id_s": 0.0, "align": 0.0, "total": 0.0}
        n_steps = _steps_per_epoch(max(len(source_train), int(keep_idx.size)), config)
        for step in range(n_steps):
            grads: dict[str, np.ndarray] = {}
            loss_t = loss_s = loss_a = 0.0

            idx_s = next(sampler_s)
            f_s, cache_s = trainer.encoder.forward(source_train.points[idx_s])
            y_s = src_labels[idx_s]
            d_fs = np.zeros_like(f_s)

            f_t = cache_t = d_ft = y_t = None
            if sampler_t is not None:
                idx_t = next(sampler_t)
                f_t, cache_t = trainer.encoder.forward(target_train.points[keep_idx[idx_t]])
                y_t = pseudo[idx_t]
                d_ft = np.zeros_like(f_t)

            if config.enable_source_id:
                loss_s, d, head_grads = trainer.id_loss(trainer.head_s, f_s, y_s)
                d_fs += d
                grads.update({f"head_s.{k}": v for k, v in head_grads.items()})
            if train_target:
                loss_t, d, head_grads = trainer.id_loss(trainer.head_t, f_t, y_t)
                d_ft += d
                grads.update({f"head_t.{k}": v for k, v in head_grads.items()})
            if align_target:
                loss_a, d_as, d_at, _ = conditional_alignment_loss(
                    f_s, y_s, f_t, y_t, max_pairs=config.max_pairs, seed=config.seed + 37 * epoch + step
                )
                d_fs += d_as
                d_ft += d_at

            enc_grads = trainer.encoder.backprop_features(cache_s, d_fs)
            if d_ft is not None:
                for k, v in trainer.encoder.backprop_features(cache_t, d_ft).items():
                    enc_grads[k] += v
            grads.update({f"enc.{k}": v for k, v in enc_grads.items()})
            trainer.apply(grads)

            sums["id_t"] += loss_t
            sums["id_s"] += loss_s
            sums["align"] += loss_a
            sums["total"] += loss_t + loss_s + loss_a

        records.append(
            CycleRecord(
                epoch=epoch,
                selected_lambda=float(lam),
                target_ari=float(oracle_ari),
                n_clusters=partition.n_clusters,
                n_noise=partition.n_noise,
                loss_id_t=sums["id_t"] / n_steps,
                loss_id_s=sums["id_s"] / n_steps,
                loss_align=sums["align"] / n_steps,
                loss_total=sums["total"] / n_steps,
                wall_time=time.perf_counter() - started,
            )
        )
    return trainer.encoder, records


def _assert_disjoint(train: DomainDataset, val: DomainDataset) -> None:
    """Reject validation sets sharing any exact point row with the train set."""
    train_rows = {row.tobytes() for row in np.ascontiguousarray(train.points)}
    for row in np.ascontiguousarray(val.points):
        if row.tobytes() in train_rows:
            raise ValueError("validation set overlaps the training set")


def retrieval_scores(encoder: Encoder, dataset: DomainDataset) -> tuple[float, float]:
    """mAP-analog on a labeled set: per-ID alternation splits it into query
    and gallery halves, then standard L2-ranked retrieval is scored."""
    feats = encoder.forward(dataset.points)[0]
    is_query = np.zeros(len(dataset), dtype=bool)
    for ident in np.unique(dataset.identity_labels):
        members = np.flatnonzero(dataset.identity_labels == ident)
        is_query[members[::2]] = True
    q, g = feats[is_query], feats[~is_query]
    qid = dataset.identity_labels[is_query]
    gid = dataset.identity_labels[~is_query]
    return (
        metrics.mean_average_precision(q, g, qid, gid),
        metrics.rank1(q, g, qid, gid),
    )


@dataclass
class SweepPoint:
    lam: float
    final_target_ari: float
    final_target_map: float


def sensitivity_sweep(
    source_train: DomainDataset,
    source_val: DomainDataset,
    target_train: DomainDataset,
    lambda_values,
    config: LoopConfig,
) -> list[SweepPoint]:
    """Run the fixed-lambda loop for every value and score the final state."""
    values = [float(v) for v in np.atleast_1d(lambda_values)]
    if len(values) < 2:
        raise ValueError("sweep needs at least 2 lambda values")
    points = []
    for lam in values:
        cfg = replace(config, hp_strategy="fixed", fixed_lambda=lam)
        encoder, recs = run(source_train, source_val, target_train, cfg)
        final_map, _ = retrieval_scores(encoder, target_train)
        points.append(SweepPoint(lam, recs[-1].target_ari if recs else float("nan"), final_map))
    return points
