"""Standard desk-scale benchmarks used by the CLI and the acceptance suite.

The standard benchmark pairs two 16-identity domains (8 samples per identity
on each side used for training/validation, matched so validation density
mirrors the target's) under a rotation + translation + scale shift with
equal within-identity spread. The alt benchmark is a much tighter, mildly
shifted task: the best epsilon found there plays the role of the transferred
"empirical" value when scoring fixed-epsilon baselines.
"""

from __future__ import annotations

from dataclasses import replace

from .loop import LoopConfig
from .synth import SHIFT_PRESETS, DomainDataset, generate_domain_pair, split_validation, subsample_per_id

N_IDS = 16
SAMPLES_PER_ID = 16
PER_ID_KEPT = 8
DIM = 8


def benchmark_datasets(seed: int, preset: str = "standard") -> tuple[DomainDataset, DomainDataset, DomainDataset]:
    """(source_train, source_val, target_train) for a named shift preset."""
    shift = SHIFT_PRESETS[preset]
    source, target = generate_domain_pair(seed, N_IDS, N_IDS, SAMPLES_PER_ID, DIM, shift)
    train, val = split_validation(source, N_IDS * PER_ID_KEPT, seed + 1)
    target = subsample_per_id(target, PER_ID_KEPT, seed + 2)
    return train, val, target


def benchmark_config(seed: int = 0, **overrides) -> LoopConfig:
    """Loop configuration tuned for the desk-scale benchmark."""
    cfg = LoopConfig(
        n_epochs=40,
        init_epochs=10,
        hidden=48,
        n_features=16,
        lr=0.03,
        seed=seed,
    )
    return replace(cfg, **overrides) if overrides else cfg
