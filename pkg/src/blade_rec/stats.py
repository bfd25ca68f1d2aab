"""Global behavior statistics: co-occurrence probabilities and frequencies.

Both are computed from training interactions only, so held-out validation and
test targets never leak into the augmentation operators that consume them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import TrainView


@dataclass
class BehaviorStats:
    """Co-occurrence matrix and frequency vector over the behavior vocabulary.

    ``m[i]`` counts training interactions whose set contains behavior i.
    ``counts[i, j]`` counts interactions containing both i and j (i != j).
    ``M[i, j] = counts[i, j] / max(1, m[i])`` is the conditional probability
    of seeing j given i, with a zeroed diagonal.
    """

    counts: np.ndarray  # (|B|, |B|) int64
    m: np.ndarray       # (|B|,) int64
    M: np.ndarray       # (|B|, |B|) float64


def _stack_bits(train: TrainView) -> np.ndarray:
    rows = [inter.behaviors for inter in train.all_interactions()]
    if not rows:
        raise ValueError("training view has no interactions")
    return np.stack(rows).astype(np.int64)


def compute_frequency(train: TrainView) -> np.ndarray:
    """Per-behavior interaction counts (padding never enters a train view)."""
    return _stack_bits(train).sum(axis=0)


def compute_cooccurrence(train: TrainView) -> np.ndarray:
    """Row-conditional co-occurrence probabilities with zero diagonal."""
    return compute_behavior_stats(train).M


def compute_behavior_stats(train: TrainView) -> BehaviorStats:
    bits = _stack_bits(train)
    m = bits.sum(axis=0)
    counts = bits.T @ bits
    np.fill_diagonal(counts, 0)
    M = counts / np.maximum(1, m)[:, None]
    np.fill_diagonal(M, 0.0)
    return BehaviorStats(counts=counts, m=m, M=M)


def stats_to_tsv(stats: BehaviorStats) -> str:
    """Row-major TSV diagnostic: |B| rows of M, then one row of m."""
    lines = ["\t".join(f"{v:.6f}" for v in row) for row in stats.M]
    lines.append("\t".join(f"{v:.6f}" for v in stats.m.astype(np.float64)))
    return "\n".join(lines) + "\n"
