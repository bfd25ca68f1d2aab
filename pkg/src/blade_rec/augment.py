"""Behavior-level augmentation operators.

All three operators rewrite behavior sets only; item arrays and validity
masks pass through untouched, which is what keeps augmented views consistent
with the underlying item sequence. Operators are pure given an explicit
``numpy.random.Generator``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .data import UserSequence
from .stats import BehaviorStats

METHODS = ("cooccur_add", "freq_mask", "aux_flip", "none")


@dataclass
class AugmentConfig:
    method: str = "cooccur_add"
    rho: float = 0.2       # fraction of valid steps rewritten per view
    c: float = 0.5         # smoothing exponent for frequency-based masking
    seed: int = 0
    guard_empty: bool = True  # keep rewritten sets non-empty

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if not 0.0 < self.rho < 1.0:
            raise ValueError(f"rho must lie in (0, 1), got {self.rho}")
        if self.c < 0.0:
            raise ValueError(f"c must be >= 0, got {self.c}")


def sample_indices(valid_len: int, rho: float, rng: np.random.Generator) -> np.ndarray:
    """floor(rho * valid_len) distinct positions, uniform without replacement."""
    if valid_len < 1:
        raise ValueError("valid_len must be >= 1")
    k = int(rho * valid_len)
    if k == 0:
        return np.empty(0, dtype=np.int64)
    return rng.choice(valid_len, size=k, replace=False).astype(np.int64)


def cooccur_add(bits: np.ndarray, M: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Add at most one absent behavior, sampled by co-occurrence with the
    present ones; degenerate distributions leave the set unchanged."""
    p = bits.astype(np.float64) @ M
    p[bits > 0] = 0.0
    total = p.sum()
    if total <= 0.0:
        return bits.copy()
    out = bits.copy()
    out[rng.choice(p.size, p=p / total)] = 1
    return out


def freq_mask(
    bits: np.ndarray,
    m: np.ndarray,
    c: float,
    rng: np.random.Generator,
    guard_empty: bool = True,
) -> np.ndarray:
    """Independently clear present bits with probability m_i^c / sum_k m_k^c.

    With the guard on, a result that would be empty keeps the present
    behavior with the smallest frequency (lowest index on ties).
    """
    weights = m.astype(np.float64) ** c
    total = weights.sum()
    if total <= 0.0:
        return bits.copy()
    probs = weights / total
    cleared = rng.random(probs.size) < probs
    out = bits.copy()
    out[cleared & (bits > 0)] = 0
    if guard_empty and out.sum() == 0 and bits.sum() > 0:
        present = np.flatnonzero(bits)
        out[present[np.argmin(m[present])]] = 1
    return out


def aux_flip(bits: np.ndarray, aux_index: int, guard_empty: bool = True) -> np.ndarray:
    """Toggle the auxiliary bit; with the guard on, never empty the set."""
    out = bits.copy()
    out[aux_index] = 1 - out[aux_index]
    if guard_empty and out.sum() == 0:
        return bits.copy()
    return out


def augment_sequence(
    seq: UserSequence,
    cfg: AugmentConfig,
    stats: BehaviorStats,
    aux_index: int,
    rng: np.random.Generator,
) -> UserSequence:
    """Apply the configured operator at floor(rho * valid_len) sampled steps.

    Items and the validity mask are shared with the input; only the behavior
    matrix is copied and rewritten.
    """
    if cfg.method == "none":
        return seq
    valid_positions = np.flatnonzero(seq.valid_mask)
    if valid_positions.size == 0:
        raise ValueError("cannot augment an all-padding sequence")
    picked = valid_positions[sample_indices(valid_positions.size, cfg.rho, rng)]
    behaviors = seq.behaviors.copy()
    for pos in picked:
        if cfg.method == "cooccur_add":
            behaviors[pos] = cooccur_add(behaviors[pos], stats.M, rng)
        elif cfg.method == "freq_mask":
            behaviors[pos] = freq_mask(
                behaviors[pos], stats.m, cfg.c, rng, guard_empty=cfg.guard_empty
            )
        else:
            behaviors[pos] = aux_flip(
                behaviors[pos], aux_index, guard_empty=cfg.guard_empty
            )
    return replace(seq, behaviors=behaviors)
