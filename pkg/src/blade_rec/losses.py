"""Training objectives: weighted next-item BCE and sequence-level contrast.

The next-item loss weights each step by the richness of the target behavior
set (fraction of behavior types present), so steps carrying multiple
behaviors contribute more. The contrastive term pulls two augmented views of
the same sequence together against both views of every other in-batch
sequence.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F


@dataclass
class LossConfig:
    lam: float = 0.1                 # contrastive weight
    tau: float = 1.0                 # contrastive temperature
    negatives_per_positive: int = 1
    brw_enabled: bool = True         # behavior-richness weighting
    cl_enabled: bool = True

    def __post_init__(self):
        if self.tau <= 0.0:
            raise ValueError(f"tau must be > 0, got {self.tau}")
        if self.lam < 0.0:
            raise ValueError(f"lam must be >= 0, got {self.lam}")
        if self.negatives_per_positive < 1:
            raise ValueError("negatives_per_positive must be >= 1")


def predict_score(user_rep: torch.Tensor, item: int, item_table: torch.Tensor) -> torch.Tensor:
    """Inner-product preference score for one item."""
    if item == 0:
        raise ValueError("cannot score the padding item")
    return user_rep @ item_table[item]


def behavior_richness_weight(
    target_behaviors: torch.Tensor, n_behaviors: int, enabled: bool = True
) -> torch.Tensor:
    """Per-step weight: set bits of the target behavior set over |B|."""
    dtype = (
        target_behaviors.dtype
        if target_behaviors.is_floating_point()
        else torch.get_default_dtype()
    )
    counts = target_behaviors.sum(dim=-1).to(dtype)
    if not enabled:
        return torch.ones_like(counts)
    return counts / n_behaviors


def next_item_loss(
    user_reps: torch.Tensor,       # (N, L, d)
    target_items: torch.Tensor,    # (N, L) int64, 0 at padding
    neg_items: torch.Tensor,       # (N, L, k) int64
    weights: torch.Tensor,         # (N, L) richness weights (or ones)
    valid_mask: torch.Tensor,      # (N, L) bool
    item_table: torch.Tensor,      # (|V|, d)
) -> torch.Tensor:
    """Mean weighted BCE over valid steps, one positive vs k sampled negatives.

    Returns 0 for a batch with no valid steps.
    """
    if bool((valid_mask & (target_items == 0)).any()):
        raise ValueError("valid step with a padding target item")
    pos_scores = (user_reps * item_table[target_items]).sum(-1)
    neg_scores = torch.einsum("nld,nlkd->nlk", user_reps, item_table[neg_items])
    per_step = F.logsigmoid(pos_scores) + F.logsigmoid(-neg_scores).sum(-1)
    valid = valid_mask.to(per_step.dtype)
    n_valid = valid.sum()
    if n_valid == 0:
        return user_reps.sum() * 0.0
    return -(weights * per_step * valid).sum() / n_valid


def seq_cl_loss(h1: torch.Tensor, h2: torch.Tensor, tau: float) -> torch.Tensor:
    """Symmetric InfoNCE over flattened sequence representations.

    For anchor ``h1[i]`` the positive is ``h2[i]``; the denominator adds both
    views of every other sequence in the batch. Similarity is the dot
    product; log-sum-exp keeps the normalization stable.
    """
    if h1.shape[0] == 0:
        raise ValueError("contrastive loss needs a non-empty batch")
    n = h1.shape[0]
    eye = torch.eye(n, dtype=torch.bool, device=h1.device)

    def one_direction(a, b):
        cross = a @ b.T / tau                               # (N, N); diag = positives
        own = (a @ a.T / tau).masked_fill(eye, float("-inf"))
        denom = torch.logsumexp(torch.cat([cross, own], dim=1), dim=1)
        return (denom - cross.diagonal()).mean()

    return one_direction(h1, h2) + one_direction(h2, h1)


def total_loss(next_loss: torch.Tensor, cl_loss: torch.Tensor | None, cfg: LossConfig) -> torch.Tensor:
    if not cfg.cl_enabled or cfg.lam == 0.0 or cl_loss is None:
        return next_loss
    return next_loss + cfg.lam * cl_loss
