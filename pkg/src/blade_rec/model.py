"""Dual item-behavior fusion encoder.

Two causal branches read the same item sequence: an early-fusion Transformer
that mixes behavior-set embeddings into its input, and an intermediate branch
whose attention logits and expert routing are steered by behavior-set
embeddings at every layer. Their alpha-weighted blend is refined by a
cross-attention pass whose queries are the next-step behavior-set embeddings,
so each step's representation is conditioned on the behavior set under which
the next item will be consumed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

EARLY_FUSION_MODES = ("sum", "concat", "gate")
CAUSAL_MASK_MODES = ("pre_softmax", "post_softmax")


@dataclass
class EncoderConfig:
    d: int = 32
    L: int = 50
    blocks: int = 2
    heads: int = 2
    experts: int = 4
    dropout: float = 0.2
    alpha: float = 0.5                  # weight of the intermediate branch
    early_fusion_mode: str = "sum"
    causal_mask: str = "pre_softmax"    # "post_softmax" = literal masked-after variant
    ablate_ef: bool = False
    ablate_if: bool = False

    def __post_init__(self):
        if self.d % self.heads != 0:
            raise ValueError(f"d={self.d} must be divisible by heads={self.heads}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.early_fusion_mode not in EARLY_FUSION_MODES:
            raise ValueError(f"early_fusion_mode must be one of {EARLY_FUSION_MODES}")
        if self.causal_mask not in CAUSAL_MASK_MODES:
            raise ValueError(f"causal_mask must be one of {CAUSAL_MASK_MODES}")
        if self.ablate_ef and self.ablate_if:
            raise ValueError("cannot ablate both fusion branches at once")
        if self.blocks < 1 or self.experts < 1:
            raise ValueError("blocks and experts must be >= 1")


def masked_softmax(scores: torch.Tensor, mask: torch.Tensor, dim: int = -1) -> torch.Tensor:
    """Softmax restricted to ``mask``; fully-masked rows come out all-zero."""
    filled = scores.masked_fill(~mask, float("-inf"))
    top = filled.amax(dim=dim, keepdim=True)
    top = torch.where(torch.isinf(top), torch.zeros_like(top), top)
    expd = torch.exp(filled - top)
    denom = expd.sum(dim=dim, keepdim=True)
    return expd / denom.clamp_min(torch.finfo(scores.dtype).tiny)


def _split_heads(x: torch.Tensor, heads: int) -> torch.Tensor:
    n, length, d = x.shape
    return x.view(n, length, heads, d // heads).transpose(1, 2)


def _merge_heads(x: torch.Tensor) -> torch.Tensor:
    n, heads, length, dh = x.shape
    return x.transpose(1, 2).reshape(n, length, heads * dh)


def _attend(
    scores: torch.Tensor,
    mask: torch.Tensor,
    mode: str,
    dropout: nn.Dropout,
    key_valid: torch.Tensor,
) -> torch.Tensor:
    """Attention weights under either masking convention.

    ``mask`` combines causality with key validity. The literal post-softmax
    variant normalizes over valid keys first and multiplies by the causal
    triangle afterwards, leaving rows unnormalized on purpose.
    """
    if mode == "pre_softmax":
        weights = masked_softmax(scores, mask)
    else:
        length = scores.shape[-1]
        tri = torch.tril(torch.ones(length, length, dtype=torch.bool, device=scores.device))
        weights = masked_softmax(scores, key_valid) * tri
    return dropout(weights)


class FeedForward(nn.Module):
    """Position-wise d -> 4d -> d with a smooth nonlinearity."""

    def __init__(self, d: int, dropout: float):
        super().__init__()
        self.fc1 = nn.Linear(d, 4 * d)
        self.fc2 = nn.Linear(4 * d, d)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x):
        return self.fc2(self.dropout(torch.nn.functional.gelu(self.fc1(x))))


class EarlyFusion(nn.Module):
    """Combine item and behavior-set embeddings: sum, concat or gate."""

    def __init__(self, d: int, mode: str):
        super().__init__()
        self.mode = mode
        if mode == "concat":
            self.proj = nn.Linear(2 * d, d)
        elif mode == "gate":
            self.gate = nn.Linear(2 * d, d)

    def forward(self, item_emb, behavior_emb):
        if self.mode == "sum":
            return item_emb + behavior_emb
        both = torch.cat([item_emb, behavior_emb], dim=-1)
        if self.mode == "concat":
            return self.proj(both)
        g = torch.sigmoid(self.gate(both))
        return g * item_emb + (1.0 - g) * behavior_emb


class CausalSelfAttention(nn.Module):
    def __init__(self, d: int, heads: int, dropout: float, causal_mask: str):
        super().__init__()
        self.heads = heads
        self.scale = 1.0 / math.sqrt(d // heads)
        self.causal_mask = causal_mask
        self.q = nn.Linear(d, d)
        self.k = nn.Linear(d, d)
        self.v = nn.Linear(d, d)
        self.out = nn.Linear(d, d)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x, mask, key_valid):
        q = _split_heads(self.q(x), self.heads)
        k = _split_heads(self.k(x), self.heads)
        v = _split_heads(self.v(x), self.heads)
        scores = q @ k.transpose(-2, -1) * self.scale
        weights = _attend(scores, mask, self.causal_mask, self.dropout, key_valid)
        return self.out(_merge_heads(weights @ v))


class BehaviorAwareAttention(nn.Module):
    """Self-attention whose logits add an item term and a behavior term.

    Queries/keys are projected separately from the hidden state and from the
    behavior-set embeddings; values come from the hidden state only.
    """

    def __init__(self, d: int, heads: int, dropout: float, causal_mask: str):
        super().__init__()
        self.heads = heads
        self.scale = 1.0 / math.sqrt(d // heads)
        self.causal_mask = causal_mask
        self.q_item = nn.Linear(d, d)
        self.k_item = nn.Linear(d, d)
        self.q_beh = nn.Linear(d, d)
        self.k_beh = nn.Linear(d, d)
        self.v_item = nn.Linear(d, d)
        self.out = nn.Linear(d, d)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x, behavior_emb, mask, key_valid):
        qx = _split_heads(self.q_item(x), self.heads)
        kx = _split_heads(self.k_item(x), self.heads)
        qb = _split_heads(self.q_beh(behavior_emb), self.heads)
        kb = _split_heads(self.k_beh(behavior_emb), self.heads)
        v = _split_heads(self.v_item(x), self.heads)
        scores = (qx @ kx.transpose(-2, -1) + qb @ kb.transpose(-2, -1)) * self.scale
        weights = _attend(scores, mask, self.causal_mask, self.dropout, key_valid)
        return self.out(_merge_heads(weights @ v))


class BehaviorGuidedMoE(nn.Module):
    """Dense mixture of feed-forward experts routed by behavior embeddings."""

    def __init__(self, d: int, n_experts: int, dropout: float):
        super().__init__()
        self.router = nn.Linear(d, n_experts)
        self.experts = nn.ModuleList(FeedForward(d, dropout) for _ in range(n_experts))

    def route(self, behavior_emb) -> torch.Tensor:
        return torch.softmax(self.router(behavior_emb), dim=-1)

    def forward(self, x, behavior_emb):
        weights = self.route(behavior_emb)  # (N, L, n)
        stacked = torch.stack([e(x) for e in self.experts], dim=2)  # (N, L, n, d)
        return (weights.unsqueeze(-1) * stacked).sum(dim=2)


class EarlyBlock(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.ln1 = nn.LayerNorm(cfg.d)
        self.attn = CausalSelfAttention(cfg.d, cfg.heads, cfg.dropout, cfg.causal_mask)
        self.ln2 = nn.LayerNorm(cfg.d)
        self.ffn = FeedForward(cfg.d, cfg.dropout)

    def forward(self, x, mask, key_valid):
        x = x + self.attn(self.ln1(x), mask, key_valid)
        return x + self.ffn(self.ln2(x))


class IntermediateBlock(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.ln1 = nn.LayerNorm(cfg.d)
        self.attn = BehaviorAwareAttention(cfg.d, cfg.heads, cfg.dropout, cfg.causal_mask)
        self.ln2 = nn.LayerNorm(cfg.d)
        self.moe = BehaviorGuidedMoE(cfg.d, cfg.experts, cfg.dropout)

    def forward(self, x, behavior_emb, mask, key_valid):
        x = x + self.attn(self.ln1(x), behavior_emb, mask, key_valid)
        return x + self.moe(self.ln2(x), behavior_emb)


class CrossAttention(nn.Module):
    """Single-head cross-attention: next-step behavior embeddings query the
    fused sequence representation, followed by a feed-forward refinement."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.scale = 1.0 / math.sqrt(cfg.d)
        self.causal_mask = cfg.causal_mask
        self.ln_query = nn.LayerNorm(cfg.d)
        self.ln_kv = nn.LayerNorm(cfg.d)
        self.q = nn.Linear(cfg.d, cfg.d)
        self.k = nn.Linear(cfg.d, cfg.d)
        self.v = nn.Linear(cfg.d, cfg.d)
        self.dropout = nn.Dropout(cfg.dropout)
        self.ln_ffn = nn.LayerNorm(cfg.d)
        self.ffn = FeedForward(cfg.d, cfg.dropout)

    def forward(self, query_emb, fused, mask, key_valid):
        q = self.q(self.ln_query(query_emb))
        kv_in = self.ln_kv(fused)
        k = self.k(kv_in)
        v = self.v(kv_in)
        scores = q @ k.transpose(-2, -1) * self.scale
        weights = _attend(scores, mask, self.causal_mask, self.dropout, key_valid)
        x = fused + weights @ v
        return x + self.ffn(self.ln_ffn(x))


class BladeModel(nn.Module):
    """Full encoder over padded behavior-set sequences.

    ``forward`` takes index arrays shaped (N, L) plus multi-hot behavior
    matrices shaped (N, L, |B|) and returns per-step user representations
    (N, L, d). ``next_behaviors[l]`` must hold the behavior set of the
    interaction to be predicted at step l+1 (the held-out target in the last
    slot); it is a separate input so target conditioning never leaks through
    the sequence encoding itself.
    """

    def __init__(self, n_items: int, n_users: int, n_behaviors: int, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        self.n_items = n_items
        self.n_users = n_users
        self.n_behaviors = n_behaviors
        self.forward_calls = 0  # plain counter, not persisted in checkpoints

        self.item_emb = nn.Embedding(n_items, cfg.d, padding_idx=0)
        self.pos_emb = nn.Parameter(torch.empty(cfg.L, cfg.d))
        self.behavior_emb = nn.Parameter(torch.empty(n_behaviors, cfg.d))
        self.pref_factors = nn.Parameter(torch.ones(n_users, n_behaviors))

        self.early_fusion = EarlyFusion(cfg.d, cfg.early_fusion_mode)
        self.early_blocks = nn.ModuleList(EarlyBlock(cfg) for _ in range(cfg.blocks))
        self.ln_early = nn.LayerNorm(cfg.d)
        self.inter_blocks = nn.ModuleList(IntermediateBlock(cfg) for _ in range(cfg.blocks))
        self.ln_inter = nn.LayerNorm(cfg.d)
        self.cross = CrossAttention(cfg)
        self.ln_out = nn.LayerNorm(cfg.d)
        self.emb_dropout = nn.Dropout(cfg.dropout)

        self._init_weights()

    def _init_weights(self):
        for module in self.modules():
            if isinstance(module, nn.Linear):
                nn.init.normal_(module.weight, std=0.02)
                nn.init.zeros_(module.bias)
        nn.init.normal_(self.item_emb.weight, std=0.02)
        with torch.no_grad():
            self.item_emb.weight[0].zero_()
        nn.init.normal_(self.pos_emb, std=0.02)
        nn.init.normal_(self.behavior_emb, std=0.02)
        nn.init.ones_(self.pref_factors)

    def encode_behavior_sets(self, behaviors: torch.Tensor, users: torch.Tensor) -> torch.Tensor:
        """Per-step behavior-set embeddings (N, L, d).

        Preference-weighted softmax over the present behaviors of each set,
        then the matching convex combination of behavior embedding rows.
        Empty sets (padding) map to the zero vector.
        """
        present = behaviors > 0
        logits = self.pref_factors[users].unsqueeze(1).expand(-1, behaviors.shape[1], -1)
        weights = masked_softmax(logits, present)
        return weights.to(self.behavior_emb.dtype) @ self.behavior_emb

    def _attention_masks(self, valid_mask: torch.Tensor):
        length = valid_mask.shape[1]
        tri = torch.tril(torch.ones(length, length, dtype=torch.bool, device=valid_mask.device))
        key_valid = valid_mask[:, None, None, :]
        return tri[None, None] & key_valid, key_valid

    def forward(
        self,
        items: torch.Tensor,
        behaviors: torch.Tensor,
        valid_mask: torch.Tensor,
        next_behaviors: torch.Tensor,
        users: torch.Tensor,
    ) -> torch.Tensor:
        self.forward_calls += 1
        cfg = self.cfg
        if bool((valid_mask & ~(behaviors > 0).any(-1)).any()):
            raise ValueError("valid position with an empty behavior set")
        if bool((valid_mask & ~(next_behaviors > 0).any(-1)).any()):
            raise ValueError("valid position with an empty next-step behavior set")

        mask, key_valid = self._attention_masks(valid_mask)
        # Zero item vectors at padding so outputs never depend on the pinned
        # padding embedding row (whose gradient is frozen by padding_idx).
        item_vecs = self.item_emb(items) * valid_mask.unsqueeze(-1).to(self.item_emb.weight.dtype)
        beh_vecs = self.encode_behavior_sets(behaviors, users)
        next_vecs = self.encode_behavior_sets(next_behaviors, users)
        # Single-head layout for cross-attention masks.
        cross_mask = mask[:, 0]
        cross_key_valid = key_valid[:, 0, 0].unsqueeze(1)

        early_out = None
        if not cfg.ablate_ef:
            x = self.emb_dropout(self.early_fusion(item_vecs, beh_vecs) + self.pos_emb)
            for block in self.early_blocks:
                x = block(x, mask, key_valid)
            early_out = self.ln_early(x)

        inter_out = None
        if not cfg.ablate_if:
            x = self.emb_dropout(item_vecs + self.pos_emb)
            for block in self.inter_blocks:
                x = block(x, beh_vecs, mask, key_valid)
            inter_out = self.ln_inter(x)

        if cfg.ablate_ef:
            fused = inter_out
        elif cfg.ablate_if:
            fused = early_out
        else:
            fused = cfg.alpha * inter_out + (1.0 - cfg.alpha) * early_out

        out = self.cross(next_vecs, fused, cross_mask, cross_key_valid)
        return self.ln_out(out)


# ---------------------------------------------------------------------------
# Parameter bookkeeping

_GROUP_PREFIXES = (
    ("item_emb", "item_table"),
    ("pos_emb", "positions"),
    ("behavior_emb", "behavior_table"),
    ("pref_factors", "preference_factors"),
    ("early_fusion", "early_branch"),
    ("early_blocks", "early_branch"),
    ("ln_early", "early_branch"),
    ("inter_blocks", None),  # refined below
    ("ln_inter", "intermediate_norms"),
    ("cross", "cross_attention"),
    ("ln_out", "cross_attention"),
)

EARLY_GROUPS = frozenset({"early_branch"})
INTERMEDIATE_GROUPS = frozenset(
    {"intermediate_attention", "moe_router", "moe_experts", "intermediate_norms"}
)


def group_of_parameter(name: str) -> str:
    """Map a parameter name to its logical group."""
    if name.startswith("inter_blocks"):
        if ".moe.router" in name:
            return "moe_router"
        if ".moe.experts" in name:
            return "moe_experts"
        if ".attn." in name:
            return "intermediate_attention"
        return "intermediate_norms"
    for prefix, group in _GROUP_PREFIXES:
        if group is not None and name.startswith(prefix):
            return group
    raise KeyError(f"parameter {name!r} has no group assignment")


def parameter_groups(model: BladeModel) -> dict[str, list[str]]:
    """Parameter names keyed by logical group, in registration order."""
    groups: dict[str, list[str]] = {}
    for name, _ in model.named_parameters():
        groups.setdefault(group_of_parameter(name), []).append(name)
    return groups


def trainable_parameter_names(model: BladeModel) -> list[str]:
    """Names entering the optimizer; ablated branches are left out entirely."""
    cfg = model.cfg
    skip: frozenset[str] = frozenset()
    if cfg.ablate_ef:
        skip = EARLY_GROUPS
    elif cfg.ablate_if:
        skip = INTERMEDIATE_GROUPS
    return [
        name
        for name, _ in model.named_parameters()
        if group_of_parameter(name) not in skip
    ]
