"""Full-ranking next-item evaluation: HR@k, NDCG@k and head/tail splits."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .data import Batch, EvalExample, EvalView, collate_eval
from .model import BladeModel


@dataclass
class MetricsReport:
    count: int
    hr: dict[int, float]
    ndcg: dict[int, float]
    head: "MetricsReport | None" = None
    tail: "MetricsReport | None" = None

    def as_rows(self) -> list[tuple[str, int, float, float]]:
        rows = [("all", k, self.hr[k], self.ndcg[k]) for k in sorted(self.hr)]
        for label, sub in (("head", self.head), ("tail", self.tail)):
            if sub is not None:
                rows += [(label, k, sub.hr[k], sub.ndcg[k]) for k in sorted(sub.hr)]
        return rows


def hr_ndcg_at_k(rank: int, k: int) -> tuple[float, float]:
    """Single-target hit ratio and NDCG for a 1-based rank."""
    if rank < 1:
        raise ValueError("rank is 1-based")
    if rank > k:
        return 0.0, 0.0
    return 1.0, 1.0 / math.log2(rank + 1)


def full_rank(user_rep: np.ndarray, item_table: np.ndarray, exclude: set[int]) -> np.ndarray:
    """All candidate items best-first; ties broken by ascending item index.

    The padding item and everything in ``exclude`` are left out.
    """
    scores = item_table @ user_rep
    banned = np.zeros(scores.shape[0], dtype=bool)
    banned[0] = True
    if exclude:
        banned[list(exclude)] = True
    order = np.argsort(-scores, kind="stable")  # stable keeps index order on ties
    return order[~banned[order]]


def rank_of_target(scores: np.ndarray, target: int, exclude: set[int]) -> int:
    """1-based rank of ``target`` among non-excluded items, without sorting."""
    banned = np.zeros(scores.shape[0], dtype=bool)
    banned[0] = True
    if exclude:
        banned[list(exclude)] = True
    if banned[target]:
        raise ValueError(f"target item {target} is excluded from ranking")
    s = scores[target]
    better = (~banned) & (scores > s)
    tied_before = (~banned) & (scores == s) & (np.arange(scores.shape[0]) < target)
    return int(better.sum() + tied_before.sum()) + 1


def _batch_to_tensors(batch: Batch, device, dtype):
    return (
        torch.from_numpy(batch.items).to(device),
        torch.from_numpy(batch.behaviors.astype(np.float32)).to(device=device, dtype=dtype),
        torch.from_numpy(batch.valid_mask).to(device),
        torch.from_numpy(batch.next_behaviors.astype(np.float32)).to(device=device, dtype=dtype),
        torch.from_numpy(batch.users).to(device),
    )


def final_step_reps(
    model: BladeModel,
    view: EvalView,
    *,
    aux_only_conditioning: bool = False,
    batch_size: int = 256,
) -> np.ndarray:
    """Final-step user representation per example, conditioned on the target
    behavior set (or, optionally, on the auxiliary behavior alone)."""
    if not view.examples:
        raise ValueError("evaluation split is empty")
    model.eval()
    dtype = next(model.parameters()).dtype
    device = next(model.parameters()).device
    reps = np.empty((len(view.examples), model.cfg.d), dtype=np.float64)
    with torch.no_grad():
        for start in range(0, len(view.examples), batch_size):
            chunk = view.examples[start : start + batch_size]
            batch = collate_eval(chunk, model.cfg.L)
            if aux_only_conditioning:
                aux = view.behavior_vocab.aux_index
                final = np.zeros_like(batch.next_behaviors[:, -1])
                final[:, aux] = 1
                batch.next_behaviors[:, -1] = final
            items, behaviors, valid, nxt, users = _batch_to_tensors(batch, device, dtype)
            out = model(items, behaviors, valid, nxt, users)
            reps[start : start + len(chunk)] = out[:, -1, :].cpu().numpy()
    return reps


def history_exclusions(example: EvalExample) -> set[int]:
    """Ranking exclusions: the user's history minus the target itself."""
    return {it.item for it in example.prefix} - {example.target.item}


def target_ranks(
    model: BladeModel,
    view: EvalView,
    *,
    exclude_history: bool = True,
    aux_only_conditioning: bool = False,
    batch_size: int = 256,
) -> np.ndarray:
    """1-based rank of each example's target under full ranking."""
    reps = final_step_reps(
        model, view, aux_only_conditioning=aux_only_conditioning, batch_size=batch_size
    )
    item_table = model.item_emb.weight.detach().cpu().numpy()
    scores = reps @ item_table.T
    ranks = np.empty(len(view.examples), dtype=np.int64)
    for i, ex in enumerate(view.examples):
        exclude = history_exclusions(ex) if exclude_history else set()
        ranks[i] = rank_of_target(scores[i], ex.target.item, exclude)
    return ranks


def report_from_ranks(ranks: np.ndarray, ks: tuple[int, ...]) -> MetricsReport:
    hr = {}
    ndcg = {}
    for k in ks:
        hits = ranks <= k
        hr[k] = float(hits.mean())
        gains = np.where(hits, 1.0 / np.log2(ranks + 1), 0.0)
        ndcg[k] = float(gains.mean())
    return MetricsReport(count=len(ranks), hr=hr, ndcg=ndcg)


def evaluate(
    model: BladeModel,
    view: EvalView,
    ks: tuple[int, ...] = (5, 10),
    *,
    exclude_history: bool = True,
    aux_only_conditioning: bool = False,
    tail_behaviors: tuple[int, ...] = (),
    tail_threshold: float = 0.8,
    tail_occurrence_level: bool = False,
    batch_size: int = 256,
) -> MetricsReport:
    """Mean HR/NDCG over a split, optionally with a head/tail breakdown."""
    ranks = target_ranks(
        model,
        view,
        exclude_history=exclude_history,
        aux_only_conditioning=aux_only_conditioning,
        batch_size=batch_size,
    )
    report = report_from_ranks(ranks, ks)
    if tail_behaviors:
        head_view, tail_view = tail_partition(
            view, tail_behaviors, tail_threshold, occurrence_level=tail_occurrence_level
        )
        index = {id(ex): i for i, ex in enumerate(view.examples)}
        for label, sub in (("head", head_view), ("tail", tail_view)):
            if sub.examples:
                sub_ranks = np.array([ranks[index[id(ex)]] for ex in sub.examples])
                setattr(report, label, report_from_ranks(sub_ranks, ks))
    return report


def _tail_fraction(example: EvalExample, tail_behaviors: tuple[int, ...], occurrence_level: bool) -> float:
    inters = list(example.prefix) + [example.target]
    tail = list(tail_behaviors)
    if occurrence_level:
        total = sum(int(it.behaviors.sum()) for it in inters)
        hits = sum(int(it.behaviors[tail].sum()) for it in inters)
        return hits / total if total else 0.0
    hits = sum(1 for it in inters if it.behaviors[tail].any())
    return hits / len(inters)


def tail_partition(
    view: EvalView,
    tail_behaviors: tuple[int, ...],
    threshold: float = 0.8,
    *,
    occurrence_level: bool = False,
) -> tuple[EvalView, EvalView]:
    """Split users by the fraction of their interactions carrying a tail
    behavior: above ``threshold`` -> tail group, otherwise head group."""
    for idx in tail_behaviors:
        if not 0 <= idx < view.behavior_vocab.size:
            raise ValueError(f"tail behavior index {idx} out of range")
    head, tail = [], []
    for ex in view.examples:
        frac = _tail_fraction(ex, tuple(tail_behaviors), occurrence_level)
        (tail if frac > threshold else head).append(ex)
    return (
        EvalView(view.behavior_vocab, view.n_items, head),
        EvalView(view.behavior_vocab, view.n_items, tail),
    )


def report_to_tsv(report: MetricsReport) -> str:
    lines = ["group\tk\thr\tndcg"]
    for group, k, hr, ndcg in report.as_rows():
        lines.append(f"{group}\t{k}\t{hr:.6f}\t{ndcg:.6f}")
    return "\n".join(lines) + "\n"
