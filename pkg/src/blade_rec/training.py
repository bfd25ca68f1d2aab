"""Deterministic training loop, ablation switches and gradient verification."""

from __future__ import annotations

import copy
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
import torch

from .augment import AugmentConfig, augment_sequence
from .checkpoint import save_checkpoint
from .data import (
    Batch,
    Dataset,
    SplitViews,
    collate_train,
    leave_one_out_split,
    make_train_example,
    shifted_next_behaviors,
)
from .losses import (
    LossConfig,
    behavior_richness_weight,
    next_item_loss,
    seq_cl_loss,
    total_loss,
)
from .metrics import evaluate
from .model import (
    BladeModel,
    EncoderConfig,
    parameter_groups,
    trainable_parameter_names,
)
from .stats import BehaviorStats, compute_behavior_stats

ABLATION_FLAGS = ("no_ef", "no_if", "no_cl", "no_brw")


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 128
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 0.0
    seed: int = 0
    patience: int = 0  # 0 disables early stopping on validation NDCG@10
    restore_best: bool = True  # False keeps the final-epoch parameters
    no_ef: bool = False
    no_if: bool = False
    no_cl: bool = False
    no_brw: bool = False

    def __post_init__(self):
        if self.lr < 0.0:
            raise ValueError("learning rate must be >= 0")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size >= 1 and epochs >= 0 required")

    @property
    def ablations(self) -> tuple[str, ...]:
        return tuple(f for f in ABLATION_FLAGS if getattr(self, f))


def apply_ablation(
    flags: Sequence[str], encoder_cfg: EncoderConfig, loss_cfg: LossConfig
) -> tuple[EncoderConfig, LossConfig]:
    """Translate ablation flags into adjusted encoder/loss configs."""
    unknown = set(flags) - set(ABLATION_FLAGS)
    if unknown:
        raise ValueError(f"unknown ablation flags: {sorted(unknown)}")
    if "no_ef" in flags and "no_if" in flags:
        raise ValueError("no_ef and no_if together leave no representation path")
    enc = replace(
        encoder_cfg, ablate_ef="no_ef" in flags, ablate_if="no_if" in flags
    )
    loss = loss_cfg
    if "no_cl" in flags:
        loss = replace(loss, cl_enabled=False, lam=0.0)
    if "no_brw" in flags:
        loss = replace(loss, brw_enabled=False)
    return enc, loss


def sample_negatives(
    target_items: np.ndarray,
    valid_mask: np.ndarray,
    user_item_sets: Sequence[frozenset[int]],
    n_items: int,
    k: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Uniform negatives outside each user's history, (N, L, k) int64."""
    n, length = target_items.shape
    out = np.ones((n, length, k), dtype=np.int64)  # item 1 at padding slots
    for i in range(n):
        owned = user_item_sets[i]
        if n_items - 1 - len(owned) < 1:
            raise RuntimeError("negative sampler exhausted: user owns the catalog")
        for l in np.flatnonzero(valid_mask[i]):
            for j in range(k):
                while True:
                    cand = int(rng.integers(1, n_items))
                    if cand not in owned:
                        out[i, l, j] = cand
                        break
    return out


def _seq_rng(*entropy: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(list(entropy)))


def _to_tensors(batch: Batch, device, dtype):
    f = lambda a: torch.from_numpy(np.ascontiguousarray(a))
    return (
        f(batch.items).to(device),
        f(batch.behaviors.astype(np.float32)).to(device=device, dtype=dtype),
        f(batch.valid_mask).to(device),
        f(batch.next_behaviors.astype(np.float32)).to(device=device, dtype=dtype),
        f(batch.users).to(device),
    )


@dataclass
class TrainResult:
    model: BladeModel
    stats: BehaviorStats
    splits: SplitViews
    log: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_ndcg10: float = float("-inf")


def train(
    dataset: Dataset,
    encoder_cfg: EncoderConfig,
    loss_cfg: LossConfig,
    train_cfg: TrainConfig,
    augment_cfg: AugmentConfig,
    *,
    checkpoint_path=None,
    log_fn: Callable[[dict], None] | None = None,
) -> TrainResult:
    """Train to convergence or the epoch budget, keeping the best-validation
    parameters. Fully reproducible under a fixed seed."""
    encoder_cfg, loss_cfg = apply_ablation(train_cfg.ablations, encoder_cfg, loss_cfg)
    splits = leave_one_out_split(dataset)
    stats = compute_behavior_stats(splits.train)
    vocab = dataset.behavior_vocab

    examples = []
    for user, prefix in splits.train.prefixes:
        ex = make_train_example(user, prefix, encoder_cfg.L)
        if ex is not None:
            examples.append(ex)
    if not examples:
        raise ValueError("training split has no usable sequences")
    item_sets = [frozenset(i.item for i in prefix) for _, prefix in splits.train.prefixes]
    item_set_of_user = {user: s for (user, _), s in zip(splits.train.prefixes, item_sets)}

    torch.manual_seed(train_cfg.seed)
    model = BladeModel(dataset.n_items, dataset.n_users, vocab.size, encoder_cfg)
    dtype = next(model.parameters()).dtype
    device = next(model.parameters()).device
    named = dict(model.named_parameters())
    trainable = [named[n] for n in trainable_parameter_names(model)]
    optimizer = torch.optim.Adam(
        trainable,
        lr=train_cfg.lr,
        betas=(train_cfg.beta1, train_cfg.beta2),
        eps=train_cfg.adam_eps,
        weight_decay=train_cfg.weight_decay,
    )

    result = TrainResult(model=model, stats=stats, splits=splits)
    best_state = copy.deepcopy(model.state_dict())
    since_best = 0
    use_cl = loss_cfg.cl_enabled and augment_cfg.method != "none"

    for epoch in range(train_cfg.epochs):
        started = time.perf_counter()
        shuffle_rng = _seq_rng(train_cfg.seed, epoch, 1)
        neg_rng = _seq_rng(train_cfg.seed, epoch, 2)
        order = shuffle_rng.permutation(len(examples))
        model.train()
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, len(order), train_cfg.batch_size):
            chosen = [examples[i] for i in order[start : start + train_cfg.batch_size]]
            batch = collate_train(chosen)
            items, behaviors, valid, nxt, users = _to_tensors(batch, device, dtype)
            targets = torch.from_numpy(batch.target_items).to(device)
            negs = torch.from_numpy(
                sample_negatives(
                    batch.target_items,
                    batch.valid_mask,
                    [item_set_of_user[ex.user] for ex in chosen],
                    dataset.n_items,
                    loss_cfg.negatives_per_positive,
                    neg_rng,
                )
            ).to(device)

            reps = model(items, behaviors, valid, nxt, users)
            weights = behavior_richness_weight(nxt, vocab.size, loss_cfg.brw_enabled)
            loss_next = next_item_loss(
                reps, targets, negs, weights, valid, model.item_emb.weight
            )

            loss_cl = None
            if use_cl:
                views = []
                for view_id in (1, 2):
                    view_batches = []
                    for ex in chosen:
                        rng = _seq_rng(train_cfg.seed, epoch, ex.user, view_id)
                        aug = augment_sequence(
                            ex.inputs, augment_cfg, stats, vocab.aux_index, rng
                        )
                        view_batches.append(
                            (
                                aug.behaviors,
                                shifted_next_behaviors(aug.behaviors, ex.final_behaviors),
                            )
                        )
                    beh = torch.from_numpy(
                        np.stack([b for b, _ in view_batches]).astype(np.float32)
                    ).to(device=device, dtype=dtype)
                    vnxt = torch.from_numpy(
                        np.stack([t for _, t in view_batches]).astype(np.float32)
                    ).to(device=device, dtype=dtype)
                    view_reps = model(items, beh, valid, vnxt, users)
                    views.append(view_reps.reshape(view_reps.shape[0], -1))
                loss_cl = seq_cl_loss(views[0], views[1], loss_cfg.tau)

            loss = total_loss(loss_next, loss_cl, loss_cfg)
            if not torch.isfinite(loss):
                raise RuntimeError(
                    f"non-finite loss at epoch {epoch}, batch {n_batches}"
                )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            epoch_loss += float(loss.detach())
            n_batches += 1

        record = {"epoch": epoch, "train_loss": epoch_loss / max(1, n_batches)}
        if splits.valid.examples:
            report = evaluate(model, splits.valid, ks=(5, 10))
            record.update(
                {
                    "valid_hr5": report.hr[5],
                    "valid_hr10": report.hr[10],
                    "valid_ndcg5": report.ndcg[5],
                    "valid_ndcg10": report.ndcg[10],
                }
            )
            score = report.ndcg[10]
        else:
            score = -record["train_loss"]
        record["seconds"] = time.perf_counter() - started
        result.log.append(record)
        if log_fn:
            log_fn(record)

        if score > result.best_ndcg10:
            result.best_ndcg10 = score
            result.best_epoch = epoch
            best_state = copy.deepcopy(model.state_dict())
            since_best = 0
        else:
            since_best += 1
            if train_cfg.patience and since_best >= train_cfg.patience:
                break

    if train_cfg.restore_best:
        model.load_state_dict(best_state)
    model.eval()
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, model, extra={"best_epoch": result.best_epoch})
    return result


# ---------------------------------------------------------------------------
# Gradient verification


class GradientCheckError(RuntimeError):
    pass


def _gradcheck_groups(model: torch.nn.Module) -> dict[str, list[str]]:
    if isinstance(model, BladeModel):
        return parameter_groups(model)
    groups: dict[str, list[str]] = {}
    for name, _ in model.named_parameters():
        groups.setdefault(name.split(".")[0], []).append(name)
    return groups


def gradient_check(
    model: torch.nn.Module,
    loss_fn: Callable[[], torch.Tensor],
    *,
    eps: float = 1e-5,
    coords_per_group: int = 20,
    seed: int = 0,
) -> dict[str, float]:
    """Max relative error of autograd vs central differences per group.

    ``loss_fn`` must be a deterministic closure over a fixed batch; the model
    must be in double precision with dropout disabled.
    """
    if next(model.parameters()).dtype != torch.float64:
        raise ValueError("gradient check requires a float64 model")
    model.eval()
    model.zero_grad(set_to_none=True)
    loss_fn().backward()
    named = dict(model.named_parameters())
    grads = {
        name: (p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p))
        for name, p in named.items()
    }
    rng = np.random.default_rng(seed)
    report: dict[str, float] = {}
    for group, names in _gradcheck_groups(model).items():
        sizes = np.array([named[n].numel() for n in names])
        total = int(sizes.sum())
        worst = 0.0
        for _ in range(coords_per_group):
            flat = int(rng.integers(total))
            which = int(np.searchsorted(np.cumsum(sizes), flat, side="right"))
            idx = flat - int(np.concatenate([[0], np.cumsum(sizes)])[which])
            param = named[names[which]]
            with torch.no_grad():
                view = param.view(-1)
                original = view[idx].item()
                view[idx] = original + eps
                up = float(loss_fn())
                view[idx] = original - eps
                down = float(loss_fn())
                view[idx] = original
            numeric = (up - down) / (2.0 * eps)
            analytic = float(grads[names[which]].view(-1)[idx])
            denom = max(abs(analytic), abs(numeric), 1e-4)
            worst = max(worst, abs(analytic - numeric) / denom)
        report[group] = worst
    return report


def check_gradients_or_raise(report: dict[str, float], tolerance: float = 1e-4) -> None:
    bad = {g: e for g, e in report.items() if e >= tolerance}
    if bad:
        detail = ", ".join(f"{g}={e:.3e}" for g, e in sorted(bad.items()))
        raise GradientCheckError(f"gradient mismatch above {tolerance}: {detail}")


def make_gradcheck_probe(
    dataset: Dataset,
    encoder_cfg: EncoderConfig,
    loss_cfg: LossConfig,
    augment_cfg: AugmentConfig,
    *,
    seed: int = 0,
    batch_size: int = 4,
) -> tuple[BladeModel, Callable[[], torch.Tensor]]:
    """A double-precision model plus a fixed-batch total-loss closure that
    exercises the scoring, weighting and contrastive paths."""
    if encoder_cfg.dropout != 0.0:
        encoder_cfg = replace(encoder_cfg, dropout=0.0)
    splits = leave_one_out_split(dataset)
    stats = compute_behavior_stats(splits.train)
    vocab = dataset.behavior_vocab
    examples = []
    for user, prefix in splits.train.prefixes:
        ex = make_train_example(user, prefix, encoder_cfg.L)
        if ex is not None:
            examples.append(ex)
        if len(examples) == batch_size:
            break
    batch = collate_train(examples)

    torch.manual_seed(seed)
    model = BladeModel(dataset.n_items, dataset.n_users, vocab.size, encoder_cfg).double()
    device = torch.device("cpu")
    items, behaviors, valid, nxt, users = _to_tensors(batch, device, torch.float64)
    targets = torch.from_numpy(batch.target_items)
    rng = _seq_rng(seed, 0, 3)
    negs = torch.from_numpy(
        sample_negatives(
            batch.target_items,
            batch.valid_mask,
            [frozenset(int(i) for i in ex.inputs.items[ex.inputs.valid_mask]) for ex in examples],
            dataset.n_items,
            loss_cfg.negatives_per_positive,
            rng,
        )
    )
    view_tensors = []
    for view_id in (1, 2):
        rows = []
        for ex in examples:
            aug = augment_sequence(
                ex.inputs, augment_cfg, stats, vocab.aux_index, _seq_rng(seed, ex.user, view_id)
            )
            rows.append((aug.behaviors, shifted_next_behaviors(aug.behaviors, ex.final_behaviors)))
        beh = torch.from_numpy(np.stack([b for b, _ in rows]).astype(np.float64))
        vnxt = torch.from_numpy(np.stack([t for _, t in rows]).astype(np.float64))
        view_tensors.append((beh, vnxt))

    def loss_fn() -> torch.Tensor:
        reps = model(items, behaviors, valid, nxt, users)
        weights = behavior_richness_weight(nxt, vocab.size, loss_cfg.brw_enabled)
        loss_next = next_item_loss(
            reps, targets, negs, weights, valid, model.item_emb.weight
        )
        hs = []
        for beh, vnxt in view_tensors:
            view_reps = model(items, beh, valid, vnxt, users)
            hs.append(view_reps.reshape(view_reps.shape[0], -1))
        return total_loss(loss_next, seq_cl_loss(hs[0], hs[1], loss_cfg.tau), loss_cfg)

    return model, loss_fn
