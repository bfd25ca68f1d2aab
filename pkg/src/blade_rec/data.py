"""Behavior-set interaction data model.

Each interaction pairs an item with a multi-hot behavior set (e.g. a video
that was clicked, liked and shared in one step). This module covers TSV
ingestion, fixed-length padding, the chronological leave-one-out split and a
synthetic generator with controllable behavior marginals, pairwise behavior
coupling and latent item clusters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np
from scipy.stats import norm

PAD_ITEM = 0
PAD_TOKEN = "<pad>"


class DataError(ValueError):
    """Raised for malformed interaction or vocabulary files."""


@dataclass(frozen=True)
class BehaviorVocab:
    """Ordered behavior names plus the index of the auxiliary behavior.

    The auxiliary behavior is the high-frequency implicit-feedback signal
    (click/read); the remaining names are target behaviors.
    """

    names: tuple[str, ...]
    aux_index: int

    def __post_init__(self):
        if len(self.names) < 2:
            raise DataError("behavior vocabulary needs at least 2 behaviors")
        if len(set(self.names)) != len(self.names):
            raise DataError("behavior names must be unique")
        if any(not n for n in self.names):
            raise DataError("behavior names must be non-empty")
        if not 0 <= self.aux_index < len(self.names):
            raise DataError(f"aux_index {self.aux_index} out of range")

    @property
    def size(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise DataError(f"unknown behavior name: {name!r}") from None

    def encode(self, names: Iterable[str]) -> np.ndarray:
        bits = np.zeros(self.size, dtype=np.uint8)
        for name in names:
            bits[self.index(name)] = 1
        return bits

    def decode(self, bits: np.ndarray) -> list[str]:
        return [self.names[i] for i in np.flatnonzero(bits)]

    @classmethod
    def from_file(cls, path, aux_behavior: str) -> "BehaviorVocab":
        with open(path, encoding="utf-8") as fh:
            names = tuple(line.strip() for line in fh if line.strip())
        if not names:
            raise DataError(f"empty behavior vocabulary file: {path}")
        if aux_behavior not in names:
            raise DataError(
                f"auxiliary behavior {aux_behavior!r} not in vocabulary {names}"
            )
        return cls(names=names, aux_index=names.index(aux_behavior))


class Interaction(NamedTuple):
    item: int
    behaviors: np.ndarray  # (|B|,) uint8 multi-hot


@dataclass
class UserSequence:
    """Fixed-length, left-padded slice of one user's interaction history.

    Padding occupies a prefix (item 0, all-zero behavior set, mask 0); the
    most recent interaction always sits at the last position.
    """

    user: int
    items: np.ndarray       # (L,) int64
    behaviors: np.ndarray   # (L, |B|) uint8
    valid_mask: np.ndarray  # (L,) bool

    @property
    def valid_len(self) -> int:
        return int(self.valid_mask.sum())


@dataclass
class Dataset:
    """Users, items and per-user time-sorted behavior-set interactions.

    ``item_ids[0]`` is the reserved padding token; real items start at 1.
    Instances are treated as immutable once built.
    """

    behavior_vocab: BehaviorVocab
    user_ids: list[str]
    item_ids: list[str]
    interactions: list[list[Interaction]]

    @property
    def n_users(self) -> int:
        return len(self.user_ids)

    @property
    def n_items(self) -> int:
        """Item table size, padding row included."""
        return len(self.item_ids)

    @property
    def n_interactions(self) -> int:
        return sum(len(s) for s in self.interactions)


@dataclass
class TrainView:
    """Per-user training prefixes (full history minus held-out targets)."""

    behavior_vocab: BehaviorVocab
    n_items: int
    prefixes: list[tuple[int, list[Interaction]]]

    def all_interactions(self) -> Iterable[Interaction]:
        for _, prefix in self.prefixes:
            yield from prefix


@dataclass
class EvalExample:
    user: int
    prefix: list[Interaction]
    target: Interaction


@dataclass
class EvalView:
    behavior_vocab: BehaviorVocab
    n_items: int
    examples: list[EvalExample]


@dataclass
class SplitViews:
    train: TrainView
    valid: EvalView
    test: EvalView


def load_dataset(path, vocab_path, aux_behavior: str) -> Dataset:
    """Read a TSV interaction file against a behavior vocabulary file.

    Rows are ``user_id<TAB>item_id<TAB>timestamp<TAB>behaviors`` with
    behaviors a comma-separated subset of the vocabulary; no header. Rows are
    sorted by (timestamp, file order) and grouped per user; user and item
    indices are assigned in first appearance order of the sorted stream, with
    item index 0 reserved for padding, so re-shuffling rows with distinct
    timestamps yields the same dataset.
    """
    vocab = BehaviorVocab.from_file(vocab_path, aux_behavior)
    rows: list[tuple[int, str, str, np.ndarray]] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise DataError(
                    f"{path}:{lineno}: expected 4 tab-separated columns, got {len(parts)}"
                )
            raw_user, raw_item, raw_ts, raw_behaviors = parts
            try:
                timestamp = int(raw_ts)
            except ValueError:
                raise DataError(
                    f"{path}:{lineno}: timestamp {raw_ts!r} is not an integer"
                ) from None
            names = [b.strip() for b in raw_behaviors.split(",") if b.strip()]
            if not names:
                raise DataError(f"{path}:{lineno}: interaction has no behaviors")
            try:
                bits = vocab.encode(names)
            except DataError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            rows.append((timestamp, raw_user, raw_item, bits))

    if not rows:
        raise DataError(f"empty interaction file: {path}")

    rows.sort(key=lambda r: r[0])  # stable: file order breaks timestamp ties
    user_index: dict[str, int] = {}
    item_index: dict[str, int] = {PAD_TOKEN: PAD_ITEM}
    interactions: list[list[Interaction]] = []
    for _, raw_user, raw_item, bits in rows:
        if raw_user not in user_index:
            user_index[raw_user] = len(user_index)
            interactions.append([])
        if raw_item not in item_index:
            item_index[raw_item] = len(item_index)
        interactions[user_index[raw_user]].append(
            Interaction(item_index[raw_item], bits)
        )

    item_ids = [PAD_TOKEN] * len(item_index)
    for raw, idx in item_index.items():
        item_ids[idx] = raw
    return Dataset(
        behavior_vocab=vocab,
        user_ids=list(user_index),
        item_ids=item_ids,
        interactions=interactions,
    )


def truncate_pad(interactions: Sequence[Interaction], L: int, user: int = 0) -> UserSequence:
    """Keep the most recent ``L`` interactions, left-padding shorter lists."""
    if not interactions:
        raise DataError("cannot build a sequence from an empty interaction list")
    n_behaviors = interactions[0].behaviors.shape[0]
    kept = interactions[-L:]
    pad = L - len(kept)
    items = np.zeros(L, dtype=np.int64)
    behaviors = np.zeros((L, n_behaviors), dtype=np.uint8)
    valid = np.zeros(L, dtype=bool)
    for i, inter in enumerate(kept):
        items[pad + i] = inter.item
        behaviors[pad + i] = inter.behaviors
        valid[pad + i] = True
    return UserSequence(user=user, items=items, behaviors=behaviors, valid_mask=valid)


def leave_one_out_split(dataset: Dataset) -> SplitViews:
    """Last interaction per user -> test, second-to-last -> validation.

    Users with fewer than 3 interactions stay train-only (their full history
    feeds training and statistics) instead of being dropped.
    """
    train_prefixes: list[tuple[int, list[Interaction]]] = []
    valid_examples: list[EvalExample] = []
    test_examples: list[EvalExample] = []
    for user, history in enumerate(dataset.interactions):
        if len(history) >= 3:
            train_prefixes.append((user, history[:-2]))
            valid_examples.append(EvalExample(user, history[:-2], history[-2]))
            test_examples.append(EvalExample(user, history[:-1], history[-1]))
        elif history:
            train_prefixes.append((user, list(history)))
    vocab = dataset.behavior_vocab
    return SplitViews(
        train=TrainView(vocab, dataset.n_items, train_prefixes),
        valid=EvalView(vocab, dataset.n_items, valid_examples),
        test=EvalView(vocab, dataset.n_items, test_examples),
    )


# ---------------------------------------------------------------------------
# Synthetic data


@dataclass
class SyntheticConfig:
    """Generator knobs for a desk-scale dataset with long-tail behaviors.

    ``marginals[i]`` is the probability that behavior i is present in an
    interaction; ``coupling`` is the equicorrelation of the Gaussian copula
    that induces pairwise behavior co-occurrence. Items come from a per-user
    latent cluster with an in-cluster popularity skew so that sequences carry
    a learnable signal.
    """

    n_users: int = 100
    n_items: int = 200
    behavior_names: tuple[str, ...] = ("click", "like", "share", "follow")
    aux_behavior: str = "click"
    marginals: tuple[float, ...] = (0.9, 0.3, 0.05, 0.05)
    coupling: float = 0.2
    min_len: int = 5
    max_len: int = 30
    n_clusters: int = 10
    in_cluster_prob: float = 0.85
    popularity_exponent: float = 1.1

    def __post_init__(self):
        if len(self.marginals) != len(self.behavior_names):
            raise DataError("marginals must match the number of behaviors")
        if any(not 0.0 <= p <= 1.0 for p in self.marginals):
            raise DataError("behavior marginals must lie in [0, 1]")
        if sum(self.marginals) <= 0.0:
            raise DataError("at least one behavior marginal must be positive")
        if not 0.0 <= self.coupling < 1.0:
            raise DataError("coupling must lie in [0, 1)")
        if self.aux_behavior not in self.behavior_names:
            raise DataError(f"aux behavior {self.aux_behavior!r} not in names")
        if not 2 <= self.min_len <= self.max_len:
            raise DataError("need 2 <= min_len <= max_len")
        if self.n_users < 1 or self.n_items < 2 or self.n_clusters < 1:
            raise DataError("n_users >= 1, n_items >= 2, n_clusters >= 1 required")


def _empty_set_prob(thresholds: np.ndarray, coupling: float) -> float:
    # P(no bit set) under the equicorrelated Gaussian copula, via 1-D
    # Gauss-Hermite quadrature over the shared factor.
    if coupling <= 0.0:
        return float(np.prod(1.0 - norm.cdf(thresholds)))
    nodes, weights = np.polynomial.hermite_e.hermegauss(101)
    scale = math.sqrt(1.0 - coupling)
    cond_absent = 1.0 - norm.cdf(
        (thresholds[None, :] - math.sqrt(coupling) * nodes[:, None]) / scale
    )
    return float(weights @ np.prod(cond_absent, axis=1) / math.sqrt(2.0 * math.pi))


def _calibrate_base_marginals(marginals: np.ndarray, coupling: float) -> np.ndarray:
    # Rejection of all-zero draws inflates every marginal by 1/(1 - P0); find
    # base marginals q with q_i / (1 - P0(q)) = p_i by fixed-point iteration.
    # Conditioning on non-emptiness forces the mean marginal above 1/|B|, so
    # low-mass configurations have no solution; the iteration then drives q
    # toward zero and we fail fast instead.
    q = marginals.astype(np.float64).copy()
    for _ in range(200):
        p0 = _empty_set_prob(norm.ppf(np.clip(q, 0.0, 1.0)), coupling)
        if p0 >= 0.5:
            raise DataError(
                "behavior marginals are unreachable under the non-empty-set "
                "constraint; raise the marginals or lower the coupling"
            )
        q_next = marginals * (1.0 - p0)
        if np.max(np.abs(q_next - q)) < 1e-13:
            q = q_next
            break
        q = q_next
    return q


def sample_behavior_sets(
    n: int, marginals: Sequence[float], coupling: float, rng: np.random.Generator
) -> np.ndarray:
    """Draw ``n`` non-empty multi-hot rows with the requested marginals.

    Bits are coupled through a shared Gaussian factor; all-zero draws are
    rejected, and the base marginals are pre-calibrated so the accepted rows
    still match ``marginals``.
    """
    p = np.asarray(marginals, dtype=np.float64)
    q = _calibrate_base_marginals(p, coupling)
    thresholds = norm.ppf(np.clip(q, 0.0, 1.0))
    p0 = _empty_set_prob(thresholds, coupling)
    out = np.empty((n, p.size), dtype=np.uint8)
    filled = 0
    while filled < n:
        want = n - filled
        batch = int(want / max(1e-9, 1.0 - p0) * 1.2) + 16
        shared = rng.standard_normal(batch)
        noise = rng.standard_normal((batch, p.size))
        latent = math.sqrt(coupling) * shared[:, None] + math.sqrt(1.0 - coupling) * noise
        bits = (latent < thresholds[None, :]).astype(np.uint8)
        keep = bits[bits.any(axis=1)]
        take = min(want, keep.shape[0])
        out[filled : filled + take] = keep[:take]
        filled += take
    return out


def generate_synthetic(config: SyntheticConfig, seed: int) -> Dataset:
    """Deterministically generate a behavior-set dataset from ``config``."""
    rng = np.random.default_rng(seed)
    n_real_items = config.n_items - 1  # index 0 stays padding
    lengths = rng.integers(config.min_len, config.max_len + 1, size=config.n_users)
    behavior_rows = sample_behavior_sets(
        int(lengths.sum()), config.marginals, config.coupling, rng
    )

    # Item model: users belong to a latent cluster; items within a cluster
    # follow a power-law popularity, so histories predict future picks.
    user_cluster = rng.integers(0, config.n_clusters, size=config.n_users)
    item_cluster = np.arange(n_real_items) % config.n_clusters
    cluster_items = [np.flatnonzero(item_cluster == c) for c in range(config.n_clusters)]
    cluster_probs = []
    for members in cluster_items:
        w = 1.0 / np.arange(1, members.size + 1, dtype=np.float64) ** config.popularity_exponent
        cluster_probs.append(w / w.sum())

    interactions: list[list[Interaction]] = []
    cursor = 0
    for user in range(config.n_users):
        n = int(lengths[user])
        members = cluster_items[user_cluster[user]]
        in_cluster = rng.random(n) < config.in_cluster_prob
        if members.size == 0:  # more clusters than items: fall back to uniform
            in_cluster[:] = False
        picks = np.empty(n, dtype=np.int64)
        n_in = int(in_cluster.sum())
        if n_in:
            picks[in_cluster] = rng.choice(
                members, size=n_in, p=cluster_probs[user_cluster[user]]
            )
        picks[~in_cluster] = rng.integers(0, n_real_items, size=n - n_in)
        seq = [
            Interaction(int(picks[i]) + 1, behavior_rows[cursor + i])
            for i in range(n)
        ]
        interactions.append(seq)
        cursor += n

    vocab = BehaviorVocab(
        names=tuple(config.behavior_names),
        aux_index=config.behavior_names.index(config.aux_behavior),
    )
    return Dataset(
        behavior_vocab=vocab,
        user_ids=[f"u{i}" for i in range(config.n_users)],
        item_ids=[PAD_TOKEN] + [f"i{j}" for j in range(1, config.n_items)],
        interactions=interactions,
    )


# ---------------------------------------------------------------------------
# Batch assembly


@dataclass
class TrainExample:
    """One user's training slice: inputs plus shift-by-one targets."""

    user: int
    inputs: UserSequence
    target_items: np.ndarray       # (L,) int64, 0 at padding
    final_behaviors: np.ndarray    # (|B|,) behavior set of the last target


def make_train_example(user: int, prefix: Sequence[Interaction], L: int) -> TrainExample | None:
    """Build inputs ``prefix[:-1]`` and targets ``prefix[1:]`` padded to L."""
    if len(prefix) < 2:
        return None
    inputs = truncate_pad(prefix[:-1], L, user=user)
    kept = min(L, len(prefix) - 1)
    targets = prefix[len(prefix) - kept :]
    target_items = np.zeros(L, dtype=np.int64)
    for i, inter in enumerate(targets):
        target_items[L - kept + i] = inter.item
    return TrainExample(
        user=user,
        inputs=inputs,
        target_items=target_items,
        final_behaviors=prefix[-1].behaviors,
    )


def shifted_next_behaviors(behaviors: np.ndarray, final_behaviors: np.ndarray) -> np.ndarray:
    """Per-step next behavior sets: position l holds the set at l+1, the last
    position holds the held-out target's set."""
    out = np.empty_like(behaviors)
    out[:-1] = behaviors[1:]
    out[-1] = final_behaviors
    return out


@dataclass
class Batch:
    """Dense arrays for a model forward pass."""

    users: np.ndarray           # (N,)
    items: np.ndarray           # (N, L)
    behaviors: np.ndarray       # (N, L, |B|)
    valid_mask: np.ndarray      # (N, L) bool
    next_behaviors: np.ndarray  # (N, L, |B|)
    target_items: np.ndarray | None = None  # (N, L) for training batches


def collate_train(examples: Sequence[TrainExample]) -> Batch:
    users = np.array([ex.user for ex in examples], dtype=np.int64)
    items = np.stack([ex.inputs.items for ex in examples])
    behaviors = np.stack([ex.inputs.behaviors for ex in examples])
    valid = np.stack([ex.inputs.valid_mask for ex in examples])
    nxt = np.stack(
        [shifted_next_behaviors(ex.inputs.behaviors, ex.final_behaviors) for ex in examples]
    )
    targets = np.stack([ex.target_items for ex in examples])
    return Batch(users, items, behaviors, valid, nxt, targets)


def collate_eval(examples: Sequence[EvalExample], L: int) -> Batch:
    seqs = [truncate_pad(ex.prefix, L, user=ex.user) for ex in examples]
    users = np.array([ex.user for ex in examples], dtype=np.int64)
    items = np.stack([s.items for s in seqs])
    behaviors = np.stack([s.behaviors for s in seqs])
    valid = np.stack([s.valid_mask for s in seqs])
    nxt = np.stack(
        [
            shifted_next_behaviors(s.behaviors, ex.target.behaviors)
            for s, ex in zip(seqs, examples)
        ]
    )
    return Batch(users, items, behaviors, valid, nxt)
