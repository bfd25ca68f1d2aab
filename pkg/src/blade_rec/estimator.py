"""Scikit-learn style estimator facade over the full pipeline.

``BladeRecommender`` exposes fit/predict/score with ``get_params`` /
``set_params`` from :class:`sklearn.base.BaseEstimator`, so the recommender
drops into sklearn tooling (cloning, grid search over hyperparameters). The
estimator is transductive: it fits on a :class:`~blade_rec.data.Dataset` and
predicts for that dataset's held-out split.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .augment import METHODS, AugmentConfig
from .data import Dataset
from .losses import LossConfig
from .metrics import evaluate, final_step_reps, full_rank, history_exclusions, target_ranks
from .model import EARLY_FUSION_MODES, EncoderConfig
from .training import TrainConfig, train


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ValueError(message)


def validate_dataset(X) -> Dataset:
    """Accept only a populated Dataset instance."""
    _require(isinstance(X, Dataset), f"expected a Dataset, got {type(X).__name__}")
    _require(X.n_interactions > 0, "dataset has no interactions")
    return X


class BladeRecommender(BaseEstimator):
    """Behavior-set sequential recommender with contrastive augmentation.

    Parameters mirror the run configuration; see the package README for the
    CLI equivalents. ``fit`` performs the leave-one-out split internally,
    trains with the configured augmentation and keeps the parameters of the
    best validation epoch.
    """

    def __init__(
        self,
        d: int = 32,
        L: int = 50,
        blocks: int = 2,
        heads: int = 2,
        experts: int = 4,
        dropout: float = 0.2,
        alpha: float = 0.5,
        early_fusion_mode: str = "sum",
        augmentation: str = "cooccur_add",
        rho: float = 0.2,
        c: float = 0.5,
        contrastive_weight: float = 0.1,
        temperature: float = 1.0,
        negatives: int = 1,
        richness_weighting: bool = True,
        contrastive: bool = True,
        epochs: int = 50,
        batch_size: int = 128,
        learning_rate: float = 1e-3,
        weight_decay: float = 0.0,
        patience: int = 0,
        seed: int = 0,
    ):
        self.d = d
        self.L = L
        self.blocks = blocks
        self.heads = heads
        self.experts = experts
        self.dropout = dropout
        self.alpha = alpha
        self.early_fusion_mode = early_fusion_mode
        self.augmentation = augmentation
        self.rho = rho
        self.c = c
        self.contrastive_weight = contrastive_weight
        self.temperature = temperature
        self.negatives = negatives
        self.richness_weighting = richness_weighting
        self.contrastive = contrastive
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.patience = patience
        self.seed = seed

    def _validate_params(self):
        _require(self.d >= 1 and self.d % self.heads == 0, "d must be a positive multiple of heads")
        _require(self.L >= 1, "L must be >= 1")
        _require(0.0 <= self.alpha <= 1.0, "alpha must lie in [0, 1]")
        _require(self.early_fusion_mode in EARLY_FUSION_MODES, f"early_fusion_mode must be one of {EARLY_FUSION_MODES}")
        _require(self.augmentation in METHODS, f"augmentation must be one of {METHODS}")
        _require(0.0 < self.rho < 1.0, "rho must lie in (0, 1)")
        _require(self.temperature > 0.0, "temperature must be > 0")
        _require(self.contrastive_weight >= 0.0, "contrastive_weight must be >= 0")
        _require(self.epochs >= 0 and self.batch_size >= 1, "epochs >= 0 and batch_size >= 1")

    def _configs(self):
        encoder = EncoderConfig(
            d=self.d,
            L=self.L,
            blocks=self.blocks,
            heads=self.heads,
            experts=self.experts,
            dropout=self.dropout,
            alpha=self.alpha,
            early_fusion_mode=self.early_fusion_mode,
        )
        loss = LossConfig(
            lam=self.contrastive_weight,
            tau=self.temperature,
            negatives_per_positive=self.negatives,
            brw_enabled=self.richness_weighting,
            cl_enabled=self.contrastive,
        )
        trainer = TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            lr=self.learning_rate,
            weight_decay=self.weight_decay,
            seed=self.seed,
            patience=self.patience,
        )
        augment = AugmentConfig(method=self.augmentation, rho=self.rho, c=self.c, seed=self.seed)
        return encoder, loss, trainer, augment

    def fit(self, X: Dataset, y=None) -> "BladeRecommender":
        """Train on ``X``; returns self."""
        self._validate_params()
        dataset = validate_dataset(X)
        encoder, loss, trainer, augment = self._configs()
        result = train(dataset, encoder, loss, trainer, augment)
        self.dataset_ = dataset
        self.model_ = result.model
        self.stats_ = result.stats
        self.splits_ = result.splits
        self.history_ = result.log
        self.best_epoch_ = result.best_epoch
        return self

    def _view(self, split: str):
        _require(split in ("valid", "test"), "split must be 'valid' or 'test'")
        return self.splits_.valid if split == "valid" else self.splits_.test

    def predict(self, X: Dataset | None = None, split: str = "test", k: int = 10) -> np.ndarray:
        """Top-``k`` item indices per held-out example, best first."""
        check_is_fitted(self, "model_")
        if X is not None:
            _require(X is self.dataset_, "predict expects the fitted dataset (transductive model)")
        view = self._view(split)
        item_table = self.model_.item_emb.weight.detach().cpu().numpy()
        reps = final_step_reps(self.model_, view)
        top = np.empty((len(view.examples), k), dtype=np.int64)
        for i, ex in enumerate(view.examples):
            top[i] = full_rank(reps[i], item_table, history_exclusions(ex))[:k]
        return top

    def score(self, X: Dataset | None = None, y=None, split: str = "test") -> float:
        """NDCG@10 on the held-out split."""
        check_is_fitted(self, "model_")
        if X is not None:
            _require(X is self.dataset_, "score expects the fitted dataset (transductive model)")
        report = evaluate(self.model_, self._view(split), ks=(10,))
        return report.ndcg[10]

    def ranks(self, split: str = "test") -> np.ndarray:
        """1-based full-ranking position of each held-out target."""
        check_is_fitted(self, "model_")
        return target_ranks(self.model_, self._view(split))
