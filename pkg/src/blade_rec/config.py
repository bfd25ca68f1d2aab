"""Flat key-value run configuration with dotted section keys.

Files hold ``section.key = value`` lines (``#`` comments allowed); CLI
overrides use the same ``section.key=value`` syntax and win over file values.
The effective configuration serializes to a canonical echo used both for
provenance and for naming run directories.
"""

from __future__ import annotations

import hashlib
from typing import Callable

from .augment import AugmentConfig
from .data import SyntheticConfig
from .losses import LossConfig
from .model import EncoderConfig
from .training import TrainConfig


class ConfigError(ValueError):
    """Raised for unknown keys or unparseable values."""


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


def _str_tuple(text: str) -> tuple[str, ...]:
    return tuple(part.strip() for part in text.split(",") if part.strip())


def _float_tuple(text: str) -> tuple[float, ...]:
    return tuple(float(part) for part in text.split(",") if part.strip())


def _int_tuple(text: str) -> tuple[int, ...]:
    return tuple(int(part) for part in text.split(",") if part.strip())


# key -> (default, parser)
SCHEMA: dict[str, tuple[object, Callable[[str], object]]] = {
    "data.path": ("", str),
    "data.vocab_path": ("", str),
    "data.aux_behavior": ("click", str),
    "data.L": (50, int),
    "synth.users": (0, int),
    "synth.items": (0, int),
    "synth.behaviors": (("click", "like", "share", "follow"), _str_tuple),
    "synth.marginals": ((0.9, 0.3, 0.05, 0.05), _float_tuple),
    "synth.coupling": (0.2, float),
    "synth.min_len": (5, int),
    "synth.max_len": (30, int),
    "synth.clusters": (10, int),
    "synth.in_cluster_prob": (0.85, float),
    "synth.popularity_exponent": (1.1, float),
    "synth.seed": (0, int),
    "model.d": (32, int),
    "model.blocks": (2, int),
    "model.heads": (2, int),
    "model.experts": (4, int),
    "model.dropout": (0.2, float),
    "model.alpha": (0.5, float),
    "model.early_fusion_mode": ("sum", str),
    "model.causal_mask": ("pre_softmax", str),
    "augment.method": ("cooccur_add", str),
    "augment.rho": (0.2, float),
    "augment.c": (0.5, float),
    "augment.guard_empty": (True, _bool),
    "loss.lambda": (0.1, float),
    "loss.tau": (1.0, float),
    "loss.negatives": (1, int),
    "loss.brw": (True, _bool),
    "loss.cl": (True, _bool),
    "train.epochs": (100, int),
    "train.batch_size": (128, int),
    "train.lr": (1e-3, float),
    "train.weight_decay": (0.0, float),
    "train.beta1": (0.9, float),
    "train.beta2": (0.999, float),
    "train.adam_eps": (1e-8, float),
    "train.seed": (0, int),
    "train.patience": (0, int),
    "train.no_ef": (False, _bool),
    "train.no_if": (False, _bool),
    "train.no_cl": (False, _bool),
    "train.no_brw": (False, _bool),
    "eval.ks": ((5, 10), _int_tuple),
    "eval.exclude_history": (True, _bool),
    "eval.tail_behaviors": (("share", "follow"), _str_tuple),
    "eval.tail_threshold": (0.8, float),
    "eval.occurrence_level": (False, _bool),
    "eval.conditioning": ("target", str),
}


def _format_value(value: object) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


class RunConfig:
    """Fully resolved configuration; every schema key has a value."""

    def __init__(self, values: dict[str, object]):
        self.values = values

    def __getitem__(self, key: str) -> object:
        return self.values[key]

    def echo(self) -> str:
        lines = [f"{k}={_format_value(self.values[k])}" for k in sorted(self.values)]
        return "\n".join(lines) + "\n"

    def config_hash(self) -> str:
        return hashlib.sha256(self.echo().encode("utf-8")).hexdigest()[:10]

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(
            d=self["model.d"],
            L=self["data.L"],
            blocks=self["model.blocks"],
            heads=self["model.heads"],
            experts=self["model.experts"],
            dropout=self["model.dropout"],
            alpha=self["model.alpha"],
            early_fusion_mode=self["model.early_fusion_mode"],
            causal_mask=self["model.causal_mask"],
        )

    def augment_config(self) -> AugmentConfig:
        return AugmentConfig(
            method=self["augment.method"],
            rho=self["augment.rho"],
            c=self["augment.c"],
            seed=self["train.seed"],
            guard_empty=self["augment.guard_empty"],
        )

    def loss_config(self) -> LossConfig:
        return LossConfig(
            lam=self["loss.lambda"],
            tau=self["loss.tau"],
            negatives_per_positive=self["loss.negatives"],
            brw_enabled=self["loss.brw"],
            cl_enabled=self["loss.cl"],
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self["train.epochs"],
            batch_size=self["train.batch_size"],
            lr=self["train.lr"],
            beta1=self["train.beta1"],
            beta2=self["train.beta2"],
            adam_eps=self["train.adam_eps"],
            weight_decay=self["train.weight_decay"],
            seed=self["train.seed"],
            patience=self["train.patience"],
            no_ef=self["train.no_ef"],
            no_if=self["train.no_if"],
            no_cl=self["train.no_cl"],
            no_brw=self["train.no_brw"],
        )

    def synthetic_config(self) -> SyntheticConfig | None:
        if self["synth.users"] <= 0:
            return None
        return SyntheticConfig(
            n_users=self["synth.users"],
            n_items=self["synth.items"],
            behavior_names=self["synth.behaviors"],
            aux_behavior=self["data.aux_behavior"],
            marginals=self["synth.marginals"],
            coupling=self["synth.coupling"],
            min_len=self["synth.min_len"],
            max_len=self["synth.max_len"],
            n_clusters=self["synth.clusters"],
            in_cluster_prob=self["synth.in_cluster_prob"],
            popularity_exponent=self["synth.popularity_exponent"],
        )


def parse_assignment(line: str) -> tuple[str, str]:
    if "=" not in line:
        raise ConfigError(f"expected key=value, got {line!r}")
    key, _, raw = line.partition("=")
    return key.strip(), raw.strip()


def _set_value(values: dict[str, object], key: str, raw: str, where: str) -> None:
    if key not in SCHEMA:
        raise ConfigError(f"{where}: unknown config key {key!r}")
    _, parser = SCHEMA[key]
    try:
        values[key] = parser(raw)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{where}: bad value for {key}: {exc}") from None


def load_run_config(path=None, overrides: list[str] | None = None) -> RunConfig:
    """Defaults, then file values, then ``key=value`` overrides."""
    values = {key: default for key, (default, _) in SCHEMA.items()}
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                stripped = line.strip()
                if not stripped or stripped.startswith("#"):
                    continue
                key, raw = parse_assignment(stripped)
                _set_value(values, key, raw, f"{path}:{lineno}")
    for item in overrides or []:
        key, raw = parse_assignment(item)
        _set_value(values, key, raw, "--set")
    return RunConfig(values)
