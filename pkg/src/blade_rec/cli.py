"""Command-line pipeline: ingest, stats, synth, augment, train, eval,
gradcheck and ablate.

Each run writes its artifacts under ``$BLADE_RUN_ROOT/<config-hash>-seed<N>``
(default root ``./runs``), starting with an echo of the effective
configuration so any run is reconstructible from the echo, the seed and the
dataset files. Usage and configuration errors exit with status 2, runtime
failures with 1.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np

from .augment import augment_sequence
from .checkpoint import load_checkpoint
from .config import ConfigError, RunConfig, load_run_config
from .data import (
    DataError,
    Dataset,
    SyntheticConfig,
    generate_synthetic,
    leave_one_out_split,
    load_dataset,
    truncate_pad,
)
from .metrics import evaluate, report_to_tsv
from .model import trainable_parameter_names
from .stats import compute_behavior_stats, stats_to_tsv
from .training import (
    GradientCheckError,
    check_gradients_or_raise,
    gradient_check,
    make_gradcheck_probe,
    train,
)

RUN_ROOT_ENV = "BLADE_RUN_ROOT"


def _run_dir(cfg: RunConfig) -> Path:
    root = Path(os.environ.get(RUN_ROOT_ENV, "runs"))
    run = root / f"{cfg.config_hash()}-seed{cfg['train.seed']}"
    run.mkdir(parents=True, exist_ok=True)
    (run / "config.echo").write_text(cfg.echo(), encoding="utf-8")
    return run


def _resolve_dataset(cfg: RunConfig) -> Dataset:
    path = cfg["data.path"]
    if path:
        vocab_path = cfg["data.vocab_path"]
        if not vocab_path:
            raise ConfigError("data.vocab_path is required when data.path is set")
        return load_dataset(path, vocab_path, cfg["data.aux_behavior"])
    synth = cfg.synthetic_config()
    if synth is None:
        raise ConfigError("configure either data.path or synth.users")
    return generate_synthetic(synth, cfg["synth.seed"])


def _load_config(args) -> RunConfig:
    overrides = list(args.set or [])
    overrides += getattr(args, "extra_overrides", [])
    return load_run_config(args.config, overrides)


def _dataset_to_tsv_rows(dataset: Dataset):
    vocab = dataset.behavior_vocab
    for user, history in enumerate(dataset.interactions):
        for position, inter in enumerate(history):
            names = ",".join(vocab.decode(inter.behaviors))
            yield (
                f"{dataset.user_ids[user]}\t{dataset.item_ids[inter.item]}"
                f"\t{position}\t{names}"
            )


def cmd_ingest(args) -> int:
    cfg = _load_config(args)
    dataset = _resolve_dataset(cfg)
    lengths = [len(h) for h in dataset.interactions]
    print(f"users\t{dataset.n_users}")
    print(f"items\t{dataset.n_items - 1}")
    print(f"interactions\t{dataset.n_interactions}")
    print(f"behaviors\t{','.join(dataset.behavior_vocab.names)}")
    print(f"aux_behavior\t{dataset.behavior_vocab.names[dataset.behavior_vocab.aux_index]}")
    print(f"min_len\t{min(lengths)}")
    print(f"max_len\t{max(lengths)}")
    return 0


def cmd_stats(args) -> int:
    cfg = _load_config(args)
    dataset = _resolve_dataset(cfg)
    splits = leave_one_out_split(dataset)
    stats = compute_behavior_stats(splits.train)
    text = stats_to_tsv(stats)
    out = Path(args.out) if args.out else _run_dir(cfg) / "stats.tsv"
    out.write_text(text, encoding="utf-8")
    print(text, end="")
    print(f"wrote {out}", file=sys.stderr)
    return 0


def cmd_synth(args) -> int:
    cfg = _load_config(args)
    synth = cfg.synthetic_config()
    if synth is None:
        raise ConfigError("synth.users must be > 0 for the synth command")
    dataset = generate_synthetic(synth, cfg["synth.seed"])
    out_dir = Path(args.out) if args.out else _run_dir(cfg)
    out_dir.mkdir(parents=True, exist_ok=True)
    interactions = out_dir / "interactions.tsv"
    with open(interactions, "w", encoding="utf-8") as fh:
        for row in _dataset_to_tsv_rows(dataset):
            fh.write(row + "\n")
    vocab_file = out_dir / "behaviors.txt"
    vocab_file.write_text(
        "\n".join(dataset.behavior_vocab.names) + "\n", encoding="utf-8"
    )
    print(f"wrote {interactions} and {vocab_file}")
    return 0


def cmd_augment(args) -> int:
    cfg = _load_config(args)
    dataset = _resolve_dataset(cfg)
    splits = leave_one_out_split(dataset)
    stats = compute_behavior_stats(splits.train)
    aug_cfg = cfg.augment_config()
    aug_cfg = dataclasses.replace(aug_cfg, seed=args.seed if args.seed is not None else aug_cfg.seed)
    vocab = dataset.behavior_vocab
    out = Path(args.out) if args.out else _run_dir(cfg) / "augmented.tsv"
    rng = np.random.default_rng(aug_cfg.seed)
    with open(out, "w", encoding="utf-8") as fh:
        for user, history in enumerate(dataset.interactions):
            seq = truncate_pad(history, len(history), user=user)
            aug = augment_sequence(seq, aug_cfg, stats, vocab.aux_index, rng)
            for position in range(len(history)):
                names = ",".join(vocab.decode(aug.behaviors[position]))
                fh.write(
                    f"{dataset.user_ids[user]}\t{dataset.item_ids[int(aug.items[position])]}"
                    f"\t{position}\t{names}\n"
                )
    print(f"wrote {out}")
    return 0


def _run_training(cfg: RunConfig, run_dir: Path):
    dataset = _resolve_dataset(cfg)
    log_path = run_dir / "train.log"
    with open(log_path, "w", encoding="utf-8") as log_fh:

        def log_fn(record: dict):
            log_fh.write(json.dumps(record, sort_keys=True) + "\n")
            log_fh.flush()

        result = train(
            dataset,
            cfg.encoder_config(),
            cfg.loss_config(),
            cfg.train_config(),
            cfg.augment_config(),
            checkpoint_path=run_dir / "checkpoint.blade",
            log_fn=log_fn,
        )
    return dataset, result


def cmd_train(args) -> int:
    cfg = _load_config(args)
    run_dir = _run_dir(cfg)
    _, result = _run_training(cfg, run_dir)
    print(f"best_epoch\t{result.best_epoch}")
    print(f"best_valid_ndcg10\t{result.best_ndcg10:.6f}")
    print(f"checkpoint\t{run_dir / 'checkpoint.blade'}")
    print(f"log\t{run_dir / 'train.log'}")
    return 0


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    run_dir = _run_dir(cfg)
    ckpt = Path(args.checkpoint) if args.checkpoint else run_dir / "checkpoint.blade"
    if not ckpt.exists():
        raise ConfigError(f"checkpoint not found: {ckpt}")
    model, _ = load_checkpoint(ckpt)
    dataset = _resolve_dataset(cfg)
    splits = leave_one_out_split(dataset)
    view = splits.test if args.split == "test" else splits.valid
    vocab = dataset.behavior_vocab
    if args.tail_behaviors:
        tail_idx = tuple(
            vocab.index(name) for name in args.tail_behaviors.split(",") if name
        )
    else:
        # config-declared tail behaviors are advisory: skip names this
        # vocabulary does not have rather than failing the whole run
        tail_idx = tuple(
            vocab.index(name)
            for name in cfg["eval.tail_behaviors"]
            if name in vocab.names
        )
    threshold = (
        args.tail_threshold
        if args.tail_threshold is not None
        else cfg["eval.tail_threshold"]
    )
    report = evaluate(
        model,
        view,
        ks=tuple(cfg["eval.ks"]),
        exclude_history=cfg["eval.exclude_history"],
        aux_only_conditioning=cfg["eval.conditioning"] == "aux",
        tail_behaviors=tail_idx,
        tail_threshold=threshold,
        tail_occurrence_level=cfg["eval.occurrence_level"],
    )
    text = report_to_tsv(report)
    out = run_dir / "metrics.tsv"
    out.write_text(text, encoding="utf-8")
    print(text, end="")
    for group, k, hr, ndcg in report.as_rows():
        print(f"{group}.hr@{k}={hr:.6f}")
        print(f"{group}.ndcg@{k}={ndcg:.6f}")
    print(f"count={report.count}")
    return 0


def cmd_gradcheck(args) -> int:
    cfg = _load_config(args)
    probe_data = generate_synthetic(
        SyntheticConfig(n_users=12, n_items=30, min_len=4, max_len=8, n_clusters=3),
        seed=cfg["train.seed"],
    )
    enc = dataclasses.replace(
        cfg.encoder_config(),
        d=args.d,
        L=args.L,
        blocks=1,
        heads=args.heads,
        experts=args.experts,
        dropout=0.0,
    )
    model, loss_fn = make_gradcheck_probe(
        probe_data, enc, cfg.loss_config(), cfg.augment_config(), seed=cfg["train.seed"]
    )
    report = gradient_check(model, loss_fn, eps=args.eps, seed=cfg["train.seed"])
    for group in sorted(report):
        print(f"{group}\t{report[group]:.3e}")
    check_gradients_or_raise(report, tolerance=args.tolerance)
    print("gradient check passed")
    return 0


def cmd_ablate(args) -> int:
    cfg = _load_config(args)
    flags = [f.strip() for f in args.flags.split(",") if f.strip()]
    if not flags:
        raise ConfigError("--flags needs at least one ablation flag")
    rows = []
    for flag in flags:
        flag_cfg = load_run_config(
            args.config,
            list(args.set or [])
            + ([] if flag == "full" else [f"train.{flag}=true"]),
        )
        run_dir = _run_dir(flag_cfg)
        dataset, result = _run_training(flag_cfg, run_dir)
        report = evaluate(result.model, result.splits.test, ks=(5, 10))
        n_trainable = len(trainable_parameter_names(result.model))
        rows.append((flag, report, n_trainable, run_dir))
    print("variant\tndcg@5\thr@5\tndcg@10\thr@10\ttrainable_tensors")
    for flag, report, n_trainable, _ in rows:
        print(
            f"{flag}\t{report.ndcg[5]:.4f}\t{report.hr[5]:.4f}"
            f"\t{report.ndcg[10]:.4f}\t{report.hr[10]:.4f}\t{n_trainable}"
        )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="blade-rec",
        description="Behavior-set sequential recommender pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="run configuration file")
        p.add_argument(
            "--set",
            action="append",
            metavar="KEY=VALUE",
            help="override a config value (repeatable)",
        )

    p = sub.add_parser("ingest", help="validate and summarize a dataset")
    common(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("stats", help="export behavior co-occurrence statistics")
    common(p)
    p.add_argument("--out", help="output TSV path")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    common(p)
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("augment", help="write augmented behavior sequences")
    common(p)
    p.add_argument("--method", choices=("cooccur_add", "freq_mask", "aux_flip", "none"))
    p.add_argument("--rho", type=float)
    p.add_argument("--c", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output TSV path")
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("train", help="train a model")
    common(p)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--split", choices=("valid", "test"), default="test")
    p.add_argument("--tail-behaviors", help="comma-separated tail behavior names")
    p.add_argument("--tail-threshold", type=float)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    common(p)
    p.add_argument("--d", type=int, default=8)
    p.add_argument("--L", type=int, default=6)
    p.add_argument("--heads", type=int, default=2)
    p.add_argument("--experts", type=int, default=2)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("ablate", help="train and compare ablation variants")
    common(p)
    p.add_argument("--flags", required=True, help="comma list, e.g. no_cl,no_brw")
    p.set_defaults(func=cmd_ablate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args.extra_overrides = []
    if getattr(args, "command", "") == "train" and args.seed is not None:
        args.extra_overrides.append(f"train.seed={args.seed}")
    if getattr(args, "command", "") == "augment":
        if args.method:
            args.extra_overrides.append(f"augment.method={args.method}")
        if args.rho is not None:
            args.extra_overrides.append(f"augment.rho={args.rho}")
        if args.c is not None:
            args.extra_overrides.append(f"augment.c={args.c}")
    try:
        return args.func(args)
    except (ConfigError, DataError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (RuntimeError, ValueError, GradientCheckError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
