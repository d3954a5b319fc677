"""Command-line interface.

Subcommands: pretrain, finetune, eval, export-embeddings, gen-synthetic,
inspect-ckpt. Metrics stream as JSON lines on stdout; logs go to stderr
(verbosity via the TIMEMAE_LOG env var). Exit codes: 0 ok, 2 usage,
3 data/format, 4 divergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional

import numpy as np

from .checkpoint import describe_checkpoint, load_checkpoint, save_checkpoint
from .config import RunConfig, parse_config_text, parse_set_args
from .data import (
    TimeSeriesBatch,
    load_binary,
    load_csv,
    make_synthetic,
    normalize,
    save_binary,
    stratified_split,
)
from .errors import (
    CompatibilityError,
    ConfigError,
    ContractError,
    CorruptionError,
    DataError,
    DivergenceError,
    FormatError,
)
from .finetune import evaluate, finetune, pool_keep, pool_positions
from .finetune import encode_full
from .model import ModelState, init_model
from .pretrain import pretrain_loop

log = logging.getLogger("timemae")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_DIVERGENCE = 4


def _setup_logging() -> None:
    level = os.environ.get("TIMEMAE_LOG", "warning").upper()
    logging.basicConfig(
        stream=sys.stderr,
        level=getattr(logging, level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
    )


def _emit(record: dict, metrics_fh=None) -> None:
    line = json.dumps(record, sort_keys=True)
    print(line)
    if metrics_fh is not None:
        metrics_fh.write(line + "\n")


def _load_dataset(path: str) -> tuple[TimeSeriesBatch, Optional[int]]:
    """Load TSB1 or CSV by extension; returns (batch, n_classes or None)."""
    if not path:
        raise ConfigError("no dataset given; pass --data or set data= in the config")
    if path.endswith(".csv"):
        batch = load_csv(path)
        n_classes = int(batch.labels.max()) + 1 if batch.labels is not None else None
        return batch, n_classes
    batch, header = load_binary(path)
    return batch, header.n_classes


# keys pinned by a checkpoint's weights; conflicting overrides are rejected
ARCH_KEYS = (
    "sigma", "d_model", "heads", "depth_visible", "depth_decoupled",
    "codebook_size", "max_positions",
)


def _gather_overrides(args) -> dict[str, str]:
    overrides: dict[str, str] = {}
    if getattr(args, "config", None):
        overrides.update(parse_config_text(Path(args.config).read_text()))
    if getattr(args, "set", None):
        overrides.update(parse_set_args(args.set))
    return overrides


def _apply_flags(cfg: RunConfig, args) -> RunConfig:
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "deterministic", False):
        cfg.deterministic = True
    for key in ("data", "test", "ckpt", "out", "mode"):
        value = getattr(args, key, None)
        if value:
            setattr(cfg, key, value)
    return cfg


def _config_from_args(args) -> RunConfig:
    cfg = RunConfig()
    cfg.apply(_gather_overrides(args))
    return _apply_flags(cfg, args).validate()


def _rebase_on_echo(state: ModelState, args) -> RunConfig:
    """Config for running against a checkpoint: the echo supplies defaults,
    current overrides win for run policy, and architecture keys must agree."""
    echo = state.cfg
    merged = replace(echo)
    merged.apply(_gather_overrides(args))
    _apply_flags(merged, args)
    for key in ARCH_KEYS:
        if getattr(merged, key) != getattr(echo, key):
            raise CompatibilityError(
                f"{key}: checkpoint was built with {getattr(echo, key)}, "
                f"override asks for {getattr(merged, key)}"
            )
    merged.validate()
    state.cfg = merged
    return merged


def _open_metrics(cfg: RunConfig):
    return open(cfg.metrics_file, "w") if cfg.metrics_file else None


def cmd_pretrain(args) -> int:
    cfg = _config_from_args(args)
    train, _ = _load_dataset(cfg.data)
    train = normalize(train, cfg.normalize)
    out_path = cfg.out or "model.ckpt"
    metrics_fh = _open_metrics(cfg)
    state = init_model(cfg, train.length, train.n_channels)
    try:
        result = pretrain_loop(
            train, cfg, state=state,
            on_report=lambda r: _emit(r.as_record(), metrics_fh),
        )
    except DivergenceError as e:
        # the loop already rolled parameters back to the last finished epoch
        save_checkpoint(out_path, state)
        log.error("diverged: %s (last good checkpoint written to %s)", e, out_path)
        print(json.dumps({"kind": "divergence", "error": str(e), "ckpt": out_path}))
        if metrics_fh:
            metrics_fh.close()
        return EXIT_DIVERGENCE
    save_checkpoint(out_path, result.state)
    last = result.epochs[-1]
    _emit(
        {
            "kind": "pretrain_summary",
            "epochs": len(result.epochs),
            "steps": len(result.reports),
            "final_mean_total": last.mean_total,
            "final_mean_cls": last.mean_cls,
            "final_mean_align": last.mean_align,
            "final_epoch_perplexity": last.perplexity,
            "ckpt": out_path,
        },
        metrics_fh,
    )
    if metrics_fh:
        metrics_fh.close()
    return EXIT_OK


def cmd_finetune(args) -> int:
    cfg = _config_from_args(args)
    train, n_classes = _load_dataset(cfg.data)
    train = normalize(train, cfg.normalize)
    if train.labels is None:
        raise DataError("fine-tuning requires labeled training data")
    if n_classes is None:
        n_classes = int(train.labels.max()) + 1
    test = None
    if cfg.test:
        test, _ = _load_dataset(cfg.test)
        test = normalize(test, cfg.normalize)
    if cfg.ckpt and cfg.ckpt != "random":
        state = load_checkpoint(cfg.ckpt)
        cfg = _rebase_on_echo(state, args)
    else:
        # "random": an untrained model, the from-scratch baseline with slicing
        state = init_model(cfg, train.length, train.n_channels)
    state, report = finetune(cfg.mode, state, train, cfg, test_set=test, n_classes=n_classes)
    if cfg.out:
        save_checkpoint(cfg.out, state)
    if report is not None:
        _emit(report.as_record())
    else:
        train_report = evaluate(state, train)
        train_report.mode = cfg.mode
        _emit({**train_report.as_record(), "split": "train"})
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _config_from_args(args)
    if not cfg.ckpt or cfg.ckpt == "random":
        raise ConfigError("eval requires --ckpt pointing at a fine-tuned checkpoint")
    state = load_checkpoint(cfg.ckpt)
    cfg = _rebase_on_echo(state, args)
    if state.head is None:
        raise CompatibilityError("checkpoint has no classifier head; fine-tune first")
    test, _ = _load_dataset(cfg.test or cfg.data)
    test = normalize(test, cfg.normalize)
    report = evaluate(state, test)
    report.mode = state.cfg.mode
    _emit(report.as_record())
    return EXIT_OK


def cmd_export_embeddings(args) -> int:
    cfg = _config_from_args(args)
    if not cfg.ckpt:
        raise ConfigError("export-embeddings requires --ckpt")
    if cfg.ckpt != "random":
        state = load_checkpoint(cfg.ckpt)
        cfg = _rebase_on_echo(state, args)
    else:
        state = None
    data, _ = _load_dataset(cfg.data)
    data = normalize(data, cfg.normalize)
    if state is None:
        state = init_model(cfg, data.length, data.n_channels)
    reps = encode_full(data, state, train=False)
    pooled = pool_positions(reps, pool_keep(state, data.length)).data
    out_path = cfg.out or "embeddings.csv"
    labels = data.labels if data.labels is not None else np.full(len(pooled), -1)
    with open(out_path, "w") as fh:
        for label, row in zip(labels, pooled):
            fh.write(",".join([str(int(label))] + [repr(float(v)) for v in row]) + "\n")
    _emit({"kind": "export", "rows": len(pooled), "columns": 1 + pooled.shape[1], "path": out_path})
    return EXIT_OK


def cmd_gen_synthetic(args) -> int:
    cfg = _config_from_args(args)
    batch = make_synthetic(args.per_class, args.classes, args.length, args.channels, cfg.seed)
    train, test = stratified_split(batch, args.test_fraction, cfg.seed)
    out_dir = Path(cfg.out or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    train_path = out_dir / "train.tsb"
    test_path = out_dir / "test.tsb"
    save_binary(train_path, train, args.classes)
    save_binary(test_path, test, args.classes)
    _emit(
        {
            "kind": "gen_synthetic",
            "train": str(train_path),
            "test": str(test_path),
            "train_examples": train.n_examples,
            "test_examples": test.n_examples,
        }
    )
    return EXIT_OK


def cmd_inspect_ckpt(args) -> int:
    cfg = _config_from_args(args)
    if not cfg.ckpt:
        raise ConfigError("inspect-ckpt requires --ckpt")
    print(describe_checkpoint(cfg.ckpt))
    return EXIT_OK


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat key = value config file")
    parser.add_argument(
        "--set", action="append", metavar="KEY=VALUE", help="override a config key (repeatable)"
    )
    parser.add_argument("--data", help="training / input dataset (.tsb or .csv)")
    parser.add_argument("--test", help="held-out dataset (.tsb or .csv)")
    parser.add_argument("--ckpt", help="checkpoint path, or 'random' for a fresh model")
    parser.add_argument("--out", help="output path (checkpoint, CSV, or directory)")
    parser.add_argument("--seed", type=int, help="run seed")
    parser.add_argument("--deterministic", action="store_true", help="deterministic kernels")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="timemae",
        description="Masked time-series pre-training and downstream classification.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain", help="self-supervised pre-training")
    _add_common(p)
    p.set_defaults(fn=cmd_pretrain)

    p = sub.add_parser("finetune", help="downstream classification training")
    _add_common(p)
    p.add_argument("--mode", choices=("last", "all"), help="'last' freezes the encoder")
    p.set_defaults(fn=cmd_finetune)

    p = sub.add_parser("eval", help="evaluate a fine-tuned checkpoint")
    _add_common(p)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("export-embeddings", help="write pooled representations as CSV")
    _add_common(p)
    p.set_defaults(fn=cmd_export_embeddings)

    p = sub.add_parser("gen-synthetic", help="write synthetic train/test TSB1 files")
    _add_common(p)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--per-class", type=int, default=75, dest="per_class")
    p.add_argument("--length", type=int, default=64)
    p.add_argument("--channels", type=int, default=2)
    p.add_argument("--test-fraction", type=float, default=1.0 / 3.0, dest="test_fraction")
    p.set_defaults(fn=cmd_gen_synthetic)

    p = sub.add_parser("inspect-ckpt", help="print checkpoint contents")
    _add_common(p)
    p.set_defaults(fn=cmd_inspect_ckpt)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, CorruptionError, DataError, CompatibilityError, ContractError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except DivergenceError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
