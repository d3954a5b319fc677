"""Flat key=value run configuration.

One namespace covers pre-training hyperparameters, downstream settings,
and I/O paths, so a checkpoint's config echo is always enough to rerun
fine-tuning. Files hold ``key = value`` lines with ``#`` comments; the
CLI's repeatable ``--set key=value`` overrides file values.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Optional

from .errors import ConfigError


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass
class RunConfig:
    # featurizer / masking
    sigma: int = 8
    d_model: int = 64
    mask_ratio: float = 0.6
    max_positions: int = 0  # 0: size the positional table from the training data
    # encoders
    heads: int = 4
    depth_visible: int = 8
    depth_decoupled: int = 6
    dropout: float = 0.2
    # tokenizer
    codebook_size: int = 64
    tau: float = 1.0
    # momentum target / joint objective
    eta: float = 0.99
    alpha: float = 1.0
    beta: float = 1.0
    target_context: str = "full"  # or "masked": what the target encoder sees
    # optimization
    lr: float = 0.001
    batch_size: int = 64
    epochs: int = 100
    finetune_epochs: int = 40
    grad_clip: float = 0.0  # 0 disables clipping
    seed: int = 0
    deterministic: bool = False
    # data handling
    normalize: str = "none"
    pool_padded: bool = True  # mean-pool over tail positions that were zero padding
    # I/O (CLI flags override these)
    data: str = ""
    test: str = ""
    ckpt: str = ""
    out: str = ""
    mode: str = "last"  # finetune protocol: "last" freezes the encoder, "all" tunes it
    metrics_file: str = ""

    def validate(self) -> "RunConfig":
        checks = [
            (self.sigma >= 1, "sigma must be >= 1"),
            (self.d_model >= 1, "d_model must be >= 1"),
            (self.heads >= 1, "heads must be >= 1"),
            (self.d_model % self.heads == 0, "d_model must be divisible by heads"),
            (self.depth_visible >= 0, "depth_visible must be >= 0"),
            (self.depth_decoupled >= 1, "depth_decoupled must be >= 1"),
            (0.0 < self.mask_ratio < 1.0, "mask_ratio must be in (0, 1)"),
            (self.codebook_size >= 2, "codebook_size must be >= 2"),
            (self.tau > 0.0, "tau must be positive"),
            (0.0 <= self.eta <= 1.0, "eta must be in [0, 1]"),
            (self.lr > 0.0, "lr must be positive"),
            (self.batch_size >= 1, "batch_size must be >= 1"),
            (self.epochs >= 1, "epochs must be >= 1"),
            (self.finetune_epochs >= 1, "finetune_epochs must be >= 1"),
            (0.0 <= self.dropout < 1.0, "dropout must be in [0, 1)"),
            (self.grad_clip >= 0.0, "grad_clip must be >= 0"),
            (self.max_positions >= 0, "max_positions must be >= 0"),
            (self.normalize in ("none", "zscore"), "normalize must be 'none' or 'zscore'"),
            (self.target_context in ("full", "masked"),
             "target_context must be 'full' or 'masked'"),
            (self.mode in ("last", "all"), "mode must be 'last' or 'all'"),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigError(message)
        return self

    def apply(self, overrides: dict[str, str]) -> "RunConfig":
        """Set fields from raw strings, rejecting unknown keys."""
        known = {f.name: f.type for f in fields(self)}
        for key, raw in overrides.items():
            if key not in known:
                raise ConfigError(
                    f"unknown config key {key!r}; valid keys: {', '.join(sorted(known))}"
                )
            current = getattr(self, key)
            try:
                if isinstance(current, bool):
                    value = _parse_bool(raw)
                elif isinstance(current, int):
                    value = int(raw)
                elif isinstance(current, float):
                    value = float(raw)
                else:
                    value = raw.strip()
            except ValueError as e:
                raise ConfigError(f"bad value for {key}: {raw!r}") from e
            setattr(self, key, value)
        return self

    def to_text(self) -> str:
        lines = [f"{f.name} = {getattr(self, f.name)}" for f in fields(self)]
        return "\n".join(lines) + "\n"


def parse_config_text(text: str) -> dict[str, str]:
    """Parse ``key = value`` lines into a raw override mapping."""
    overrides: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = stripped.split("=", 1)
        overrides[key.strip()] = value.strip()
    return overrides


def parse_set_args(pairs: list[str]) -> dict[str, str]:
    """Parse repeated --set key=value arguments."""
    overrides: dict[str, str] = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        overrides[key.strip()] = value.strip()
    return overrides


def load_config(
    config_path: Optional[str] = None,
    set_args: Optional[list[str]] = None,
    base: Optional[RunConfig] = None,
) -> RunConfig:
    cfg = base if base is not None else RunConfig()
    if config_path:
        from pathlib import Path

        cfg.apply(parse_config_text(Path(config_path).read_text()))
    if set_args:
        cfg.apply(parse_set_args(set_args))
    return cfg.validate()
