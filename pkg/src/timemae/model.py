"""The full parameter set: featurizer, positional table, mask query vector,
the three encoders, codebook, and (after fine-tuning) a classifier head.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import RunConfig
from .encoder import EncoderParams, clone_encoder, init_encoder
from .errors import CompatibilityError
from .featurizer import ConvFeaturizer, SliceConfig, init_featurizer
from .rng import INIT, substream
from .tokenizer import Codebook, init_codebook


@dataclass
class ClassifierHead:
    """Linear map from pooled representations to class logits.

    Zero init makes the untrained head predict uniformly, which keeps
    frozen-encoder probes stable from the first step.
    """

    weight: Tensor  # [d, n_classes]
    bias: Tensor  # [n_classes]

    @property
    def n_classes(self) -> int:
        return self.weight.shape[1]


def init_head(d_model: int, n_classes: int) -> ClassifierHead:
    return ClassifierHead(
        weight=ad.zeros_param((d_model, n_classes)),
        bias=ad.zeros_param((n_classes,)),
    )


@dataclass
class ModelState:
    cfg: RunConfig
    featurizer: ConvFeaturizer
    positions: Tensor  # [S_max, d]
    z_mask: Tensor  # [d]
    visible: EncoderParams
    decoupled: EncoderParams
    target: EncoderParams
    codebook: Codebook
    head: Optional[ClassifierHead] = None

    @property
    def slice_cfg(self) -> SliceConfig:
        return SliceConfig(sigma=self.cfg.sigma, d_model=self.cfg.d_model)

    def named_parameters(self) -> dict[str, Tensor]:
        """Every parameter tensor, in a stable order."""
        out: dict[str, Tensor] = {
            "featurizer.weight": self.featurizer.weight,
            "featurizer.bias": self.featurizer.bias,
            "positions": self.positions,
            "z_mask": self.z_mask,
        }
        out.update(self.visible.named("visible"))
        out.update(self.decoupled.named("decoupled"))
        out.update(self.target.named("target"))
        out["codebook"] = self.codebook.vectors
        if self.head is not None:
            out["head.weight"] = self.head.weight
            out["head.bias"] = self.head.bias
        return out

    def online_parameters(self) -> dict[str, Tensor]:
        """Parameters the pre-training optimizer updates (target excluded)."""
        return {
            name: p
            for name, p in self.named_parameters().items()
            if not name.startswith("target.") and not name.startswith("head.")
        }

    def encoder_parameters(self) -> dict[str, Tensor]:
        """Everything a frozen-encoder probe must leave untouched."""
        return {
            name: p
            for name, p in self.named_parameters().items()
            if not name.startswith("head.")
        }

    def zero_grads(self) -> None:
        for p in self.named_parameters().values():
            p.grad = None

    def check_batch(self, n_channels: int, t_len: int) -> None:
        if n_channels != self.featurizer.n_channels:
            raise CompatibilityError(
                f"channels: model expects m={self.featurizer.n_channels}, data has m={n_channels}"
            )
        s = self.slice_cfg.n_slices(t_len)
        if s > self.positions.shape[0]:
            raise CompatibilityError(
                f"sequence length: data needs {s} positions (T={t_len}, sigma={self.cfg.sigma}), "
                f"positional table holds {self.positions.shape[0]}"
            )


def ff_width_for(d_model: int) -> int:
    # two-layer feed-forward with the usual 4x hidden width
    return 4 * d_model


def init_model(cfg: RunConfig, t_len: int, n_channels: int) -> ModelState:
    """Build a fresh model sized for series of length ``t_len`` with
    ``n_channels`` channels. The target encoder starts as an exact copy of
    the visible encoder."""
    rng = substream(cfg.seed, INIT)
    slice_cfg = SliceConfig(sigma=cfg.sigma, d_model=cfg.d_model)
    n_pos = max(slice_cfg.n_slices(t_len), cfg.max_positions)
    featurizer = init_featurizer(slice_cfg, n_channels, rng)
    positions = ad.uniform_init(rng, (n_pos, cfg.d_model), fan_in=cfg.d_model)
    z_mask = ad.uniform_init(rng, (cfg.d_model,), fan_in=cfg.d_model)
    ff = ff_width_for(cfg.d_model)
    visible = init_encoder(cfg.depth_visible, cfg.d_model, cfg.heads, ff, rng)
    decoupled = init_encoder(cfg.depth_decoupled, cfg.d_model, cfg.heads, ff, rng)
    target = clone_encoder(visible, requires_grad=False)
    codebook = init_codebook(cfg.codebook_size, cfg.d_model, rng)
    return ModelState(
        cfg=cfg,
        featurizer=featurizer,
        positions=positions,
        z_mask=z_mask,
        visible=visible,
        decoupled=decoupled,
        target=target,
        codebook=codebook,
    )


def snapshot_parameters(state: ModelState) -> dict[str, np.ndarray]:
    return {name: p.data.copy() for name, p in state.named_parameters().items()}


def restore_parameters(state: ModelState, snapshot: dict[str, np.ndarray]) -> None:
    params = state.named_parameters()
    for name, data in snapshot.items():
        params[name].data = data.copy()
