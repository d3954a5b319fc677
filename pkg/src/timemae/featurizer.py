"""Raw series -> sequences of sub-series embeddings.

A series of length T becomes S = ceil(T / sigma) non-overlapping windows
of sigma steps (zero-padded at the tail), each projected by one shared
affine map into d dimensions, with a learned per-index positional
embedding added afterwards. Kernel size equals stride, so no information
leaks across window boundaries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import TimeSeriesBatch
from .errors import ConfigError, ContractError, DimensionError


@dataclass(frozen=True)
class SliceConfig:
    sigma: int
    d_model: int

    def __post_init__(self):
        if self.sigma < 1:
            raise ConfigError(f"window size must be >= 1, got {self.sigma}")
        if self.d_model < 1:
            raise ConfigError(f"embedding size must be >= 1, got {self.d_model}")

    def n_slices(self, t_len: int) -> int:
        return math.ceil(t_len / self.sigma)


@dataclass
class ConvFeaturizer:
    """Shared window projection: weight [sigma, m, d], bias [d]."""

    weight: Tensor
    bias: Tensor

    @property
    def sigma(self) -> int:
        return self.weight.shape[0]

    @property
    def n_channels(self) -> int:
        return self.weight.shape[1]

    @property
    def d_model(self) -> int:
        return self.weight.shape[2]


def init_featurizer(cfg: SliceConfig, n_channels: int, rng: np.random.Generator) -> ConvFeaturizer:
    weight = ad.uniform_init(rng, (cfg.sigma, n_channels, cfg.d_model), fan_in=cfg.sigma * n_channels)
    return ConvFeaturizer(weight=weight, bias=ad.zeros_param((cfg.d_model,)))


@dataclass
class EmbeddedSequence:
    """Projected sub-series embeddings [B, S, d].

    ``positions`` holds the positional rows actually added ([S, d], still
    on the tape) once ``add_positions`` has run.
    """

    z: Tensor
    positions_added: bool = False
    positions: Optional[Tensor] = None


def pad_and_slice(
    batch: Union[TimeSeriesBatch, np.ndarray], cfg: SliceConfig
) -> np.ndarray:
    """[B, T, m] -> [B, S, sigma, m] windows; the tail window is zero-padded."""
    data = batch.data if isinstance(batch, TimeSeriesBatch) else np.asarray(batch)
    if data.ndim != 3:
        raise DimensionError(f"expected [B, T, m] input, got shape {data.shape}")
    b_sz, t_len, m = data.shape
    s = cfg.n_slices(t_len)
    padded = t_len if t_len % cfg.sigma == 0 else s * cfg.sigma
    if padded != t_len:
        out = np.zeros((b_sz, padded, m), dtype=data.dtype)
        out[:, :t_len] = data
    else:
        out = data
    return out.reshape(b_sz, s, cfg.sigma, m)


def unslice(slices: np.ndarray, t_len: int) -> np.ndarray:
    """Inverse of pad_and_slice: concatenate windows and drop tail padding."""
    b_sz, s, sigma, m = slices.shape
    return slices.reshape(b_sz, s * sigma, m)[:, :t_len]


def conv_project(slices: np.ndarray, feat: ConvFeaturizer) -> EmbeddedSequence:
    """Apply the shared projection to every window: [B,S,sigma,m] -> [B,S,d].

    Equivalent to a 1-D convolution with kernel = stride = sigma over the
    padded series; realized as a reshape + matmul since windows are
    disjoint.
    """
    if slices.ndim != 4:
        raise DimensionError(f"expected [B, S, sigma, m] windows, got {slices.shape}")
    b_sz, s, sigma, m = slices.shape
    if (sigma, m) != (feat.sigma, feat.n_channels):
        raise DimensionError(
            f"windows are ({sigma}, {m}) but projection expects "
            f"({feat.sigma}, {feat.n_channels})"
        )
    flat = Tensor(np.ascontiguousarray(slices).reshape(b_sz, s, sigma * m))
    w_flat = ad.reshape(feat.weight, (sigma * m, feat.d_model))
    z = ad.affine(flat, w_flat, feat.bias)
    return EmbeddedSequence(z=z, positions_added=False)


def add_positions(seq: EmbeddedSequence, table: Tensor) -> EmbeddedSequence:
    """Add one positional row per index; refuses to run twice."""
    if seq.positions_added:
        raise ContractError("positional embeddings were already added to this sequence")
    s = seq.z.shape[1]
    if s > table.shape[0]:
        raise DimensionError(
            f"sequence has {s} positions but the positional table holds {table.shape[0]}"
        )
    rows = ad.slice_axis(table, 0, 0, s)
    z = ad.add(seq.z, rows)
    return EmbeddedSequence(z=z, positions_added=True, positions=rows)
