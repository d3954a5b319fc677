"""Random visible/masked partitions over slice positions.

Each example gets its own uniformly random masked subset, resampled every
epoch; the masked count is round-half-up of ratio * S, clamped to
[1, S - 1] so both encoder paths always have input.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ContractError
from .featurizer import EmbeddedSequence
from .rng import substream


@dataclass(frozen=True)
class MaskPlan:
    """Per-example index partition; rows of ``masked``/``visible`` are sorted."""

    masked: np.ndarray  # [B, S_m] int
    visible: np.ndarray  # [B, S_v] int
    ratio: float
    n_positions: int

    @property
    def n_masked(self) -> int:
        return self.masked.shape[1]

    @property
    def n_visible(self) -> int:
        return self.visible.shape[1]


def masked_count(n_positions: int, ratio: float) -> int:
    """Round-half-up of ratio * S, clamped so neither side is empty."""
    return min(max(int(math.floor(ratio * n_positions + 0.5)), 1), n_positions - 1)


def sample_mask_plan(
    n_examples: int, n_positions: int, ratio: float, epoch_seed: int
) -> MaskPlan:
    """Independent uniform subsets per example, deterministic under
    (epoch_seed, example index)."""
    if not 0.0 < ratio < 1.0:
        raise ConfigError(f"mask ratio must be in (0, 1), got {ratio}")
    if n_positions < 2:
        raise ContractError(
            f"cannot split {n_positions} position(s) into visible and masked sets"
        )
    k = masked_count(n_positions, ratio)
    masked = np.empty((n_examples, k), dtype=np.int64)
    visible = np.empty((n_examples, n_positions - k), dtype=np.int64)
    for i in range(n_examples):
        perm = substream(epoch_seed, i).permutation(n_positions)
        masked[i] = np.sort(perm[:k])
        visible[i] = np.sort(perm[k:])
    return MaskPlan(masked=masked, visible=visible, ratio=ratio, n_positions=n_positions)


def split(
    seq: EmbeddedSequence, plan: MaskPlan
) -> tuple[Tensor, Tensor, Tensor, Tensor]:
    """Gather (Z_v, Z_m, pos_v, pos_m) rows according to the plan.

    Z_m keeps the true content-plus-position embeddings of masked slots
    (the regression side needs them); the positional rows come from the
    table rows recorded by add_positions.
    """
    if plan.n_positions != seq.z.shape[1]:
        raise ContractError(
            f"plan covers {plan.n_positions} positions, sequence has {seq.z.shape[1]}"
        )
    if not seq.positions_added or seq.positions is None:
        raise ContractError("split expects positional embeddings to be added first")
    z_v = ad.gather_rows(seq.z, plan.visible)
    z_m = ad.gather_rows(seq.z, plan.masked)
    pos_v = ad.embedding(seq.positions, plan.visible)
    pos_m = ad.embedding(seq.positions, plan.masked)
    return z_v, z_m, pos_v, pos_m


def masked_queries(plan: MaskPlan, z_mask: Tensor, table: Tensor) -> Tensor:
    """Query stream for masked slots: shared learned vector + positional row."""
    pos = ad.embedding(table, plan.masked)  # [B, S_m, d]
    return ad.add(pos, ad.reshape(z_mask, (1, 1, z_mask.shape[0])))
