"""End-to-end codebook tokenizer.

Masked sub-series embeddings are scored against K learnable codewords by
inner product. During pre-training the scores get Gumbel noise and a
tempered softmax; the hard argmax of the noised scores is the
classification target, and a straight-through combination of hard and
soft assignments carries gradient back into both the codebook and the
embeddings. Evaluation uses the noise-free hard assignment.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ContractError, DimensionError


@dataclass
class Codebook:
    """K learnable codeword vectors; row indices are the vocabulary."""

    vectors: Tensor  # [K, d]

    def __post_init__(self):
        if self.vectors.ndim != 2 or self.vectors.shape[0] < 2:
            raise ConfigError(
                f"codebook needs at least 2 rows of vectors, got shape {self.vectors.shape}"
            )

    @property
    def size(self) -> int:
        return self.vectors.shape[0]

    @property
    def d_model(self) -> int:
        return self.vectors.shape[1]


def init_codebook(size: int, d_model: int, rng: np.random.Generator) -> Codebook:
    # rows ~ N(0, 1/d) keeps inner-product scores O(1) against unit-scale inputs
    rows = rng.normal(0.0, 1.0 / np.sqrt(d_model), size=(size, d_model)).astype(np.float32)
    return Codebook(vectors=Tensor(rows, requires_grad=True))


@dataclass
class AssignmentResult:
    indices: np.ndarray  # [N] chosen codeword ids
    hard: np.ndarray  # [N, K] one-hot of indices
    soft: Tensor  # [N, K] tempered softmax, on the tape
    ste: Tensor  # [N, K] forward == hard, backward == soft


def similarity(z_rows: Tensor, codebook: Codebook) -> Tensor:
    """Inner-product relevance scores [N, K]."""
    z_rows = ad.as_tensor(z_rows)
    if z_rows.shape[-1] != codebook.d_model:
        raise DimensionError(
            f"rows of width {z_rows.shape[-1]} scored against codewords of width {codebook.d_model}"
        )
    return ad.matmul(z_rows, ad.swapaxes(codebook.vectors, 0, 1))


def assign_hard(scores: np.ndarray) -> np.ndarray:
    """Argmax codeword per row; ties break to the lowest index."""
    scores = scores.data if isinstance(scores, Tensor) else np.asarray(scores)
    return np.argmax(scores, axis=-1)


def gumbel_noise(shape, rng: np.random.Generator, dtype=np.float32) -> np.ndarray:
    """n = -log(-log(a)), a ~ U(0, 1)."""
    a = rng.random(shape)
    return (-np.log(-np.log(a))).astype(dtype)


def gumbel_soft(
    scores: Tensor, tau: float, rng: Optional[np.random.Generator] = None
) -> Tensor:
    """Tempered softmax of (scores + noise) / tau; rng None disables noise."""
    if tau <= 0:
        raise ConfigError(f"temperature must be positive, got {tau}")
    scores = ad.as_tensor(scores)
    if rng is not None:
        scores = ad.add(scores, Tensor(gumbel_noise(scores.shape, rng, scores.data.dtype)))
    return ad.softmax(scores * (1.0 / tau))


def ste_combine(soft: Tensor, hard: np.ndarray) -> Tensor:
    """Straight-through assignment: hard values forward, soft gradient back."""
    return ad.straight_through(soft, hard)


def one_hot(indices: np.ndarray, size: int, dtype=np.float32) -> np.ndarray:
    out = np.zeros((len(indices), size), dtype=dtype)
    out[np.arange(len(indices)), indices] = 1.0
    return out


def quantize(
    z_rows: Tensor,
    codebook: Codebook,
    tau: float,
    rng: Optional[np.random.Generator] = None,
) -> tuple[AssignmentResult, np.ndarray]:
    """Assign a codeword to each row.

    With an rng, scores are perturbed once by Gumbel noise and both the
    hard targets and the soft distribution come from the same noised
    scores (a sample from the score softmax, which spreads codeword usage).
    Returns the assignment plus per-codeword usage counts.
    """
    if tau <= 0:
        raise ConfigError(f"temperature must be positive, got {tau}")
    scores = similarity(z_rows, codebook)
    if rng is not None:
        scores = ad.add(scores, Tensor(gumbel_noise(scores.shape, rng, scores.data.dtype)))
    soft = ad.softmax(scores * (1.0 / tau))
    indices = assign_hard(scores)
    hard = one_hot(indices, codebook.size, dtype=soft.data.dtype)
    ste = ste_combine(soft, hard)
    usage = np.bincount(indices, minlength=codebook.size)
    return AssignmentResult(indices=indices, hard=hard, soft=soft, ste=ste), usage


def usage_perplexity(usage_counts: np.ndarray) -> float:
    """exp(entropy) of the empirical codeword distribution, in [1, K]."""
    counts = np.asarray(usage_counts, dtype=np.float64)
    if counts.size == 0 or (counts < 0).any():
        raise ContractError("usage counts must be nonnegative")
    total = counts.sum()
    if total <= 0:
        raise ContractError("usage counts sum to zero; perplexity undefined")
    p = counts / total
    nz = p[p > 0]
    return float(np.exp(-(nz * np.log(nz)).sum()))
