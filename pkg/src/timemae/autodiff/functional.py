"""Neural-network operations on top of the tensor core.

Everything here registers a backward rule through ``_make`` (directly or
by composing primitives), so the whole catalog is finite-difference
checkable.
"""

from __future__ import annotations

from typing import Optional, Union

import numpy as np
from scipy.special import erf

from ..errors import ConfigError, ContractError, DimensionError
from .tensor import Tensor, _make, as_tensor, matmul, mean, mul, neg, sum_

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def relu(a: Tensor) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0), (a,), lambda g: (g * mask,))


def gelu(a: Tensor) -> Tensor:
    """Exact Gaussian-error-linear unit, x * Phi(x)."""
    a = as_tensor(a)
    cdf = 0.5 * (1.0 + erf(a.data * _INV_SQRT2))
    out = a.data * cdf

    def bw(g):
        pdf = np.exp(-0.5 * a.data * a.data) * _INV_SQRT_2PI
        return (g * (cdf + a.data * pdf),)

    return _make(out, (a,), bw)


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis."""
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        return ((g - dot) * out,)

    return _make(out, (a,), bw)


def log_softmax(a: Tensor) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))

    def bw(g):
        return (g - np.exp(out) * g.sum(axis=-1, keepdims=True),)

    return _make(out, (a,), bw)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale-shift."""
    x = as_tensor(x)
    gain = as_tensor(gain)
    bias = as_tensor(bias)
    if gain.shape != (x.shape[-1],) or bias.shape != (x.shape[-1],):
        raise DimensionError(
            f"layer_norm params must be shaped ({x.shape[-1]},), got {gain.shape} and {bias.shape}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    var = ((x.data - mu) ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = gain.data * xhat + bias.data

    def bw(g):
        lead = tuple(range(g.ndim - 1))
        g_gain = (g * xhat).sum(axis=lead)
        g_bias = g.sum(axis=lead)
        gx_hat = g * gain.data
        gx = inv * (
            gx_hat
            - gx_hat.mean(axis=-1, keepdims=True)
            - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True)
        )
        return gx, g_gain, g_bias

    return _make(out, (x, gain, bias), bw)


def dropout(
    x: Tensor, rate: float, train: bool, rng: Optional[np.random.Generator] = None
) -> Tensor:
    """Inverted dropout; eval mode returns the input unchanged."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    x = as_tensor(x)
    if not train or rate == 0.0:
        return x
    if rng is None:
        raise ContractError("dropout in training mode needs an explicit rng")
    keep = (rng.random(x.shape) >= rate).astype(x.data.dtype) / (1.0 - rate)
    return _make(x.data * keep, (x,), lambda g: (g * keep,))


def affine(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """x @ weight + bias with [.., d_in] inputs; weight is [d_in, d_out]."""
    out = matmul(x, weight)
    if bias is not None:
        out = out + bias
    return out


def conv1d(x: Tensor, weight: Tensor, bias: Optional[Tensor], stride: int) -> Tensor:
    """1-D convolution over time. x [B, T, C_in], weight [K, C_in, C_out].

    Output length is (T - K) // stride + 1 (no implicit padding; callers
    pad beforehand). Implemented as window-gather + matmul so the backward
    rule is a scatter-add plus the usual matmul gradients.
    """
    x = as_tensor(x)
    weight = as_tensor(weight)
    if stride < 1:
        raise ConfigError(f"conv1d stride must be >= 1, got {stride}")
    if x.ndim != 3 or weight.ndim != 3:
        raise DimensionError(
            f"conv1d expects x [B,T,C] and weight [K,C,F], got {x.shape} and {weight.shape}"
        )
    k, c_in, c_out = weight.shape
    b_sz, t_len, x_c = x.shape
    if x_c != c_in:
        raise DimensionError(f"conv1d channels disagree: input {x_c} vs kernel {c_in}")
    if t_len < k:
        raise DimensionError(f"conv1d input length {t_len} shorter than kernel {k}")
    n_out = (t_len - k) // stride + 1
    widx = np.arange(n_out)[:, None] * stride + np.arange(k)[None, :]  # [L, K]

    cols = x.data[:, widx, :].reshape(b_sz, n_out, k * c_in)
    w_flat = weight.data.reshape(k * c_in, c_out)
    out = cols @ w_flat
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data

    def bw(g):
        g_cols = g @ w_flat.T  # [B, L, K*C_in]
        gx = np.zeros_like(x.data)
        np.add.at(gx, (slice(None), widx), g_cols.reshape(b_sz, n_out, k, c_in))
        gw = (cols.reshape(-1, k * c_in).T @ g.reshape(-1, c_out)).reshape(weight.shape)
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 1))

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(out, parents, bw)


def cross_entropy(logits: Tensor, targets: Union[Tensor, np.ndarray]) -> Tensor:
    """Mean cross-entropy from logits over the last axis.

    ``targets`` may be integer class indices (shape = logits.shape[:-1]) or
    a distribution over classes (same shape as logits, rows summing to 1).
    Distribution targets stay on the tape, so straight-through assignments
    used as targets propagate gradient.
    """
    logits = as_tensor(logits)
    k = logits.shape[-1]
    n_rows = int(np.prod(logits.shape[:-1], dtype=np.int64)) if logits.ndim > 1 else 1

    if not isinstance(targets, Tensor):
        t_arr = np.asarray(targets)
        if t_arr.dtype.kind in "iu":
            if t_arr.shape != logits.shape[:-1]:
                raise DimensionError(
                    f"index targets shaped {t_arr.shape} do not match logits {logits.shape}"
                )
            if t_arr.size and (t_arr.min() < 0 or t_arr.max() >= k):
                raise ContractError(f"target class out of range [0, {k})")
            onehot = np.zeros(logits.shape, dtype=logits.data.dtype)
            np.put_along_axis(onehot, t_arr[..., None], 1.0, axis=-1)
            targets = Tensor(onehot)
        else:
            targets = Tensor(t_arr)
    if targets.shape != logits.shape:
        raise DimensionError(
            f"distribution targets shaped {targets.shape} do not match logits {logits.shape}"
        )

    logp = log_softmax(logits)
    total = sum_(mul(targets, logp))
    return neg(total / float(n_rows))


def mse(a: Tensor, b: Tensor) -> Tensor:
    """Mean squared difference over all entries."""
    a = as_tensor(a)
    b = as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"mse shapes disagree: {a.shape} vs {b.shape}")
    diff = a - b
    return mean(mul(diff, diff))


def op_catalog() -> dict:
    """Every differentiable op with a registered backward rule, by name."""
    from . import tensor as t

    return {
        "add": t.add,
        "sub": t.sub,
        "mul": t.mul,
        "div": t.div,
        "neg": t.neg,
        "pow_const": t.pow_const,
        "exp": t.exp,
        "log": t.log,
        "sqrt": t.sqrt,
        "matmul": t.matmul,
        "reshape": t.reshape,
        "swapaxes": t.swapaxes,
        "concat": t.concat,
        "slice_axis": t.slice_axis,
        "gather_rows": t.gather_rows,
        "embedding": t.embedding,
        "sum": t.sum_,
        "mean": t.mean,
        "stop_gradient": t.stop_gradient,
        "straight_through": t.straight_through,
        "relu": relu,
        "gelu": gelu,
        "softmax": softmax,
        "log_softmax": log_softmax,
        "layer_norm": layer_norm,
        "dropout": dropout,
        "affine": affine,
        "conv1d": conv1d,
        "cross_entropy": cross_entropy,
        "mse": mse,
    }
