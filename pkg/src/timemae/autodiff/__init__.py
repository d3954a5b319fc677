"""Minimal dense-tensor core with reverse-mode autodiff."""

import numpy as np

from .functional import (
    affine,
    conv1d,
    cross_entropy,
    dropout,
    gelu,
    layer_norm,
    log_softmax,
    mse,
    op_catalog,
    relu,
    softmax,
)
from .gradcheck import finite_diff_check
from .tensor import (
    Tensor,
    add,
    as_tensor,
    backward,
    concat,
    div,
    embedding,
    exp,
    gather_rows,
    log,
    matmul,
    mean,
    mul,
    neg,
    pow_const,
    reshape,
    slice_axis,
    sqrt,
    stop_gradient,
    straight_through,
    sub,
    sum_,
    swapaxes,
)


def uniform_init(rng, shape, fan_in: int, dtype="float32") -> Tensor:
    """Weight init: uniform(-1/sqrt(fan_in), +1/sqrt(fan_in))."""
    bound = 1.0 / float(fan_in) ** 0.5
    data = rng.uniform(-bound, bound, size=shape).astype(dtype)
    return Tensor(data, requires_grad=True)


def zeros_param(shape, dtype="float32") -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


def ones_param(shape, dtype="float32") -> Tensor:
    return Tensor(np.ones(shape, dtype=dtype), requires_grad=True)
