"""Central finite-difference verification of analytic gradients.

The oracle never looks at an op's backward rule: it probes the forward
function coordinate by coordinate. Probes run in float64 (numpy promotes
the rest of the graph as the perturbed input flows through it) so the
difference quotient is accurate enough to judge a float32 backward pass.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from ..errors import ContractError, OracleError
from .tensor import Tensor, backward


def finite_diff_check(
    f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-3
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` must map a tensor to a scalar tensor and be deterministic
    (stochastic ops must be driven by a fixed seed inside ``f``); this is
    verified by evaluating twice. Relative error per coordinate is
    |analytic - numeric| / (|numeric| + 1e-8).
    """
    if eps <= 0:
        raise ContractError(f"finite_diff_check needs eps > 0, got {eps}")

    probe = Tensor(x.data.copy())
    y0 = f(probe)
    y1 = f(probe)
    if y0.data.size != 1:
        raise ContractError(f"f must return a scalar, got shape {y0.shape}")
    if not np.array_equal(y0.data, y1.data):
        raise OracleError("f is not deterministic under a fixed seed; oracle invalid")

    leaf = Tensor(x.data.copy(), requires_grad=True)
    loss = f(leaf)
    backward(loss)
    analytic = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
    analytic = np.asarray(analytic, dtype=np.float64)

    base = x.data.astype(np.float64)
    numeric = np.zeros_like(base)
    flat_base = base.reshape(-1)
    flat_num = numeric.reshape(-1)
    for i in range(flat_base.size):
        bumped = flat_base.copy()
        bumped[i] = flat_base[i] + eps
        hi = f(Tensor(bumped.reshape(base.shape))).item()
        bumped[i] = flat_base[i] - eps
        lo = f(Tensor(bumped.reshape(base.shape))).item()
        flat_num[i] = (hi - lo) / (2.0 * eps)

    rel = np.abs(analytic - numeric) / (np.abs(numeric) + 1e-8)
    return float(rel.max()) if rel.size else 0.0
