"""The three encoders: visible self-attention stack, decoupled
cross-attention stack over masked queries, and the momentum target copy.

Blocks are pre-norm: x + Drop(Attn(LN(x))), then x + Drop(FF(LN(x))).
In the cross-attention stack only the query stream evolves; keys and
values are re-projected from the fixed visible output at every layer, so
the visible representations are never written to.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, DimensionError


@dataclass
class EncoderLayer:
    ln1_gain: Tensor
    ln1_bias: Tensor
    w_q: Tensor
    b_q: Tensor
    w_k: Tensor
    b_k: Tensor
    w_v: Tensor
    b_v: Tensor
    w_o: Tensor
    b_o: Tensor
    ln2_gain: Tensor
    ln2_bias: Tensor
    w_ff1: Tensor
    b_ff1: Tensor
    w_ff2: Tensor
    b_ff2: Tensor

    def named(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.{f.name}": getattr(self, f.name) for f in fields(self)}


@dataclass
class EncoderParams:
    layers: list[EncoderLayer]
    heads: int

    @property
    def depth(self) -> int:
        return len(self.layers)

    def named(self, prefix: str) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for i, layer in enumerate(self.layers):
            out.update(layer.named(f"{prefix}.{i}"))
        return out


def init_encoder(
    depth: int,
    d_model: int,
    heads: int,
    ff_width: int,
    rng: np.random.Generator,
    requires_grad: bool = True,
) -> EncoderParams:
    if d_model % heads != 0:
        raise DimensionError(f"width {d_model} not divisible by {heads} heads")
    layers = []
    for _ in range(depth):
        layer = EncoderLayer(
            ln1_gain=ad.ones_param((d_model,)),
            ln1_bias=ad.zeros_param((d_model,)),
            w_q=ad.uniform_init(rng, (d_model, d_model), fan_in=d_model),
            b_q=ad.zeros_param((d_model,)),
            w_k=ad.uniform_init(rng, (d_model, d_model), fan_in=d_model),
            b_k=ad.zeros_param((d_model,)),
            w_v=ad.uniform_init(rng, (d_model, d_model), fan_in=d_model),
            b_v=ad.zeros_param((d_model,)),
            w_o=ad.uniform_init(rng, (d_model, d_model), fan_in=d_model),
            b_o=ad.zeros_param((d_model,)),
            ln2_gain=ad.ones_param((d_model,)),
            ln2_bias=ad.zeros_param((d_model,)),
            w_ff1=ad.uniform_init(rng, (d_model, ff_width), fan_in=d_model),
            b_ff1=ad.zeros_param((ff_width,)),
            w_ff2=ad.uniform_init(rng, (ff_width, d_model), fan_in=ff_width),
            b_ff2=ad.zeros_param((d_model,)),
        )
        if not requires_grad:
            for f in fields(layer):
                getattr(layer, f.name).requires_grad = False
        layers.append(layer)
    return EncoderParams(layers=layers, heads=heads)


def clone_encoder(params: EncoderParams, requires_grad: bool) -> EncoderParams:
    """Deep copy of all parameter arrays (used to spawn the target encoder)."""
    layers = []
    for layer in params.layers:
        layers.append(
            EncoderLayer(
                **{
                    f.name: Tensor(getattr(layer, f.name).data.copy(), requires_grad=requires_grad)
                    for f in fields(layer)
                }
            )
        )
    return EncoderParams(layers=layers, heads=params.heads)


def _split_heads(x: Tensor, heads: int) -> Tensor:
    b, s, d = x.shape
    return ad.swapaxes(ad.reshape(x, (b, s, heads, d // heads)), 1, 2)  # [B,h,S,dh]


def _merge_heads(x: Tensor) -> Tensor:
    b, h, s, dh = x.shape
    return ad.reshape(ad.swapaxes(x, 1, 2), (b, s, h * dh))


def _attention(
    queries: Tensor,
    kv_source: Tensor,
    layer: EncoderLayer,
    heads: int,
    dropout_rate: float,
    train: bool,
    rng: Optional[np.random.Generator],
) -> Tensor:
    d = queries.shape[-1]
    if d % heads != 0:
        raise DimensionError(f"width {d} not divisible by {heads} heads")
    q = _split_heads(ad.affine(queries, layer.w_q, layer.b_q), heads)
    k = _split_heads(ad.affine(kv_source, layer.w_k, layer.b_k), heads)
    v = _split_heads(ad.affine(kv_source, layer.w_v, layer.b_v), heads)
    scores = ad.matmul(q, ad.swapaxes(k, -1, -2)) * (1.0 / math.sqrt(d // heads))
    ctx = ad.matmul(ad.softmax(scores), v)
    out = ad.affine(_merge_heads(ctx), layer.w_o, layer.b_o)
    return ad.dropout(out, dropout_rate, train, rng)


def _feed_forward(
    x: Tensor,
    layer: EncoderLayer,
    dropout_rate: float,
    train: bool,
    rng: Optional[np.random.Generator],
) -> Tensor:
    h = ad.gelu(ad.affine(x, layer.w_ff1, layer.b_ff1))
    h = ad.affine(h, layer.w_ff2, layer.b_ff2)
    return ad.dropout(h, dropout_rate, train, rng)


def _block(
    x: Tensor,
    layer: EncoderLayer,
    heads: int,
    dropout_rate: float,
    train: bool,
    rng: Optional[np.random.Generator],
    cross_kv: Optional[Tensor] = None,
) -> Tensor:
    normed = ad.layer_norm(x, layer.ln1_gain, layer.ln1_bias)
    kv = cross_kv if cross_kv is not None else normed
    x = ad.add(x, _attention(normed, kv, layer, heads, dropout_rate, train, rng))
    normed2 = ad.layer_norm(x, layer.ln2_gain, layer.ln2_bias)
    return ad.add(x, _feed_forward(normed2, layer, dropout_rate, train, rng))


def visible_encode(
    z_v: Tensor,
    params: EncoderParams,
    dropout_rate: float = 0.0,
    train: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """Self-attention over visible positions only; depth 0 is the identity."""
    x = z_v
    for layer in params.layers:
        x = _block(x, layer, params.heads, dropout_rate, train, rng)
    return x


def decoupled_encode(
    queries: Tensor,
    visible_out: Tensor,
    params: EncoderParams,
    dropout_rate: float = 0.0,
    train: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """Cross-attention stack: the masked query stream attends to the fixed
    visible representations, which are re-projected (never updated) at
    every layer."""
    if visible_out.shape[1] == 0:
        raise ContractError("decoupled encoder has no visible context to attend to")
    x = queries
    for layer in params.layers:
        x = _block(x, layer, params.heads, dropout_rate, train, rng, cross_kv=visible_out)
    return x


def target_encode(z: Tensor, params: EncoderParams) -> Tensor:
    """Momentum-copy forward pass: eval mode, fully detached.

    The input is cut from the tape on entry and the output is wrapped in a
    stop-gradient, so no loss can push gradient into these parameters (they
    move only through ema_update) nor into the featurizer through this
    branch.
    """
    x = ad.stop_gradient(z)
    for layer in params.layers:
        x = _block(x, layer, params.heads, 0.0, False, None)
    return ad.stop_gradient(x)


def ema_update(target: EncoderParams, online: EncoderParams, momentum: float) -> None:
    """target <- momentum * target + (1 - momentum) * online, elementwise."""
    if not 0.0 <= momentum <= 1.0:
        raise ContractError(f"momentum must lie in [0, 1], got {momentum}")
    ema_update_tensors(target.named("t"), online.named("t"), momentum)


def ema_update_tensors(
    target: dict[str, Tensor], online: dict[str, Tensor], momentum: float
) -> None:
    if set(target) != set(online):
        raise ContractError("target and online parameter sets differ in structure")
    for name, tgt in target.items():
        src = online[name]
        if tgt.shape != src.shape:
            raise ContractError(
                f"parameter {name}: target shape {tgt.shape} vs online {src.shape}"
            )
        tgt.data = momentum * tgt.data + (1.0 - momentum) * src.data
