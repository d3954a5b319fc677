"""Joint pre-training: codeword classification plus representation
regression, optimized with Adam, with the target encoder trailing the
visible encoder by exponential moving average.

Per step: featurize -> mask -> encode visible -> cross-encode masked
queries -> tokenize the *uncorrupted* masked content rows into targets ->
total loss = alpha * classification + beta * regression -> Adam step on
the online parameters -> EMA update of the target encoder.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import RunConfig
from .data import TimeSeriesBatch, batches
from .encoder import decoupled_encode, ema_update, target_encode, visible_encode
from .errors import DimensionError, DivergenceError
from .featurizer import add_positions, conv_project, pad_and_slice
from .masking import MaskPlan, masked_queries, sample_mask_plan, split
from .model import ModelState, restore_parameters, snapshot_parameters
from .rng import DROPOUT, GUMBEL, MASK, derive_seed, substream
from .tokenizer import quantize, similarity, usage_perplexity


@dataclass
class LossReport:
    epoch: int
    step: int
    l_cls: float
    l_align: float
    l_total: float
    perplexity: float

    def as_record(self) -> dict:
        return {
            "kind": "loss",
            "epoch": self.epoch,
            "step": self.step,
            "l_cls": self.l_cls,
            "l_align": self.l_align,
            "l_total": self.l_total,
            "perplexity": self.perplexity,
        }


@dataclass
class EpochSummary:
    epoch: int
    mean_total: float
    mean_cls: float
    mean_align: float
    usage_counts: np.ndarray

    @property
    def perplexity(self) -> float:
        return usage_perplexity(self.usage_counts)


def mcc_loss(f_out: Tensor, codebook, targets: Tensor) -> Tensor:
    """Mean cross-entropy of codeword predictions at masked slots.

    Logits are inner products of the cross-encoder outputs with the
    codewords (no decoder head). ``targets`` is the straight-through
    assignment, so gradient reaches the codebook and the featurizer
    through both the logits and the target side.
    """
    b, s_m, d = f_out.shape
    flat = ad.reshape(f_out, (b * s_m, d))
    logits = similarity(flat, codebook)
    if targets.shape != logits.shape:
        raise DimensionError(
            f"targets shaped {targets.shape} do not match logits {logits.shape}"
        )
    return ad.cross_entropy(logits, targets)


def mrr_loss(f_out: Tensor, target_reps: Tensor) -> Tensor:
    """Mean squared alignment between predicted and target representations."""
    return ad.mse(f_out, target_reps)


# -- optimizer ---------------------------------------------------------------


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_adam(params: dict[str, Tensor]) -> AdamState:
    state = AdamState()
    for name, p in params.items():
        state.m[name] = np.zeros_like(p.data)
        state.v[name] = np.zeros_like(p.data)
    return state


def adam_step(params: dict[str, Tensor], opt: AdamState, lr: float) -> None:
    """One bias-corrected Adam update; absent gradients count as zero."""
    opt.t += 1
    c1 = 1.0 - opt.beta1**opt.t
    c2 = 1.0 - opt.beta2**opt.t
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        opt.m[name] = opt.beta1 * opt.m[name] + (1.0 - opt.beta1) * g
        opt.v[name] = opt.beta2 * opt.v[name] + (1.0 - opt.beta2) * (g * g)
        m_hat = opt.m[name] / c1
        v_hat = opt.v[name] / c2
        p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + opt.eps)


def clip_gradients(params: dict[str, Tensor], max_norm: float) -> None:
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float((p.grad.astype(np.float64) ** 2).sum())
    norm = total**0.5
    if norm > max_norm > 0.0:
        scale = max_norm / norm
        for p in params.values():
            if p.grad is not None:
                p.grad = p.grad * np.float32(scale)


# -- one training step --------------------------------------------------------


@dataclass
class StepDetails:
    """Intermediate tensors exposed for verification."""

    plan: MaskPlan
    content_rows: Tensor  # pre-position masked content rows fed to the tokenizer
    visible_out: Tensor
    decoded: Tensor
    target_reps: Tensor
    l_cls: Tensor
    l_align: Tensor
    l_total: Tensor
    usage: np.ndarray


def forward_losses(
    data: np.ndarray,
    state: ModelState,
    cfg: RunConfig,
    epoch: int,
    step: int,
    train: bool = True,
) -> StepDetails:
    b = data.shape[0]
    drop_rng = substream(cfg.seed, DROPOUT, epoch, step) if train else None
    gumbel_rng = substream(cfg.seed, GUMBEL, epoch, step) if train else None

    slices = pad_and_slice(data, state.slice_cfg)
    content = conv_project(slices, state.featurizer)
    seq = add_positions(content, state.positions)
    s = seq.z.shape[1]

    plan = sample_mask_plan(b, s, cfg.mask_ratio, derive_seed(cfg.seed, MASK, epoch, step))
    z_v, _, _, _ = split(seq, plan)
    queries = masked_queries(plan, state.z_mask, state.positions)

    visible_out = visible_encode(
        z_v, state.visible, dropout_rate=cfg.dropout, train=train, rng=drop_rng
    )
    decoded = decoupled_encode(
        queries, visible_out, state.decoupled,
        dropout_rate=cfg.dropout, train=train, rng=drop_rng,
    )

    # discrete targets come from the true content of the masked slots,
    # before positions are added, so codewords describe shape not index
    content_rows = ad.gather_rows(content.z, plan.masked)
    flat_rows = ad.reshape(content_rows, (b * plan.n_masked, cfg.d_model))
    assignment, usage = quantize(flat_rows, state.codebook, cfg.tau, gumbel_rng)
    l_cls = mcc_loss(decoded, state.codebook, assignment.ste)

    # continuous targets: the momentum encoder sees the uncorrupted
    # sequence (full context by default) and its masked rows are read out
    if cfg.target_context == "full":
        target_full = target_encode(seq.z, state.target)
        target_reps = ad.gather_rows(target_full, plan.masked)
    else:
        masked_in = ad.gather_rows(seq.z, plan.masked)
        target_reps = target_encode(masked_in, state.target)
    l_align = mrr_loss(decoded, target_reps)

    l_total = ad.add(ad.mul(l_cls, float(cfg.alpha)), ad.mul(l_align, float(cfg.beta)))
    return StepDetails(
        plan=plan,
        content_rows=content_rows,
        visible_out=visible_out,
        decoded=decoded,
        target_reps=target_reps,
        l_cls=l_cls,
        l_align=l_align,
        l_total=l_total,
        usage=usage,
    )


def _train_step(
    batch: TimeSeriesBatch,
    state: ModelState,
    cfg: RunConfig,
    opt: AdamState,
    epoch: int,
    step: int,
) -> tuple[LossReport, np.ndarray]:
    details = forward_losses(batch.data, state, cfg, epoch, step, train=True)
    if not np.isfinite(details.l_total.data):
        raise DivergenceError(
            f"non-finite loss at epoch {epoch} step {step}: "
            f"cls={details.l_cls.item()!r} align={details.l_align.item()!r}"
        )
    state.zero_grads()
    ad.backward(details.l_total)
    online = state.online_parameters()
    if cfg.grad_clip > 0.0:
        clip_gradients(online, cfg.grad_clip)
    adam_step(online, opt, cfg.lr)
    ema_update(state.target, state.visible, cfg.eta)
    report = LossReport(
        epoch=epoch,
        step=step,
        l_cls=details.l_cls.item(),
        l_align=details.l_align.item(),
        l_total=details.l_total.item(),
        perplexity=usage_perplexity(details.usage),
    )
    return report, details.usage


def pretrain_step(
    batch: TimeSeriesBatch,
    state: ModelState,
    cfg: RunConfig,
    opt: AdamState,
    epoch: int,
    step: int,
) -> LossReport:
    """One optimization step; mutates ``state`` and ``opt``."""
    report, _ = _train_step(batch, state, cfg, opt, epoch, step)
    return report


@dataclass
class PretrainResult:
    state: ModelState
    reports: list[LossReport]
    epochs: list[EpochSummary]


def pretrain_loop(
    dataset: TimeSeriesBatch,
    cfg: RunConfig,
    state: Optional[ModelState] = None,
    on_report: Optional[Callable[[LossReport], None]] = None,
) -> PretrainResult:
    """Run ``cfg.epochs`` epochs with per-epoch reshuffling and remasking.

    If a step produces a non-finite loss the parameters are rolled back to
    the last finished epoch and the DivergenceError propagates; the caller
    decides what to do with the rolled-back state.
    """
    if dataset.n_examples == 0:
        raise DivergenceError("cannot pre-train on an empty dataset")
    if state is None:
        from .model import init_model

        state = init_model(cfg, dataset.length, dataset.n_channels)
    state.check_batch(dataset.n_channels, dataset.length)

    opt = init_adam(state.online_parameters())
    reports: list[LossReport] = []
    summaries: list[EpochSummary] = []
    last_good = snapshot_parameters(state)
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        totals, clss, aligns = [], [], []
        usage = np.zeros(cfg.codebook_size, dtype=np.int64)
        shuffle_seed = derive_seed(cfg.seed, epoch)
        try:
            for batch in batches(dataset, cfg.batch_size, shuffle_seed):
                report, step_usage = _train_step(batch, state, cfg, opt, epoch, step)
                reports.append(report)
                if on_report is not None:
                    on_report(report)
                totals.append(report.l_total)
                clss.append(report.l_cls)
                aligns.append(report.l_align)
                usage += step_usage
                step += 1
        except DivergenceError:
            restore_parameters(state, last_good)
            raise
        summaries.append(
            EpochSummary(
                epoch=epoch,
                mean_total=float(np.mean(totals)),
                mean_cls=float(np.mean(clss)),
                mean_align=float(np.mean(aligns)),
                usage_counts=usage,
            )
        )
        last_good = snapshot_parameters(state)
    return PretrainResult(state=state, reports=reports, epochs=summaries)
