"""Downstream classification: linear probe (frozen encoder) or full
fine-tuning, evaluated by accuracy and macro-averaged F1.

At this stage nothing is masked: the visible encoder processes every
slice, outputs are mean-pooled over positions, and a linear head maps the
pooled vector to class logits.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import RunConfig
from .data import TimeSeriesBatch, batches
from .encoder import visible_encode
from .errors import DataError
from .featurizer import add_positions, conv_project, pad_and_slice
from .model import ClassifierHead, ModelState, init_head
from .pretrain import adam_step, init_adam
from .rng import derive_seed, substream

FINETUNE = 6  # rng stream tag, distinct from the pretraining streams


@dataclass
class EvalReport:
    accuracy: float
    macro_f1: float
    per_class_precision: list[float]
    per_class_recall: list[float]
    per_class_f1: list[float]
    mode: str

    def as_record(self) -> dict:
        return {
            "kind": "eval_report",
            "mode": self.mode,
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "per_class_precision": self.per_class_precision,
            "per_class_recall": self.per_class_recall,
            "per_class_f1": self.per_class_f1,
        }


def encode_full(
    batch: TimeSeriesBatch,
    state: ModelState,
    train: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """Featurize and encode the complete slice sequence (no masking)."""
    state.check_batch(batch.n_channels, batch.length)
    slices = pad_and_slice(batch.data, state.slice_cfg)
    seq = add_positions(conv_project(slices, state.featurizer), state.positions)
    return visible_encode(
        seq.z, state.visible, dropout_rate=state.cfg.dropout, train=train, rng=rng
    )


def pool_positions(reps: Tensor, n_keep: Optional[int] = None) -> Tensor:
    """Mean over the position axis, optionally over the first n_keep only."""
    if n_keep is not None and n_keep < reps.shape[1]:
        reps = ad.slice_axis(reps, 1, 0, n_keep)
    return ad.mean(reps, axis=1)


def pool_and_classify(reps: Tensor, head: ClassifierHead) -> Tensor:
    """Mean-pool over positions, then the affine head: [B, S, d] -> [B, C]."""
    return ad.affine(pool_positions(reps), head.weight, head.bias)


def pool_keep(state: ModelState, t_len: int) -> Optional[int]:
    # with pooling over padded tail disabled, drop the final partial slice
    if state.cfg.pool_padded or t_len % state.cfg.sigma == 0:
        return None
    return state.slice_cfg.n_slices(t_len) - 1


def classify_batch(
    batch: TimeSeriesBatch,
    state: ModelState,
    train: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    reps = encode_full(batch, state, train=train, rng=rng)
    pooled = pool_positions(reps, pool_keep(state, batch.length))
    return ad.affine(pooled, state.head.weight, state.head.bias)


def _check_labels(batch: TimeSeriesBatch, n_classes: int) -> np.ndarray:
    if batch.labels is None:
        raise DataError("labeled data required")
    if batch.labels.size and (batch.labels.min() < 0 or batch.labels.max() >= n_classes):
        raise DataError(
            f"label {int(batch.labels.max())} outside [0, {n_classes})"
        )
    return batch.labels


def fit_linear_head(
    features: np.ndarray,
    labels: np.ndarray,
    head: ClassifierHead,
    cfg: RunConfig,
    max_steps: Optional[int] = None,
) -> None:
    """Train only the head on fixed feature vectors with Adam + cross-entropy."""
    params = {"head.weight": head.weight, "head.bias": head.bias}
    opt = init_adam(params)
    steps = 0
    for epoch in range(1, cfg.finetune_epochs + 1):
        order = substream(derive_seed(cfg.seed, FINETUNE, epoch)).permutation(len(features))
        for start in range(0, len(features), cfg.batch_size):
            take = order[start : start + cfg.batch_size]
            logits = ad.affine(Tensor(features[take]), head.weight, head.bias)
            loss = ad.cross_entropy(logits, labels[take])
            head.weight.grad = None
            head.bias.grad = None
            ad.backward(loss)
            adam_step(params, opt, cfg.lr)
            steps += 1
            if max_steps is not None and steps >= max_steps:
                return


def finetune(
    mode: str,
    state: ModelState,
    train_set: TimeSeriesBatch,
    cfg: RunConfig,
    test_set: Optional[TimeSeriesBatch] = None,
    n_classes: Optional[int] = None,
) -> tuple[ModelState, Optional[EvalReport]]:
    """Attach (or reuse) a head and train per the chosen protocol.

    ``last`` freezes everything except the head and fits it on pooled
    eval-mode features; ``all`` optimizes featurizer, positional table,
    visible encoder, and head end to end. Optimizer settings match
    pre-training.
    """
    if n_classes is None:
        if train_set.labels is None:
            raise DataError("labeled data required")
        n_classes = int(train_set.labels.max()) + 1
    labels = _check_labels(train_set, n_classes)
    if state.head is None or state.head.n_classes != n_classes:
        state.head = init_head(state.cfg.d_model, n_classes)

    if mode == "last":
        reps = encode_full(train_set, state, train=False)
        pooled = pool_positions(reps, pool_keep(state, train_set.length))
        fit_linear_head(pooled.data, labels, state.head, cfg)
    elif mode == "all":
        params = {
            name: p
            for name, p in state.named_parameters().items()
            if name.startswith(("featurizer.", "visible.", "head.")) or name == "positions"
        }
        opt = init_adam(params)
        step = 0
        for epoch in range(1, cfg.finetune_epochs + 1):
            shuffle_seed = derive_seed(cfg.seed, FINETUNE, epoch)
            for batch in batches(train_set, cfg.batch_size, shuffle_seed):
                rng = substream(cfg.seed, FINETUNE, epoch, step)
                logits = classify_batch(batch, state, train=True, rng=rng)
                loss = ad.cross_entropy(logits, batch.labels)
                state.zero_grads()
                ad.backward(loss)
                adam_step(params, opt, cfg.lr)
                step += 1
    else:
        raise DataError(f"unknown fine-tune mode {mode!r} (use 'last' or 'all')")

    report = None
    if test_set is not None:
        report = evaluate(state, test_set)
        report.mode = mode
    return state, report


def evaluate(state: ModelState, test_set: TimeSeriesBatch) -> EvalReport:
    """Accuracy and macro-F1 of argmax predictions on labeled data."""
    n_classes = state.head.n_classes
    labels = _check_labels(test_set, n_classes)
    logits = classify_batch(test_set, state, train=False)
    predictions = np.argmax(logits.data, axis=-1)
    return score_predictions(predictions, labels, n_classes)


def score_predictions(
    predictions: np.ndarray, labels: np.ndarray, n_classes: int, mode: str = "eval"
) -> EvalReport:
    """Metrics from prediction/label pairs; empty-class F1 counts as 0."""
    accuracy = float((predictions == labels).mean()) if len(labels) else 0.0
    precision, recall, f1 = [], [], []
    for cls in range(n_classes):
        tp = int(((predictions == cls) & (labels == cls)).sum())
        fp = int(((predictions == cls) & (labels != cls)).sum())
        fn = int(((predictions != cls) & (labels == cls)).sum())
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        f = 2.0 * p * r / (p + r) if p + r else 0.0
        precision.append(p)
        recall.append(r)
        f1.append(f)
    return EvalReport(
        accuracy=accuracy,
        macro_f1=float(np.mean(f1)) if f1 else 0.0,
        per_class_precision=precision,
        per_class_recall=recall,
        per_class_f1=f1,
        mode=mode,
    )
