"""Dataset loading, validation, batching, and synthetic data generation.

On-disk formats
---------------
TSB1 binary (little-endian): magic ``TSB1``; u32 n_examples; u32 T; u32 m;
u32 n_classes; u32 has_labels (0/1); if has_labels, n_examples u32 labels;
then n_examples * T * m float32 values in [example, time, channel] order.

CSV: first line is the header ``label,T,m``; every following line is an
integer label and then T*m reals in time-major order
(t0c0, t0c1, ..., t1c0, ...).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

from .errors import ConfigError, CorruptionError, DataError, FormatError
from .rng import DATA, SHUFFLE, substream

_MAGIC = b"TSB1"
_STD_FLOOR = 1e-6


@dataclass(frozen=True)
class DatasetHeader:
    n_examples: int
    length: int
    n_channels: int
    n_classes: int


@dataclass(frozen=True)
class TimeSeriesBatch:
    """A [B, T, m] block of series plus optional integer labels [B]."""

    data: np.ndarray
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.data.ndim != 3:
            raise DataError(f"series array must be [B, T, m], got shape {self.data.shape}")
        if self.labels is not None and len(self.labels) != len(self.data):
            raise DataError(
                f"{len(self.labels)} labels for {len(self.data)} examples"
            )

    @property
    def n_examples(self) -> int:
        return self.data.shape[0]

    @property
    def length(self) -> int:
        return self.data.shape[1]

    @property
    def n_channels(self) -> int:
        return self.data.shape[2]

    def select(self, idx: np.ndarray) -> "TimeSeriesBatch":
        labels = None if self.labels is None else self.labels[idx]
        return TimeSeriesBatch(self.data[idx], labels)


def _check_finite(data: np.ndarray) -> None:
    if not np.isfinite(data).all():
        idx = np.argwhere(~np.isfinite(data))[0]
        raise DataError(f"non-finite value at [example, time, channel] = {tuple(idx)}")


def load_binary(path) -> tuple[TimeSeriesBatch, DatasetHeader]:
    raw = Path(path).read_bytes()
    if len(raw) < 24 or raw[:4] != _MAGIC:
        raise FormatError(f"{path}: not a TSB1 file (bad magic)")
    n, t_len, m, n_classes, has_labels = struct.unpack_from("<5I", raw, 4)
    offset = 24
    labels = None
    if has_labels:
        need = n * 4
        if len(raw) < offset + need:
            raise CorruptionError(f"{path}: truncated label block")
        labels = np.frombuffer(raw, dtype="<u4", count=n, offset=offset).astype(np.int64)
        offset += need
    payload = n * t_len * m
    if len(raw) - offset != payload * 4:
        raise CorruptionError(
            f"{path}: payload holds {(len(raw) - offset) // 4} floats, header implies {payload}"
        )
    data = np.frombuffer(raw, dtype="<f4", count=payload, offset=offset)
    data = data.reshape(n, t_len, m).copy()
    _check_finite(data)
    if labels is not None and labels.size and labels.max() >= n_classes:
        raise DataError(f"{path}: label {labels.max()} outside [0, {n_classes})")
    header = DatasetHeader(n, t_len, m, n_classes)
    return TimeSeriesBatch(data, labels), header


def save_binary(path, batch: TimeSeriesBatch, n_classes: int) -> None:
    has_labels = batch.labels is not None
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(
            struct.pack(
                "<5I", batch.n_examples, batch.length, batch.n_channels,
                n_classes, int(has_labels),
            )
        )
        if has_labels:
            fh.write(batch.labels.astype("<u4").tobytes())
        fh.write(np.ascontiguousarray(batch.data, dtype="<f4").tobytes())


def load_csv(path) -> TimeSeriesBatch:
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise FormatError(f"{path}: empty file")
    head = lines[0].split(",")
    if len(head) != 3 or head[0].strip() != "label":
        raise FormatError(f"{path}: header must be 'label,T,m', got {lines[0]!r}")
    try:
        t_len, m = int(head[1]), int(head[2])
    except ValueError as e:
        raise FormatError(f"{path}: non-integer T or m in header") from e
    rows, labels = [], []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 1 + t_len * m:
            raise FormatError(
                f"{path}:{lineno}: expected {1 + t_len * m} fields, got {len(parts)}"
            )
        try:
            labels.append(int(parts[0]))
            rows.append([float(v) for v in parts[1:]])
        except ValueError as e:
            raise FormatError(f"{path}:{lineno}: unparsable value") from e
    data = np.asarray(rows, dtype=np.float32).reshape(len(rows), t_len, m)
    _check_finite(data)
    return TimeSeriesBatch(data, np.asarray(labels, dtype=np.int64))


def normalize(batch: TimeSeriesBatch, mode: str = "none") -> TimeSeriesBatch:
    """Per-channel z-score over all examples and times, or the identity."""
    if mode == "none":
        return batch
    if mode != "zscore":
        raise ConfigError(f"unknown normalize mode {mode!r} (use 'none' or 'zscore')")
    mu = batch.data.mean(axis=(0, 1), keepdims=True)
    std = batch.data.std(axis=(0, 1), keepdims=True)
    std = np.maximum(std, _STD_FLOOR)
    return TimeSeriesBatch(((batch.data - mu) / std).astype(np.float32), batch.labels)


def make_synthetic(
    n_per_class: int, n_classes: int, t_len: int, m: int, seed: int
) -> TimeSeriesBatch:
    """Labeled series with one motif per class.

    Class c is a sinusoid at its own frequency (random phase per example,
    so naive time-averaged statistics carry little class signal) plus a
    fixed Gaussian pulse at a class-specific position, with N(0, 0.1)
    noise. Deterministic given the seed.
    """
    if n_classes < 2:
        raise ConfigError(f"need at least 2 classes, got {n_classes}")
    rng = substream(seed, DATA)
    t_axis = np.arange(t_len)
    total = n_per_class * n_classes
    data = np.empty((total, t_len, m), dtype=np.float32)
    labels = np.repeat(np.arange(n_classes), n_per_class).astype(np.int64)

    pulse_width = max(2.0, t_len / 32.0)
    for i, cls in enumerate(labels):
        freq = cls + 2.0
        phase = rng.uniform(0.0, 2.0 * np.pi)
        center = (cls + 0.5) * t_len / n_classes
        pulse = 2.0 * np.exp(-0.5 * ((t_axis - center) / pulse_width) ** 2)
        for ch in range(m):
            wave = np.sin(2.0 * np.pi * freq * t_axis / t_len + phase + np.pi * ch / m)
            noise = rng.normal(0.0, 0.1, size=t_len)
            data[i, :, ch] = wave + pulse + noise
    return TimeSeriesBatch(data, labels)


def batches(
    batch: TimeSeriesBatch, batch_size: int, shuffle_seed: Optional[int] = None
) -> Iterator[TimeSeriesBatch]:
    """Partition into mini-batches; the last one may be short."""
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    n = batch.n_examples
    if shuffle_seed is None:
        order = np.arange(n)
    else:
        order = substream(shuffle_seed, SHUFFLE).permutation(n)
    for start in range(0, n, batch_size):
        yield batch.select(order[start : start + batch_size])


def stratified_split(
    batch: TimeSeriesBatch, test_fraction: float, seed: int
) -> tuple[TimeSeriesBatch, TimeSeriesBatch]:
    """Per-class split so train/test shares stay balanced within one example."""
    if batch.labels is None:
        raise DataError("stratified_split requires labels")
    if not 0.0 < test_fraction < 1.0:
        raise ConfigError(f"test_fraction must be in (0, 1), got {test_fraction}")
    rng = substream(seed, DATA, 1)
    train_idx, test_idx = [], []
    for cls in np.unique(batch.labels):
        members = np.flatnonzero(batch.labels == cls)
        members = rng.permutation(members)
        n_test = int(round(test_fraction * len(members)))
        test_idx.extend(members[:n_test])
        train_idx.extend(members[n_test:])
    return batch.select(np.sort(train_idx)), batch.select(np.sort(test_idx))
