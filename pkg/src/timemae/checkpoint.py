"""Checkpoint serialization.

Layout (little-endian): magic ``TMAE``; u32 format version; u32 tensor
count; per tensor: u16 name length, UTF-8 name, u8 rank, rank u32 dims,
float32 payload; then a u32-length-prefixed UTF-8 config echo. The echo
alone is enough to rebuild the model shell and rerun fine-tuning.
"""

from __future__ import annotations

import struct
from dataclasses import fields
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .config import RunConfig, parse_config_text
from .encoder import EncoderLayer, EncoderParams
from .errors import CorruptionError, FormatError
from .featurizer import ConvFeaturizer
from .model import ClassifierHead, ModelState
from .tokenizer import Codebook

_MAGIC = b"TMAE"
FORMAT_VERSION = 1


def save_checkpoint(path, state: ModelState) -> None:
    tensors = state.named_parameters()
    echo = state.cfg.to_text().encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<2I", FORMAT_VERSION, len(tensors)))
        for name, tensor in tensors.items():
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", tensor.data.ndim))
            fh.write(struct.pack(f"<{tensor.data.ndim}I", *tensor.data.shape))
            fh.write(np.ascontiguousarray(tensor.data, dtype="<f4").tobytes())
        fh.write(struct.pack("<I", len(echo)))
        fh.write(echo)


def read_tensors(path) -> tuple[dict[str, np.ndarray], RunConfig]:
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != _MAGIC:
        raise FormatError(f"{path}: not a checkpoint file (bad magic)")
    version, count = struct.unpack_from("<2I", raw, 4)
    if version != FORMAT_VERSION:
        raise FormatError(
            f"{path}: checkpoint format version {version}, this build reads {FORMAT_VERSION}"
        )
    offset = 12
    tensors: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", raw, offset)
            offset += 2
            name = raw[offset : offset + name_len].decode("utf-8")
            offset += name_len
            (rank,) = struct.unpack_from("<B", raw, offset)
            offset += 1
            dims = struct.unpack_from(f"<{rank}I", raw, offset)
            offset += 4 * rank
            n_values = int(np.prod(dims, dtype=np.int64)) if rank else 1
            data = np.frombuffer(raw, dtype="<f4", count=n_values, offset=offset)
            offset += 4 * n_values
            tensors[name] = data.reshape(dims).copy()
        (echo_len,) = struct.unpack_from("<I", raw, offset)
        offset += 4
        echo = raw[offset : offset + echo_len].decode("utf-8")
        if len(raw[offset:]) < echo_len:
            raise CorruptionError(f"{path}: truncated config echo")
    except struct.error as e:
        raise CorruptionError(f"{path}: truncated checkpoint") from e
    cfg = RunConfig().apply(parse_config_text(echo)).validate()
    return tensors, cfg


def load_checkpoint(path) -> ModelState:
    """Rebuild a full model from a checkpoint's tensors and config echo."""
    tensors, cfg = read_tensors(path)

    def take(name: str, requires_grad: bool = True) -> Tensor:
        if name not in tensors:
            raise CorruptionError(f"{path}: checkpoint is missing tensor {name!r}")
        return Tensor(tensors.pop(name), requires_grad=requires_grad)

    featurizer = ConvFeaturizer(weight=take("featurizer.weight"), bias=take("featurizer.bias"))
    positions = take("positions")
    z_mask = take("z_mask")

    def take_encoder(prefix: str, depth: int, requires_grad: bool) -> EncoderParams:
        layers = []
        for i in range(depth):
            layers.append(
                EncoderLayer(
                    **{
                        f.name: take(f"{prefix}.{i}.{f.name}", requires_grad)
                        for f in fields(EncoderLayer)
                    }
                )
            )
        return EncoderParams(layers=layers, heads=cfg.heads)

    visible = take_encoder("visible", cfg.depth_visible, True)
    decoupled = take_encoder("decoupled", cfg.depth_decoupled, True)
    target = take_encoder("target", cfg.depth_visible, False)
    codebook = Codebook(vectors=take("codebook"))
    head = None
    if "head.weight" in tensors:
        head = ClassifierHead(weight=take("head.weight"), bias=take("head.bias"))
    if tensors:
        raise CorruptionError(f"{path}: unexpected extra tensors {sorted(tensors)}")
    return ModelState(
        cfg=cfg,
        featurizer=featurizer,
        positions=positions,
        z_mask=z_mask,
        visible=visible,
        decoupled=decoupled,
        target=target,
        codebook=codebook,
        head=head,
    )


def describe_checkpoint(path) -> str:
    """Human-readable tensor listing plus the config echo."""
    tensors, cfg = read_tensors(path)
    lines = [f"checkpoint {path} (format v{FORMAT_VERSION}, {len(tensors)} tensors)"]
    total = 0
    for name, data in tensors.items():
        total += data.size
        lines.append(f"  {name:40s} {str(data.shape):18s} {data.size} values")
    lines.append(f"total parameters: {total}")
    lines.append("config echo:")
    lines.extend("  " + line for line in cfg.to_text().splitlines())
    return "\n".join(lines)
