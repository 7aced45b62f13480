"""Binary checkpoint container.

Layout: magic ``DLMC``, format version, a length-prefixed JSON header
(encoder config plus free-form metadata), then named tensors — each a
length-prefixed UTF-8 name, dimension count, dimensions, and row-major
little-endian float32 data. Adapters form a separable group so they can be
shipped without the base weights.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Iterable

import numpy as np
import torch

from .encoder import Encoder, EncoderConfig, parameter_group
from .errors import DataError

MAGIC = b"DLMC"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    config: dict
    tensors: dict[str, np.ndarray]
    extra: dict = field(default_factory=dict)


def _read_exact(fh: BinaryIO, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise DataError(f"truncated checkpoint while reading {what}")
    return data


def _write_tensor(fh: BinaryIO, name: str, array: np.ndarray) -> None:
    encoded = name.encode("utf-8")
    fh.write(struct.pack("<H", len(encoded)))
    fh.write(encoded)
    fh.write(struct.pack("<B", array.ndim))
    for dim in array.shape:
        fh.write(struct.pack("<Q", dim))
    fh.write(np.ascontiguousarray(array, dtype="<f4").tobytes())


def _read_tensor(fh: BinaryIO) -> tuple[str, np.ndarray]:
    (name_len,) = struct.unpack("<H", _read_exact(fh, 2, "tensor name length"))
    name = _read_exact(fh, name_len, "tensor name").decode("utf-8")
    (ndim,) = struct.unpack("<B", _read_exact(fh, 1, f"rank of {name}"))
    shape = tuple(
        struct.unpack("<Q", _read_exact(fh, 8, f"shape of {name}"))[0] for _ in range(ndim)
    )
    count = int(np.prod(shape, dtype=np.int64)) if shape else 1
    raw = _read_exact(fh, count * 4, f"data of {name}")
    return name, np.frombuffer(raw, dtype="<f4").reshape(shape).copy()


def write_checkpoint(
    path: Path | str,
    tensors: dict[str, np.ndarray],
    config: dict,
    extra: dict | None = None,
) -> None:
    header = json.dumps({"config": config, "extra": extra or {}}, sort_keys=True).encode("utf-8")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", FORMAT_VERSION))
    buf.write(struct.pack("<Q", len(header)))
    buf.write(header)
    buf.write(struct.pack("<I", len(tensors)))
    for name in sorted(tensors):
        _write_tensor(buf, name, tensors[name])
    Path(path).write_bytes(buf.getvalue())


def read_checkpoint(path: Path | str) -> Checkpoint:
    if not Path(path).exists():
        raise DataError(f"checkpoint file not found: {path}")
    with open(path, "rb") as fh:
        if _read_exact(fh, 4, "magic") != MAGIC:
            raise DataError(f"{path}: not a checkpoint file")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "format version"))
        if version != FORMAT_VERSION:
            raise DataError(f"{path}: unsupported checkpoint format version {version}")
        (header_len,) = struct.unpack("<Q", _read_exact(fh, 8, "header length"))
        header = json.loads(_read_exact(fh, header_len, "header").decode("utf-8"))
        (count,) = struct.unpack("<I", _read_exact(fh, 4, "tensor count"))
        tensors = dict(_read_tensor(fh) for _ in range(count))
        trailing = fh.read(1)
    if trailing:
        raise DataError(f"{path}: trailing bytes after last tensor")
    return Checkpoint(config=header["config"], tensors=tensors, extra=header.get("extra", {}))


def model_tensors(model: torch.nn.Module, names: Iterable[str] | None = None) -> dict[str, np.ndarray]:
    state = model.state_dict()
    selected = list(state) if names is None else list(names)
    missing = [name for name in selected if name not in state]
    if missing:
        raise DataError(f"unknown tensors requested: {missing}")
    return {name: state[name].detach().cpu().numpy().astype("<f4") for name in selected}


def save_encoder(path: Path | str, model: Encoder, extra: dict | None = None) -> None:
    write_checkpoint(path, model_tensors(model), model.config.to_dict(), extra)


def save_adapters(path: Path | str, model: Encoder, extra: dict | None = None) -> None:
    """Save only the adapter group, for shipping alongside a shared base."""
    names = [n for n, _ in model.named_parameters() if parameter_group(n) == "adapter"]
    if not names:
        raise DataError("model has no adapter tensors to save")
    write_checkpoint(path, model_tensors(model, names), model.config.to_dict(), extra)


def load_tensors(model: torch.nn.Module, checkpoint: Checkpoint, partial: bool = False) -> None:
    """Copy checkpoint tensors into the model.

    ``partial`` allows the checkpoint to cover a subset (adapter-only
    files); unknown names or shape mismatches are fatal either way.
    """
    state = model.state_dict()
    unknown = [name for name in checkpoint.tensors if name not in state]
    if unknown:
        raise DataError(f"checkpoint tensors not present in model: {sorted(unknown)}")
    if not partial:
        absent = [name for name in state if name not in checkpoint.tensors]
        if absent:
            raise DataError(f"checkpoint is missing model tensors: {sorted(absent)}")
    with torch.no_grad():
        for name, array in checkpoint.tensors.items():
            target = state[name]
            if tuple(target.shape) != array.shape:
                raise DataError(
                    f"shape mismatch for {name}: model {tuple(target.shape)}, file {array.shape}"
                )
            target.copy_(torch.from_numpy(array))


def load_encoder(path: Path | str) -> tuple[Encoder, Checkpoint]:
    """Rebuild an encoder from a full checkpoint file."""
    checkpoint = read_checkpoint(path)
    model = Encoder(EncoderConfig.from_dict(checkpoint.config))
    load_tensors(model, checkpoint)
    model.eval()
    return model, checkpoint
