"""Binary checkpoint format for parameters and optimizer state.

Layout (little-endian):

    b"CRT1" | version u8 | header length u32 | header JSON
    tensor count u32 | tensor records
    optimizer flag u8 | [state count u32 | state records]

A tensor record is name length u32, UTF-8 name, rank u32, rank x extent u32,
then the row-major float32 values. The header holds the model config and
free-form run metadata. A state record is its group name, step counter t,
skipped count, beta1 / beta2 / eps as float64, then the first and second
moments as tensor records.
"""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass, field
import logging
from pathlib import Path
import struct
from typing import Any

from atomicwrites import atomic_write
import numpy as np
import orjson

from .autodiff import Array, Tensor
from .const import CHECKPOINT_MAGIC, CHECKPOINT_VERSION
from .exceptions import ConfigError, DataError
from .model import ModelConfig, ParameterSet
from .optim import AdamState

_LOGGER = logging.getLogger(__name__)

_U8 = struct.Struct("<B")
_U32 = struct.Struct("<I")
_F64 = struct.Struct("<d")


@dataclass
class Checkpoint:
    """Parameters, optional optimizer states and run metadata."""

    params: ParameterSet
    optimizers: dict[str, AdamState] | None = None
    meta: dict[str, Any] = field(default_factory=dict)

    @property
    def config(self) -> ModelConfig:
        """Return the model config."""
        return self.params.config


def _pack_str(text: str) -> bytes:
    raw = text.encode("utf-8")
    return _U32.pack(len(raw)) + raw


def _pack_tensor(name: str, data: Array) -> bytes:
    arr = np.ascontiguousarray(data, dtype="<f4")
    parts = [_pack_str(name), _U32.pack(arr.ndim)]
    parts.extend(_U32.pack(extent) for extent in arr.shape)
    parts.append(arr.tobytes())
    return b"".join(parts)


def _pack_tensors(tensors: Mapping[str, Array]) -> bytes:
    return _U32.pack(len(tensors)) + b"".join(_pack_tensor(n, a) for n, a in tensors.items())


def encode_checkpoint(
    params: ParameterSet,
    optimizers: Mapping[str, AdamState] | None = None,
    meta: Mapping[str, Any] | None = None,
) -> bytes:
    """Serialize a checkpoint to bytes."""
    header = orjson.dumps(
        {"model": params.config.as_dict(), "meta": dict(meta or {})},
        option=orjson.OPT_SORT_KEYS,
    )
    parts = [
        CHECKPOINT_MAGIC,
        _U8.pack(CHECKPOINT_VERSION),
        _U32.pack(len(header)),
        header,
        _pack_tensors({name: tensor.data for name, tensor in params.items()}),
    ]
    if optimizers is None:
        parts.append(_U8.pack(0))
    else:
        parts.extend([_U8.pack(1), _U32.pack(len(optimizers))])
        for group, state in optimizers.items():
            parts.extend(
                [
                    _pack_str(group),
                    _U32.pack(state.t),
                    _U32.pack(state.skipped),
                    _F64.pack(state.beta1),
                    _F64.pack(state.beta2),
                    _F64.pack(state.eps),
                    _pack_tensors(state.m),
                    _pack_tensors(state.v),
                ]
            )
    return b"".join(parts)


def save_checkpoint(
    path: str | Path,
    params: ParameterSet,
    optimizers: Mapping[str, AdamState] | None = None,
    meta: Mapping[str, Any] | None = None,
) -> Path:
    """Write a checkpoint through a temporary file and an atomic rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = encode_checkpoint(params, optimizers, meta)
    with atomic_write(path, mode="wb", overwrite=True) as fdesc:
        fdesc.write(payload)
    _LOGGER.debug("Wrote checkpoint %s (%d bytes)", path, len(payload))
    return path


class _Reader:
    """Bounds-checked cursor over checkpoint bytes."""

    def __init__(self, raw: bytes, source: str) -> None:
        self.raw = raw
        self.pos = 0
        self.source = source

    def take(self, count: int) -> bytes:
        end = self.pos + count
        if end > len(self.raw):
            raise DataError(f"{self.source}: truncated checkpoint at byte {self.pos}")
        chunk = self.raw[self.pos : end]
        self.pos = end
        return chunk

    def unpack(self, fmt: struct.Struct) -> Any:
        return fmt.unpack(self.take(fmt.size))[0]

    def string(self) -> str:
        try:
            return self.take(self.unpack(_U32)).decode("utf-8")
        except UnicodeDecodeError as err:
            raise DataError(f"{self.source}: corrupt name in checkpoint") from err

    def tensor(self, dtype: Any) -> tuple[str, Array]:
        name = self.string()
        rank = self.unpack(_U32)
        shape = tuple(self.unpack(_U32) for _ in range(rank))
        count = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(self.take(4 * count), dtype="<f4").reshape(shape)
        return name, data.astype(dtype)

    def tensors(self, dtype: Any) -> dict[str, Array]:
        return dict(self.tensor(dtype) for _ in range(self.unpack(_U32)))


def decode_checkpoint(raw: bytes, source: str = "<bytes>", dtype: Any = np.float32) -> Checkpoint:
    """Parse checkpoint bytes.

    Raises:
        DataError: Bad magic, unsupported version, truncation, or tensors
            that do not match the stored model config
    """
    reader = _Reader(raw, source)
    if reader.take(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
        raise DataError(f"{source}: not a checkpoint (bad magic)")
    version = reader.unpack(_U8)
    if version != CHECKPOINT_VERSION:
        raise DataError(f"{source}: unsupported checkpoint version {version}")
    try:
        header = orjson.loads(reader.take(reader.unpack(_U32)))
        config = ModelConfig.from_dict(header["model"])
    except (orjson.JSONDecodeError, KeyError, TypeError, ConfigError) as err:
        raise DataError(f"{source}: invalid checkpoint header ({err})") from err
    arrays = reader.tensors(dtype)
    params = ParameterSet(config, {n: Tensor(a, requires_grad=True) for n, a in arrays.items()})

    optimizers: dict[str, AdamState] | None = None
    if reader.unpack(_U8):
        optimizers = {}
        for _ in range(reader.unpack(_U32)):
            group = reader.string()
            t = reader.unpack(_U32)
            skipped = reader.unpack(_U32)
            beta1, beta2, eps = (reader.unpack(_F64) for _ in range(3))
            optimizers[group] = AdamState(
                m=reader.tensors(dtype),
                v=reader.tensors(dtype),
                t=t,
                beta1=beta1,
                beta2=beta2,
                eps=eps,
                skipped=skipped,
            )
    if reader.pos != len(raw):
        raise DataError(f"{source}: {len(raw) - reader.pos} trailing bytes in checkpoint")
    return Checkpoint(params=params, optimizers=optimizers, meta=header.get("meta", {}))


def load_checkpoint(path: str | Path, dtype: Any = np.float32) -> Checkpoint:
    """Read a checkpoint file."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as err:
        raise DataError(f"{path}: cannot read checkpoint ({err})") from err
    checkpoint = decode_checkpoint(raw, str(path), dtype)
    _LOGGER.debug("Loaded checkpoint %s", path)
    return checkpoint
