"""Bit-exact checkpoint serialization and head replacement.

The byte layout is the wire contract documented in docs/checkpoint_format.md:
magic ``VITC``, u32 version, a u32 config block, name-sorted tensor records,
an optional optimizer section, and a trailing FNV-1a 64 checksum over all
preceding bytes. Saving the same state twice yields byte-identical files.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from vitforge.model import INIT_STD, ModelParams, ViTConfig, parameter_shapes
from vitforge.ops import Rng
from vitforge.training import AdamWState

MAGIC = b"VITC"
VERSION = 1

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF

_DTYPE_TAGS = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_TAG_FOR_KIND = {np.dtype(np.float32): 1, np.dtype(np.float64): 2}

_CONFIG_FIELDS = (
    "image_size", "channels", "patch_size", "hidden_dim",
    "mlp_dim", "num_heads", "num_layers", "num_classes",
)


class CheckpointError(ValueError):
    """Base class for checkpoint file problems."""


class BadMagicError(CheckpointError):
    pass


class UnsupportedVersionError(CheckpointError):
    pass


class ChecksumError(CheckpointError):
    pass


class FormatError(CheckpointError):
    """Structurally broken file (truncation, bad counts, trailing bytes)."""


class TensorShapeError(CheckpointError):
    """A tensor's dims disagree with the config-implied shape."""


def fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for b in data:
        h = ((h ^ b) * _FNV_PRIME) & _MASK64
    return h


@dataclass
class LoadedCheckpoint:
    params: ModelParams
    config: ViTConfig
    optimizer: Optional[AdamWState] = None


# ---------------------------------------------------------------------------
# Writing
# ---------------------------------------------------------------------------

def _encode_tensor(name: str, tensor: np.ndarray) -> bytes:
    dtype = np.dtype(tensor.dtype)
    if dtype not in _TAG_FOR_KIND:
        raise CheckpointError(f"tensor {name} has unsupported dtype {dtype}")
    tag = _TAG_FOR_KIND[dtype]
    name_bytes = name.encode("utf-8")
    parts = [
        struct.pack("<Q", len(name_bytes)),
        name_bytes,
        struct.pack("<Q", tensor.ndim),
        struct.pack(f"<{tensor.ndim}Q", *tensor.shape),
        struct.pack("<B", tag),
        np.ascontiguousarray(tensor, dtype=_DTYPE_TAGS[tag]).tobytes(),
    ]
    return b"".join(parts)


def serialize(params: ModelParams, config: ViTConfig,
              optimizer: Optional[AdamWState] = None) -> bytes:
    parts = [MAGIC, struct.pack("<I", VERSION)]
    parts.append(struct.pack("<8I", *(getattr(config, f) for f in _CONFIG_FIELDS)))

    names = params.names()
    parts.append(struct.pack("<Q", len(names)))
    for name in names:
        parts.append(_encode_tensor(name, params[name]))

    if optimizer is None:
        parts.append(struct.pack("<B", 0))
    else:
        parts.append(struct.pack("<B", 1))
        parts.append(struct.pack("<Q", optimizer.t))
        parts.append(struct.pack(
            "<5d", optimizer.lr, optimizer.beta1, optimizer.beta2,
            optimizer.eps, optimizer.weight_decay,
        ))
        moments = {f"m.{n}": t for n, t in optimizer.m.items()}
        moments.update({f"v.{n}": t for n, t in optimizer.v.items()})
        parts.append(struct.pack("<Q", len(moments)))
        for name in sorted(moments):
            parts.append(_encode_tensor(name, moments[name]))

    body = b"".join(parts)
    return body + struct.pack("<Q", fnv1a64(body))


def save_checkpoint(params: ModelParams, config: ViTConfig, path,
                    optimizer: Optional[AdamWState] = None) -> None:
    try:
        with open(path, "wb") as fh:
            fh.write(serialize(params, config, optimizer))
    except OSError as exc:
        raise CheckpointError(f"cannot write checkpoint {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# Reading
# ---------------------------------------------------------------------------

class _Reader:
    def __init__(self, data: bytes, path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(
                f"{self.path}: truncated file (needed {n} bytes at offset {self.pos})"
            )
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def f64s(self, n: int):
        return struct.unpack(f"<{n}d", self.take(8 * n))

    def tensor(self):
        name_len = self.u64()
        if name_len > len(self.data):
            raise FormatError(f"{self.path}: implausible tensor name length {name_len}")
        name = self.take(name_len).decode("utf-8")
        rank = self.u64()
        if rank > 8:
            raise FormatError(f"{self.path}: implausible tensor rank {rank} for {name}")
        dims = struct.unpack(f"<{rank}Q", self.take(8 * rank))
        tag = self.u8()
        if tag not in _DTYPE_TAGS:
            raise FormatError(f"{self.path}: unknown dtype tag {tag} for {name}")
        dtype = _DTYPE_TAGS[tag]
        count = 1
        for d in dims:
            count *= d
        payload = self.take(count * dtype.itemsize)
        array = np.frombuffer(payload, dtype=dtype).reshape(dims).copy()
        return name, array


def load_checkpoint(path) -> LoadedCheckpoint:
    """Parse, checksum-verify, and config-validate a checkpoint file."""
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc

    if len(data) < 4 or data[:4] != MAGIC:
        raise BadMagicError(f"{path}: not a vitforge checkpoint (bad magic)")
    if len(data) < 8 + 8:
        raise FormatError(f"{path}: truncated file")

    stored = struct.unpack("<Q", data[-8:])[0]
    actual = fnv1a64(data[:-8])
    if stored != actual:
        raise ChecksumError(
            f"{path}: checksum mismatch (stored {stored:#x}, computed {actual:#x})"
        )

    r = _Reader(data[:-8], path)
    r.take(4)  # magic
    version = r.u32()
    if version != VERSION:
        raise UnsupportedVersionError(f"{path}: unsupported version {version}")

    config_values = struct.unpack("<8I", r.take(32))
    try:
        config = ViTConfig(**dict(zip(_CONFIG_FIELDS, config_values)))
    except ValueError as exc:
        raise FormatError(f"{path}: invalid config block: {exc}") from exc

    tensor_count = r.u64()
    tensors = {}
    for _ in range(tensor_count):
        name, array = r.tensor()
        if name in tensors:
            raise FormatError(f"{path}: duplicate tensor {name}")
        tensors[name] = array

    expected = parameter_shapes(config)
    if set(tensors) != set(expected):
        missing = sorted(set(expected) - set(tensors))
        extra = sorted(set(tensors) - set(expected))
        raise TensorShapeError(
            f"{path}: tensor set does not match config "
            f"(missing {missing[:3]}, extra {extra[:3]})"
        )
    for name, shape in expected.items():
        if tensors[name].shape != shape:
            raise TensorShapeError(
                f"{path}: tensor {name} has shape {tensors[name].shape}, "
                f"config implies {shape}"
            )

    params = ModelParams(tensors)

    optimizer = None
    if r.u8() == 1:
        t = r.u64()
        lr, beta1, beta2, eps, weight_decay = r.f64s(5)
        moment_count = r.u64()
        moments = {}
        for _ in range(moment_count):
            name, array = r.tensor()
            moments[name] = array
        optimizer = AdamWState(
            ModelParams({}), lr=lr, beta1=beta1, beta2=beta2, eps=eps,
            weight_decay=weight_decay,
        )
        optimizer.t = t
        for name, array in moments.items():
            kind, _, param_name = name.partition(".")
            if kind == "m":
                optimizer.m[param_name] = array
            elif kind == "v":
                optimizer.v[param_name] = array
            else:
                raise FormatError(f"{path}: unexpected optimizer tensor {name}")

    if r.pos != len(r.data):
        raise FormatError(f"{path}: {len(r.data) - r.pos} trailing bytes")

    return LoadedCheckpoint(params=params, config=config, optimizer=optimizer)


# ---------------------------------------------------------------------------
# Transfer learning
# ---------------------------------------------------------------------------

def replace_head(checkpoint: LoadedCheckpoint, new_k: int, rng: Rng) -> LoadedCheckpoint:
    """Carry the backbone bitwise, re-initialize the head for ``new_k`` classes.

    Head weights are drawn truncated-normal (std 0.02), the bias is zeroed,
    and any optimizer state is dropped: fine-tuning starts fresh.
    """
    if new_k < 2:
        raise ValueError(f"num_classes must be >= 2, got {new_k}")
    old = checkpoint.config
    config = ViTConfig(**{
        **{f: getattr(old, f) for f in _CONFIG_FIELDS},
        "num_classes": new_k,
    })
    dtype = checkpoint.params["head.weight"].dtype
    tensors = {n: t for n, t in checkpoint.params.tensors.items()}
    tensors["head.weight"] = rng.trunc_normal(
        (old.hidden_dim, new_k), std=INIT_STD
    ).astype(dtype)
    tensors["head.bias"] = np.zeros(new_k, dtype=dtype)
    return LoadedCheckpoint(params=ModelParams(tensors), config=config, optimizer=None)
