"""Named parameter registry, Xavier initialization and binary checkpoints.

Checkpoint byte layout (version 1, everything little-endian):

    magic    8 bytes   b"MIFNPRM1"
    count    uint32    number of parameter records
    per record:
        name_len  uint32
        name      name_len bytes, UTF-8
        rank      uint32
        extents   rank x uint32
        values    prod(extents) x float64, row-major

Records are written in registry insertion order; loading restores arrays
bit-exactly.
"""

from __future__ import annotations

import struct
from typing import Iterator

import numpy as np

from .autodiff import Tensor

CHECKPOINT_MAGIC = b"MIFNPRM1"


class CheckpointError(ValueError):
    """Raised for unreadable, corrupt or shape-incompatible checkpoints."""


class ModelParams:
    """Ordered name -> Tensor registry for every learned weight.

    Names must be unique; weights reused across sub-modules with clashing
    conventional symbols are disambiguated by namespace prefixes such as
    ``btu_a2b.`` or ``ktu_b2a.``.
    """

    def __init__(self):
        self._store: dict[str, Tensor] = {}

    def add(self, name: str, data) -> Tensor:
        if name in self._store:
            raise ValueError(f"duplicate parameter name: {name}")
        t = data if isinstance(data, Tensor) else Tensor(data, requires_grad=True)
        t.requires_grad = True
        if not np.all(np.isfinite(t.data)):
            raise ValueError(f"parameter {name} has non-finite values")
        self._store[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._store[name]

    def __contains__(self, name: str) -> bool:
        return name in self._store

    def __len__(self) -> int:
        return len(self._store)

    def __iter__(self) -> Iterator[str]:
        return iter(self._store)

    def names(self) -> list[str]:
        return list(self._store)

    def items(self):
        return self._store.items()

    def values(self):
        return self._store.values()

    def n_scalars(self) -> int:
        return sum(t.data.size for t in self._store.values())


def xavier_init(shape, seed) -> Tensor:
    """Uniform Xavier sample U(-b, b) with b = sqrt(6 / (fan_in + fan_out)).

    ``seed`` may be an int or a numpy Generator.  For rank-1 shapes the fan
    pair is (n, 1); for rank >= 2 it is (shape[0], prod(shape[1:])).  A zero
    extent yields an empty tensor.
    """
    shape = tuple(int(s) for s in shape)
    if len(shape) < 1:
        raise ValueError("xavier_init needs at least one dimension")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if any(s == 0 for s in shape):
        return Tensor(np.zeros(shape), requires_grad=True)
    fan_in = shape[0]
    fan_out = 1
    for s in shape[1:]:
        fan_out *= s
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def save_checkpoint(path, params: ModelParams) -> None:
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(params)))
        for name, tensor in params.items():
            raw = name.encode("utf-8")
            arr = np.ascontiguousarray(tensor.data, dtype=np.float64)
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            for extent in arr.shape:
                fh.write(struct.pack("<I", extent))
            fh.write(arr.astype("<f8").tobytes(order="C"))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as err:
        raise CheckpointError(f"cannot read checkpoint {path}: {err}") from err
    if blob[:8] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path} is not a recognized checkpoint file")
    off = 8

    def take(fmt):
        nonlocal off
        size = struct.calcsize(fmt)
        if off + size > len(blob):
            raise CheckpointError(f"{path} is truncated")
        vals = struct.unpack_from(fmt, blob, off)
        off += size
        return vals

    (count,) = take("<I")
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = take("<I")
        if off + name_len > len(blob):
            raise CheckpointError(f"{path} is truncated")
        name = blob[off:off + name_len].decode("utf-8")
        off += name_len
        (rank,) = take("<I")
        extents = take(f"<{rank}I") if rank else ()
        n = 1
        for e in extents:
            n *= e
        nbytes = n * 8
        if off + nbytes > len(blob):
            raise CheckpointError(f"{path} is truncated")
        arr = np.frombuffer(blob, dtype="<f8", count=n, offset=off).reshape(extents)
        off += nbytes
        out[name] = arr.astype(np.float64)
    if off != len(blob):
        raise CheckpointError(f"{path} has trailing bytes")
    return out


def load_into(path, params: ModelParams) -> None:
    """Load a checkpoint into an existing registry, verifying names/shapes."""
    loaded = load_checkpoint(path)
    missing = set(params.names()) - set(loaded)
    extra = set(loaded) - set(params.names())
    if missing or extra:
        raise CheckpointError(
            f"checkpoint/model parameter mismatch (missing={sorted(missing)}, extra={sorted(extra)})"
        )
    for name, tensor in params.items():
        if loaded[name].shape != tensor.data.shape:
            raise CheckpointError(
                f"shape mismatch for {name}: checkpoint {loaded[name].shape} vs model {tensor.data.shape}"
            )
        tensor.data = loaded[name]
