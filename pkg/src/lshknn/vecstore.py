"""Descriptor datasets: fvecs I/O, normalization and cosine similarity.

fvecs layout: for each record a little-endian int32 ``d`` followed by ``d``
little-endian float32 values.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class FvecsFormatError(ValueError):
    """Raised when an fvecs file is malformed."""


class ZeroNormError(ValueError):
    def __init__(self, item_id):
        super().__init__(f"zero-norm row, id={item_id}")
        self.item_id = item_id


@dataclass(frozen=True)
class DescriptorSet:
    """Row-major ``count x dim`` float32 descriptors with integer item ids."""

    data: np.ndarray
    ids: np.ndarray = field(default=None)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float32)
        if data.ndim != 2:
            raise ValueError(f"descriptor data must be 2-D, got shape {data.shape}")
        if not np.isfinite(data).all():
            bad = int(np.flatnonzero(~np.isfinite(data).all(axis=1))[0])
            raise ValueError(f"non-finite entry in row {bad}")
        data = np.ascontiguousarray(data)
        data.setflags(write=False)
        if self.ids is None:
            ids = np.arange(data.shape[0], dtype=np.int64)
        else:
            ids = np.asarray(self.ids, dtype=np.int64)
            if ids.shape != (data.shape[0],):
                raise ValueError("ids must have one entry per row")
            if np.unique(ids).size != ids.size:
                raise ValueError("ids must be unique")
        ids.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "ids", ids)

    @property
    def count(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    def __len__(self):
        return self.count

    def __getitem__(self, i):
        return self.data[i]


def read_fvecs(path) -> np.ndarray:
    """Read an fvecs file into a ``(count, dim)`` float32 array."""
    raw = np.fromfile(path, dtype="<i4")
    if raw.size == 0:
        return np.zeros((0, 0), dtype=np.float32)
    dim = int(raw[0])
    if dim <= 0:
        raise FvecsFormatError(f"invalid dimension {dim} in record 0")
    stride = dim + 1
    if raw.size % stride:
        # Either a truncated tail or a later record with a different dim.
        n_whole = raw.size // stride
        dims = raw[: n_whole * stride : stride]
        bad = np.flatnonzero(dims != dim)
        if bad.size:
            raise FvecsFormatError(
                f"inconsistent dimension: record {int(bad[0])} has "
                f"{int(dims[bad[0]])}, expected {dim}")
        raise FvecsFormatError(f"truncated record {n_whole}")
    recs = raw.reshape(-1, stride)
    bad = np.flatnonzero(recs[:, 0] != dim)
    if bad.size:
        raise FvecsFormatError(
            f"inconsistent dimension: record {int(bad[0])} has "
            f"{int(recs[bad[0], 0])}, expected {dim}")
    return recs[:, 1:].view("<f4").astype(np.float32)


def load_fvecs(path, normalize: bool = False) -> DescriptorSet:
    """Load an fvecs file as a :class:`DescriptorSet` with ids ``0..count-1``.

    An empty file yields ``count=0, dim=0``.
    """
    ds = DescriptorSet(read_fvecs(path))
    return l2_normalize(ds) if normalize else ds


def write_fvecs(path, data) -> None:
    if isinstance(data, DescriptorSet):
        data = data.data
    data = np.asarray(data, dtype="<f4")
    if data.ndim != 2:
        raise ValueError("expected a 2-D array")
    n, d = data.shape
    out = np.empty((n, d + 1), dtype="<i4")
    out[:, 0] = d
    out[:, 1:] = data.view("<i4")
    out.tofile(path)


def load_names(path) -> list[str]:
    """Read a sidecar names file: line ``i`` names item ``i``."""
    with open(path, encoding="utf-8") as fh:
        return fh.read().splitlines()


def l2_normalize(ds: DescriptorSet) -> DescriptorSet:
    """Scale every row to unit Euclidean norm.

    Raises:
        ZeroNormError: if any row is the zero vector.
    """
    data = ds.data.astype(np.float64)
    norms = np.linalg.norm(data, axis=1)
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise ZeroNormError(int(ds.ids[zero[0]]))
    return DescriptorSet((data / norms[:, None]).astype(np.float32), ds.ids)


def cosine_similarity(a, b) -> float:
    """Dot product of two unit vectors."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.size} vs {b.size}")
    return float(np.dot(a, b))

