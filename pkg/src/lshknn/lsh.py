"""Sign-random-projection hashing and bucket tables.

Bit ``i`` of a code is set when the projection on hyperplane ``i`` is
non-negative (so ``sign(0)`` maps to 1); bit 0 is the least significant.
Hyperplanes are drawn from ``numpy.random.Generator(PCG64(seed))`` with
``standard_normal`` (ziggurat), filled table by table, so the first ``k``
tables of a family do not depend on how many tables follow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .vecstore import DescriptorSet


@dataclass(frozen=True)
class HashFamily:
    """``tables x delta`` random hyperplanes in ``dim`` dimensions."""

    hyperplanes: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        h = np.array(self.hyperplanes, dtype=np.float64)
        if h.ndim != 3 or 0 in h.shape:
            raise ValueError(f"hyperplanes must have shape (tables, delta, dim), got {h.shape}")
        if h.shape[1] > 62:
            raise ValueError("at most 62 bits per code are supported")
        h.setflags(write=False)
        object.__setattr__(self, "hyperplanes", h)

    @classmethod
    def random(cls, dim: int, delta: int, tables: int, seed: int = 0) -> "HashFamily":
        if dim <= 0 or delta <= 0 or tables <= 0:
            raise ValueError("dim, delta and tables must be positive")
        rng = np.random.Generator(np.random.PCG64(seed))
        return cls(rng.standard_normal((tables, delta, dim)), seed=seed)

    @property
    def tables(self) -> int:
        return self.hyperplanes.shape[0]

    @property
    def delta(self) -> int:
        return self.hyperplanes.shape[1]

    @property
    def dim(self) -> int:
        return self.hyperplanes.shape[2]

    @property
    def buckets_per_table(self) -> int:
        return 1 << self.delta

    @property
    def bucket_count(self) -> int:
        return self.buckets_per_table * self.tables

    def codes(self, data, table: int) -> np.ndarray:
        """Bucket codes of every row of ``data`` in one table."""
        if not 0 <= table < self.tables:
            raise IndexError(f"table {table} out of range [0, {self.tables})")
        data = np.asarray(data)
        if data.ndim != 2 or data.shape[1] != self.dim:
            raise ValueError(f"dimension mismatch: expected {self.dim}, got {data.shape[-1]}")
        proj = data.astype(np.float64) @ self.hyperplanes[table].T
        weights = np.left_shift(np.int64(1), np.arange(self.delta, dtype=np.int64))
        return (proj >= 0).astype(np.int64) @ weights


def hash_code(f: HashFamily, table: int, x) -> int:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("x must be a single vector")
    return int(f.codes(x[None, :], table)[0])


class BucketTable:
    """Bucket membership for every table, stored CSR-style.

    For table ``t``, ``members[t][offsets[t][b]:offsets[t][b + 1]]`` are the
    ids in bucket ``b`` in ascending order.
    """

    def __init__(self, delta: int, members: list, offsets: list):
        self.delta = delta
        self.members = members
        self.offsets = offsets

    @classmethod
    def from_pairs(cls, delta: int, tables_pairs) -> "BucketTable":
        """Build from per-table ``(codes, ids)`` membership arrays."""
        nb = 1 << delta
        members, offsets = [], []
        for codes, ids in tables_pairs:
            order = np.lexsort((ids, codes))
            members.append(np.ascontiguousarray(ids[order], dtype=np.int64))
            off = np.zeros(nb + 1, dtype=np.int64)
            np.cumsum(np.bincount(codes, minlength=nb), out=off[1:])
            offsets.append(off)
        return cls(delta, members, offsets)

    @property
    def tables(self) -> int:
        return len(self.members)

    @property
    def buckets_per_table(self) -> int:
        return 1 << self.delta

    def bucket(self, table: int, code: int) -> np.ndarray:
        off = self.offsets[table]
        return self.members[table][off[code]:off[code + 1]]

    def buckets(self, table: int):
        """Iterate the non-empty buckets of one table."""
        off = self.offsets[table]
        m = self.members[table]
        for b in np.flatnonzero(np.diff(off)):
            yield m[off[b]:off[b + 1]]

    def occupancy(self, table: int) -> np.ndarray:
        return np.diff(self.offsets[table])

    def memberships(self) -> set:
        """All ``(table, bucket, id)`` memberships as a set."""
        out = set()
        for t in range(self.tables):
            for b in range(self.buckets_per_table):
                out.update((t, b, int(i)) for i in self.bucket(t, b))
        return out

    def __eq__(self, other):
        if not isinstance(other, BucketTable):
            return NotImplemented
        return (self.delta == other.delta and self.tables == other.tables
                and all(np.array_equal(a, b) for a, b in zip(self.members, other.members))
                and all(np.array_equal(a, b) for a, b in zip(self.offsets, other.offsets)))


def probe_count(delta: int, gamma: float) -> int:
    """Number of 1-neighbour buckets kept: ``gamma * delta`` rounded half up."""
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
    return min(delta, int(math.floor(gamma * delta + 0.5)))


def probe_rng(seed: int) -> np.random.Generator:
    """Default generator for multi-probe picks of a family built from ``seed``."""
    return np.random.Generator(np.random.PCG64([seed, 1]))


def probe_neighbors(code: int, delta: int, gamma: float, rng: np.random.Generator) -> list[int]:
    """Random subset of the codes at Hamming distance exactly 1 from ``code``.

    Draws ``delta`` uniforms from ``rng`` and keeps the bits with the
    ``probe_count`` smallest keys; :func:`assign_buckets_multiprobe`
    consumes the generator the same way, one item at a time.
    """
    k = probe_count(delta, gamma)
    if not 0 <= code < (1 << delta):
        raise ValueError(f"code {code} out of range for {delta} bits")
    if k == 0:
        return []
    bits = np.argsort(rng.random(delta), kind="stable")[:k]
    return [code ^ (1 << int(b)) for b in bits]


def _check(f: HashFamily, data):
    if isinstance(data, DescriptorSet):
        data = data.data
    data = np.asarray(data)
    if data.ndim != 2 or data.shape[1] != f.dim:
        raise ValueError(f"dimension mismatch: family has dim {f.dim}, data {data.shape}")
    return data


def assign_buckets(f: HashFamily, ds) -> BucketTable:
    """Plain assignment: each item goes to exactly one bucket per table."""
    data = _check(f, ds)
    ids = np.arange(data.shape[0], dtype=np.int64)
    return BucketTable.from_pairs(f.delta, ((f.codes(data, t), ids) for t in range(f.tables)))


def assign_buckets_multiprobe(f: HashFamily, ds, gamma: float, rng=None) -> BucketTable:
    """Home bucket plus ``probe_count(delta, gamma)`` random 1-neighbours per table.

    ``rng`` may be a Generator or a seed; by default a stream derived from
    the family's seed (distinct from the hyperplane stream) is used.
    Neighbour picks are redrawn for every (item, table).
    """
    data = _check(f, ds)
    k = probe_count(f.delta, gamma)
    if rng is None:
        rng = probe_rng(f.seed or 0)
    elif not isinstance(rng, np.random.Generator):
        rng = np.random.Generator(np.random.PCG64(rng))
    n = data.shape[0]
    ids = np.arange(n, dtype=np.int64)

    def per_table():
        for t in range(f.tables):
            home = f.codes(data, t)
            if k == 0:
                yield home, ids
                continue
            bits = np.argsort(rng.random((n, f.delta)), axis=1, kind="stable")[:, :k]
            probed = home[:, None] ^ np.left_shift(np.int64(1), bits)
            codes = np.concatenate([home, probed.ravel()])
            yield codes, np.concatenate([ids, np.repeat(ids, k)])

    return BucketTable.from_pairs(f.delta, per_table())
