"""Thresholded symmetric sparse affinity matrices.

Only the upper triangle (``row < col``) of the affinity matrix is stored.
Graphs are accumulated in :class:`CooMatrix` (append-only, duplicates
allowed), canonicalized once with :func:`coo_sort_dedup`, then frozen into
:class:`CsrMatrix` for lookups and diffusion.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

logger = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 0.3

GRAPH_MAGIC = b"AKNN"
GRAPH_VERSION = 1
_HEADER = struct.Struct("<4sIQQf")
_RECORD = np.dtype([("row", "<u4"), ("col", "<u4"), ("weight", "<f4")])


class GraphFormatError(ValueError):
    pass


class CooMatrix:
    """Upper-triangular triplet list used while building a graph.

    Edges with weight below ``threshold`` are dropped at push time. Entries
    are stored as a list of array chunks so that bulk pushes from a bucket
    stay vectorized; :meth:`merge` concatenates the chunks of another
    matrix, which is how private per-worker matrices are combined.
    """

    def __init__(self, n: int, threshold: float = DEFAULT_THRESHOLD):
        if n < 0:
            raise ValueError("n must be non-negative")
        self.n = int(n)
        self.threshold = float(threshold)
        self._rows: list[np.ndarray] = []
        self._cols: list[np.ndarray] = []
        self._weights: list[np.ndarray] = []
        self._nnz = 0
        self.sorted_dedup = True

    def __len__(self):
        return self._nnz

    @property
    def nnz(self) -> int:
        return self._nnz

    def _check_ids(self, i, j):
        if i.size and (min(i.min(), j.min()) < 0 or max(i.max(), j.max()) >= self.n):
            raise IndexError(f"id out of range for n={self.n}")
        if np.any(i == j):
            k = int(np.flatnonzero(i == j)[0])
            raise ValueError(f"self-loop on node {int(i[k])}")

    def push(self, i: int, j: int, w: float) -> "CooMatrix":
        """Append edge ``{i, j}`` as ``(min, max, w)`` if ``w >= threshold``."""
        return self.push_many([i], [j], [w])

    def push_many(self, i, j, w) -> "CooMatrix":
        i = np.asarray(i, dtype=np.int64).ravel()
        j = np.asarray(j, dtype=np.int64).ravel()
        w = np.asarray(w, dtype=np.float32).ravel()
        if not (i.shape == j.shape == w.shape):
            raise ValueError("row, col and weight arrays differ in length")
        self._check_ids(i, j)
        keep = w >= np.float32(self.threshold)
        if not keep.all():
            i, j, w = i[keep], j[keep], w[keep]
        if i.size == 0:
            return self
        lo = np.minimum(i, j)
        hi = np.maximum(i, j)
        self._rows.append(lo.astype(np.uint32))
        self._cols.append(hi.astype(np.uint32))
        self._weights.append(w)
        self._nnz += i.size
        self.sorted_dedup = False
        return self

    def merge(self, other: "CooMatrix") -> "CooMatrix":
        if other.n != self.n:
            raise ValueError("cannot merge matrices of different size")
        if other.nnz:
            self._rows.extend(other._rows)
            self._cols.extend(other._cols)
            self._weights.extend(other._weights)
            self._nnz += other.nnz
            self.sorted_dedup = False
        return self

    def triplets(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return ``(rows, cols, weights)`` as flat arrays, compacting chunks."""
        if len(self._rows) != 1:
            if self._rows:
                rows = np.concatenate(self._rows)
                cols = np.concatenate(self._cols)
                weights = np.concatenate(self._weights)
            else:
                rows = np.empty(0, np.uint32)
                cols = np.empty(0, np.uint32)
                weights = np.empty(0, np.float32)
            self._rows, self._cols, self._weights = [rows], [cols], [weights]
        return self._rows[0], self._cols[0], self._weights[0]

    def _replace(self, rows, cols, weights, sorted_dedup):
        self._rows, self._cols, self._weights = [rows], [cols], [weights]
        self._nnz = rows.size
        self.sorted_dedup = sorted_dedup


def coo_push(m: CooMatrix, i: int, j: int, w: float) -> CooMatrix:
    return m.push(i, j, w)


def _weight_order_bits(w: np.ndarray) -> np.ndarray:
    """Map float32 values to uint32 with the same ordering."""
    b = w.view(np.uint32)
    return np.where(b >> np.uint32(31), ~b, b | np.uint32(0x80000000))


def coo_sort_dedup(m: CooMatrix) -> CooMatrix:
    """Sort entries by ``(row, col)`` and drop duplicate pairs in place.

    When duplicate weights disagree the maximum survives.
    """
    if m.sorted_dedup:
        return m
    rows, cols, weights = m.triplets()
    if m.n <= 1 << 16:
        # row | col | weight fit one uint64: a plain value sort orders by all three.
        packed = ((rows.astype(np.uint64) << np.uint64(48))
                  | (cols.astype(np.uint64) << np.uint64(32))
                  | _weight_order_bits(weights).astype(np.uint64))
        packed.sort()
        pair = packed >> np.uint64(32)
        last = np.empty(pair.size, dtype=bool)
        if pair.size:
            last[-1] = True
            np.not_equal(pair[1:], pair[:-1], out=last[:-1])
        packed = packed[last]
        rows = (packed >> np.uint64(48)).astype(np.uint32)
        cols = ((packed >> np.uint64(32)) & np.uint64(0xFFFF)).astype(np.uint32)
        wbits = (packed & np.uint64(0xFFFFFFFF)).astype(np.uint32)
        wbits = np.where(wbits >> np.uint32(31), wbits & np.uint32(0x7FFFFFFF), ~wbits)
        m._replace(rows, cols, wbits.view(np.float32), True)
        return m
    key = (rows.astype(np.uint64) << np.uint64(32)) | cols.astype(np.uint64)
    order = np.argsort(key)
    key = key[order]
    first = np.empty(key.size, dtype=bool)
    if key.size:
        first[0] = True
        np.not_equal(key[1:], key[:-1], out=first[1:])
    starts = np.flatnonzero(first)
    w = np.maximum.reduceat(weights[order], starts) if starts.size else weights[:0]
    sel = order[starts]
    m._replace(rows[sel], cols[sel], w.astype(np.float32), True)
    return m


@dataclass(frozen=True)
class CsrMatrix:
    """Compressed-row sparse matrix.

    With ``upper=True`` only ``row < col`` entries are stored and the
    logical matrix is their symmetrization; with ``upper=False`` both
    triangles are stored explicitly.
    """

    n: int
    row_ptr: np.ndarray
    col_idx: np.ndarray
    values: np.ndarray
    upper: bool = True
    threshold: float = DEFAULT_THRESHOLD

    def __post_init__(self):
        if self.row_ptr.shape != (self.n + 1,):
            raise ValueError("row_ptr must have n + 1 entries")
        if self.row_ptr[0] != 0 or self.row_ptr[-1] != self.col_idx.size:
            raise ValueError("row_ptr must start at 0 and end at nnz")
        if self.col_idx.shape != self.values.shape:
            raise ValueError("col_idx and values differ in length")

    @property
    def nnz(self) -> int:
        return int(self.col_idx.size)

    def row_indices(self) -> np.ndarray:
        return np.repeat(np.arange(self.n, dtype=np.int64), np.diff(self.row_ptr))

    def to_coo(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Expand back to ``(rows, cols, values)`` triplets in storage order."""
        return self.row_indices(), self.col_idx.copy(), self.values.copy()

    def edge_keys(self) -> np.ndarray:
        """Sorted ``row << 32 | col`` keys of the stored entries."""
        return (self.row_indices().astype(np.uint64) << np.uint64(32)) | self.col_idx.astype(np.uint64)

    def to_scipy(self, dtype=np.float64) -> sp.csr_matrix:
        """The logical (symmetrized when ``upper``) matrix as scipy CSR."""
        m = sp.csr_matrix(
            (self.values.astype(dtype), self.col_idx, self.row_ptr), shape=(self.n, self.n))
        if self.upper:
            m = (m + m.T).tocsr()
            m.sort_indices()
        return m

    def toarray(self) -> np.ndarray:
        return self.to_scipy().toarray()

    def lookup(self, i: int, j: int):
        return sym_lookup(self, i, j)


def coo_to_csr(m: CooMatrix) -> CsrMatrix:
    if not m.sorted_dedup:
        raise ValueError("coo_to_csr requires a sorted, deduplicated CooMatrix")
    rows, cols, weights = m.triplets()
    counts = np.bincount(rows, minlength=m.n) if rows.size else np.zeros(m.n, np.int64)
    row_ptr = np.zeros(m.n + 1, dtype=np.int64)
    np.cumsum(counts, out=row_ptr[1:])
    return CsrMatrix(m.n, row_ptr, cols.astype(np.int64), weights.astype(np.float32),
                     upper=True, threshold=m.threshold)


def sym_lookup(m: CsrMatrix, i: int, j: int):
    """Weight of edge ``{i, j}`` or ``None`` when absent."""
    if not (0 <= i < m.n and 0 <= j < m.n):
        raise IndexError(f"id out of range for n={m.n}")
    if m.upper:
        i, j = min(i, j), max(i, j)
    lo, hi = m.row_ptr[i], m.row_ptr[i + 1]
    k = lo + np.searchsorted(m.col_idx[lo:hi], j)
    if k < hi and m.col_idx[k] == j:
        return float(m.values[k])
    return None


def sym_normalize(m: CsrMatrix) -> tuple[CsrMatrix, np.ndarray]:
    """Return ``D^-1/2 W D^-1/2`` over the symmetrized matrix and the isolated nodes.

    The result stores both triangles (``upper=False``) in float64. Nodes with
    zero degree keep empty rows and are listed in the second return value.
    """
    w = m.to_scipy(np.float64)
    if w.nnz and w.data.min() < 0:
        raise ValueError("sym_normalize requires non-negative weights")
    deg = np.asarray(w.sum(axis=1)).ravel()
    isolated = np.flatnonzero(deg == 0)
    if isolated.size:
        logger.info("%d isolated nodes in affinity graph", isolated.size)
    inv_sqrt = np.zeros_like(deg)
    nz = deg > 0
    inv_sqrt[nz] = 1.0 / np.sqrt(deg[nz])
    d = sp.diags(inv_sqrt)
    s = (d @ w @ d).tocsr()
    s.sort_indices()
    out = CsrMatrix(m.n, s.indptr.astype(np.int64), s.indices.astype(np.int64),
                    s.data.astype(np.float64), upper=False, threshold=m.threshold)
    return out, isolated


def write_graph(path, m: CsrMatrix) -> None:
    """Write an upper-triangular graph in the binary ``AKNN`` format."""
    if not m.upper:
        raise ValueError("only upper-triangular graphs can be written")
    rec = np.empty(m.nnz, dtype=_RECORD)
    rec["row"] = m.row_indices()
    rec["col"] = m.col_idx
    rec["weight"] = m.values
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(GRAPH_MAGIC, GRAPH_VERSION, m.n, m.nnz, m.threshold))
        fh.write(rec.tobytes())


def read_graph(path) -> CsrMatrix:
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise GraphFormatError("truncated header")
        magic, version, n, nnz, th = _HEADER.unpack(head)
        if magic != GRAPH_MAGIC:
            raise GraphFormatError(f"bad magic {magic!r}")
        if version != GRAPH_VERSION:
            raise GraphFormatError(f"unsupported graph version {version}")
        body = fh.read()
    if len(body) != nnz * _RECORD.itemsize:
        raise GraphFormatError(f"expected {nnz} records, file holds {len(body) // _RECORD.itemsize}")
    rec = np.frombuffer(body, dtype=_RECORD)
    coo = CooMatrix(n, threshold=-np.inf)
    rows, cols = rec["row"].astype(np.uint32), rec["col"].astype(np.uint32)
    if nnz:
        if rows.max() >= n or cols.max() >= n:
            raise GraphFormatError("record id out of range")
        if np.any(rows >= cols):
            raise GraphFormatError("records must be strictly upper-triangular")
        key = (rows.astype(np.uint64) << np.uint64(32)) | cols.astype(np.uint64)
        if np.any(key[1:] <= key[:-1]):
            raise GraphFormatError("records must be sorted and unique")
    coo._replace(rows, cols, rec["weight"].astype(np.float32), True)
    coo.threshold = float(th)
    return coo_to_csr(coo)
