"""Affinity graph construction: LSH buckets, multi-probe buckets, brute force.

All builders share one pipeline. Candidate pairs are found with blocked
float32 matrix products and collected as ``row << 32 | col`` keys; the keys
are sorted and deduplicated once; the surviving pairs are re-scored with
:func:`pair_weights` and thresholded into a COO matrix. Re-scoring makes an
edge's weight a function of its two vectors only, so a bucket-local product
and the brute-force sweep store bit-identical weights for the same pair.
"""

from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _kernels
from .lsh import HashFamily, assign_buckets, assign_buckets_multiprobe
from .sparse import DEFAULT_THRESHOLD, CooMatrix, CsrMatrix, coo_to_csr
from .vecstore import DescriptorSet

logger = logging.getLogger(__name__)

METHODS = ("lsh", "multiprobe", "bruteforce")

# float32 products of unit vectors in modest dimension are off by ~1e-6 at
# most; candidates inside this margin are re-scored exactly.
_SLACK = 1e-4
_BLOCK = 256
_TILE = 8192
_BUCKET_BLOCK = 128
_COMPACT_AT = 16_000_000
_LOW32 = np.uint64(0xFFFFFFFF)


@dataclass
class BuildReport:
    """Edge counts and phase timings of one graph build.

    ``edges_considered`` counts similarity evaluations, ``edges_pushed``
    candidate pairs at or above the threshold before deduplication, and
    ``edges_kept`` the edges of the final graph.
    """

    method: str
    parameters: dict = field(default_factory=dict)
    edges_considered: int = 0
    edges_pushed: int = 0
    edges_kept: int = 0
    projection_seconds: float = 0.0
    creation_seconds: float = 0.0
    max_bucket: int = 0

    @property
    def total_seconds(self) -> float:
        return self.projection_seconds + self.creation_seconds

    def to_dict(self) -> dict:
        return asdict(self)


def default_workers() -> int:
    return os.cpu_count() or 1


def _as_array(ds) -> np.ndarray:
    data = ds.data if isinstance(ds, DescriptorSet) else ds
    return np.ascontiguousarray(data, dtype=np.float32)


def pair_weights(data: np.ndarray, rows, cols) -> np.ndarray:
    """Cosine similarity of each ``(rows[k], cols[k])`` pair as float32.

    Accumulated in float64 in a fixed order, so the result does not depend
    on which other pairs are scored alongside it.
    """
    rows = np.ascontiguousarray(rows, dtype=np.int64)
    cols = np.ascontiguousarray(cols, dtype=np.int64)
    return _kernels.pair_dots(np.ascontiguousarray(data, dtype=np.float32), rows, cols)


def _bucket_keys(data, ids, cutoff, block=_BUCKET_BLOCK):
    """Keys of all ``i < j`` pairs in ``ids`` whose float32 product is ``>= cutoff``."""
    m = ids.size
    if m < 2:
        return None, 0
    x = data[ids]
    parts = []
    for a in range(0, m, block):
        g = x[a:a + block] @ x[a:].T
        keys = _kernels.scan_upper(g, a, a, cutoff, ids)
        if keys.size:
            parts.append(keys)
    evaluations = m * (m - 1) // 2
    if not parts:
        return None, evaluations
    return np.concatenate(parts), evaluations


class _KeyPool:
    """Candidate keys from many workers, compacted with ``np.unique`` as they pile up."""

    def __init__(self):
        self.parts = []
        self.size = 0
        self.pushed = 0
        self.compact_at = _COMPACT_AT

    def add(self, keys):
        self.parts.append(keys)
        self.size += keys.size
        self.pushed += keys.size
        if self.size > self.compact_at:
            self.unique()
            self.compact_at = max(_COMPACT_AT, 2 * self.size)

    def unique(self) -> np.ndarray:
        keys = np.unique(np.concatenate(self.parts)) if self.parts else np.empty(0, np.uint64)
        self.parts = [keys]
        self.size = keys.size
        return keys


def _finalize(pool: _KeyPool, data, threshold) -> CsrMatrix:
    """Dedup candidates, re-score exactly and keep edges ``>= threshold``."""
    keys = pool.unique()
    rows = (keys >> np.uint64(32)).astype(np.int64)
    cols = (keys & _LOW32).astype(np.int64)
    w = pair_weights(data, rows, cols)
    keep = w >= np.float32(threshold)
    coo = CooMatrix(data.shape[0], threshold=threshold)
    # Unique keys are already in (row, col) order, so no second sort is needed.
    coo._replace(rows[keep].astype(np.uint32), cols[keep].astype(np.uint32), w[keep], True)
    return coo_to_csr(coo)


def bucket_allpairs(bucket, ds, out: CooMatrix) -> int:
    """Push every unordered pair of ``bucket`` into ``out``; return the pair count.

    Edges below ``out.threshold`` are not stored.
    """
    data = _as_array(ds)
    ids = np.unique(np.asarray(bucket, dtype=np.int64))
    keys, evaluations = _bucket_keys(data, ids, np.float32(out.threshold - _SLACK))
    if keys is not None:
        rows = (keys >> np.uint64(32)).astype(np.int64)
        cols = (keys & _LOW32).astype(np.int64)
        out.push_many(rows, cols, pair_weights(data, rows, cols))
    return evaluations


def _run_buckets(method, data, table, threshold, workers, max_bucket_warn, report, t0):
    t1 = time.perf_counter()
    report.projection_seconds = t1 - t0
    cutoff = np.float32(threshold - _SLACK)
    pool = _KeyPool()

    def work(ids):
        return _bucket_keys(data, ids, cutoff)

    with ThreadPoolExecutor(max_workers=workers) as ex:
        for t in range(table.tables):
            buckets = list(table.buckets(t))
            for ids in buckets:
                if max_bucket_warn and ids.size > max_bucket_warn:
                    logger.warning("table %d: bucket of %d items exceeds %d",
                                   t, ids.size, max_bucket_warn)
                report.max_bucket = max(report.max_bucket, int(ids.size))
            results = ex.map(work, buckets) if workers > 1 else map(work, buckets)
            for keys, ev in results:
                report.edges_considered += ev
                if keys is not None:
                    pool.add(keys)
    report.edges_pushed = pool.pushed
    graph = _finalize(pool, data, threshold)
    report.creation_seconds = time.perf_counter() - t1
    report.edges_kept = graph.nnz
    logger.info("%s graph: %d edges kept of %d pairs evaluated",
                method, graph.nnz, report.edges_considered)
    return graph, report


def _check_input(data):
    if data.shape[0] < 2:
        raise ValueError("at least two items are needed to build a graph")
    if data.shape[0] >= 1 << 32:
        raise ValueError("item ids must fit in 32 bits")


def build_lsh_graph(ds, f: HashFamily, threshold: float = DEFAULT_THRESHOLD, *,
                    workers: int = 1, max_bucket_warn: int | None = None):
    """LSH kNN graph: union of brute-force subgraphs over all buckets.

    Returns:
        ``(graph, report)``: the upper-triangular :class:`CsrMatrix` and a
        :class:`BuildReport`.
    """
    data = _as_array(ds)
    _check_input(data)
    report = BuildReport("lsh", {"bits": f.delta, "tables": f.tables,
                                 "threshold": threshold, "seed": f.seed})
    t0 = time.perf_counter()
    table = assign_buckets(f, data)
    return _run_buckets("lsh", data, table, threshold, workers, max_bucket_warn, report, t0)


def build_multiprobe_graph(ds, f: HashFamily, gamma: float = 0.5,
                           threshold: float = DEFAULT_THRESHOLD, *, rng=None,
                           workers: int = 1, max_bucket_warn: int | None = None):
    """Multi-probe variant: items are also placed in random 1-neighbour buckets."""
    data = _as_array(ds)
    _check_input(data)
    report = BuildReport("multi_probe", {"bits": f.delta, "tables": f.tables, "gamma": gamma,
                                         "threshold": threshold, "seed": f.seed})
    t0 = time.perf_counter()
    table = assign_buckets_multiprobe(f, data, gamma, rng)
    return _run_buckets("multi_probe", data, table, threshold, workers, max_bucket_warn,
                        report, t0)


def build_bruteforce_graph(ds, threshold: float = DEFAULT_THRESHOLD, *, workers: int = 1):
    """Exact graph over all ``C(n, 2)`` pairs; the reference for recall and accuracy."""
    data = _as_array(ds)
    _check_input(data)
    n = data.shape[0]
    ids = np.arange(n, dtype=np.int64)
    cutoff = np.float32(threshold - _SLACK)
    report = BuildReport("brute_force", {"threshold": threshold})
    t0 = time.perf_counter()
    pool = _KeyPool()

    def work(a):
        b = min(a + _BLOCK, n)
        parts = []
        for c0 in range(a, n, _TILE):
            g = data[a:b] @ data[c0:c0 + _TILE].T
            parts.append(_kernels.scan_upper(g, a, c0, cutoff, ids))
        return np.concatenate(parts)

    starts = range(0, n, _BLOCK)
    with ThreadPoolExecutor(max_workers=workers) as ex:
        for keys in (ex.map(work, starts) if workers > 1 else map(work, starts)):
            pool.add(keys)
    report.edges_considered = n * (n - 1) // 2
    report.edges_pushed = pool.pushed
    graph = _finalize(pool, data, threshold)
    report.creation_seconds = time.perf_counter() - t0
    report.edges_kept = graph.nnz
    return graph, report


def build_graph(ds, method: str = "lsh", *, bits: int = 6, tables: int = 20, gamma: float = 0.5,
                threshold: float = DEFAULT_THRESHOLD, seed: int = 0, workers: int = 1,
                max_bucket_warn: int | None = None, family: HashFamily | None = None):
    """Dispatch to one of the builders by name (``lsh``, ``multiprobe``, ``bruteforce``)."""
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    if method == "bruteforce":
        return build_bruteforce_graph(ds, threshold, workers=workers)
    data = _as_array(ds)
    if family is None:
        family = HashFamily.random(data.shape[1], bits, tables, seed)
    if method == "lsh":
        return build_lsh_graph(data, family, threshold, workers=workers,
                               max_bucket_warn=max_bucket_warn)
    return build_multiprobe_graph(data, family, gamma, threshold, workers=workers,
                                  max_bucket_warn=max_bucket_warn)
