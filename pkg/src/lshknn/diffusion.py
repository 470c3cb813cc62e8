"""Diffusion re-ranking on a normalized affinity graph.

A query is turned into a seed vector ``y`` over the dataset (its top-k
cosine neighbours) and scores are propagated by solving

    (I - alpha * S) f = (1 - alpha) * y

with the conjugate gradient method, where ``S = D^-1/2 W D^-1/2``. For
``0 < alpha < 1`` and a spectral radius of ``S`` at most one the system is
symmetric positive definite.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .sparse import CsrMatrix, sym_normalize
from .vecstore import DescriptorSet

logger = logging.getLogger(__name__)


class NonConvergenceError(RuntimeError):
    """Raised in strict mode when the solver exhausts its iteration budget."""


@dataclass(frozen=True)
class DiffusionParams:
    """Solver settings. ``tolerance`` is relative to ``||(1 - alpha) y||``."""

    alpha: float = 0.99
    k_seed: int = 10
    tolerance: float = 1e-6
    max_iters: int = 200

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if int(self.k_seed) != self.k_seed or self.k_seed < 1:
            raise ValueError(f"k_seed must be a positive integer, got {self.k_seed}")
        if not self.tolerance > 0:
            raise ValueError(f"tolerance must be positive, got {self.tolerance}")
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise ValueError(f"max_iters must be a positive integer, got {self.max_iters}")

    def check_count(self, count: int) -> None:
        if self.k_seed > count:
            raise ValueError(f"k_seed={self.k_seed} exceeds dataset count {count}")


@dataclass(frozen=True)
class RankedList:
    """Items of one query by descending score; ties by ascending id."""

    query: int
    ids: np.ndarray
    scores: np.ndarray
    converged: bool = True
    iterations: int = 0

    def __post_init__(self):
        ids = np.asarray(self.ids, dtype=np.int64)
        scores = np.asarray(self.scores, dtype=np.float64)
        if ids.shape != scores.shape or ids.ndim != 1:
            raise ValueError("ids and scores must be 1-D arrays of equal length")
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "scores", scores)

    def __len__(self):
        return self.ids.size

    @property
    def entries(self) -> list[tuple[int, float]]:
        return list(zip(self.ids.tolist(), self.scores.tolist()))

    def top(self, k: int) -> "RankedList":
        return RankedList(self.query, self.ids[:k], self.scores[:k], self.converged,
                          self.iterations)


@dataclass
class SolveResult:
    scores: np.ndarray
    converged: bool
    iterations: int
    residual: float = field(default=np.inf)


def _data(ds):
    return ds.data if isinstance(ds, DescriptorSet) else np.asarray(ds, dtype=np.float32)


def _ids(ds, n):
    return ds.ids if isinstance(ds, DescriptorSet) else np.arange(n, dtype=np.int64)


def seed_vector(q, ds, k_seed: int) -> np.ndarray:
    """Dense length-``count`` vector holding the query's top-``k_seed`` similarities.

    The ``k_seed`` positions with the largest cosine similarity to ``q``
    (ties to the lower index) receive that similarity clamped below at 0;
    every other entry is 0.
    """
    data = _data(ds)
    n = data.shape[0]
    if k_seed < 1:
        raise ValueError("k_seed must be positive")
    if k_seed > n:
        raise ValueError(f"k_seed={k_seed} exceeds dataset count {n}")
    q = np.asarray(q, dtype=np.float64).ravel()
    if q.size != data.shape[1]:
        raise ValueError(f"query has dimension {q.size}, dataset has {data.shape[1]}")
    sims = data.astype(np.float64) @ q
    top = np.argsort(-sims, kind="stable")[:k_seed]
    y = np.zeros(n, dtype=np.float64)
    y[top] = np.maximum(sims[top], 0.0)
    return y


def as_operator(S) -> sp.csr_matrix:
    """Return the normalized matrix as scipy CSR (float64)."""
    if isinstance(S, CsrMatrix):
        if S.upper:
            raise ValueError("expected a normalized matrix; call sym_normalize first")
        return S.to_scipy(np.float64)
    if sp.issparse(S):
        return sp.csr_matrix(S, dtype=np.float64)
    return sp.csr_matrix(np.asarray(S, dtype=np.float64))


def solve_diffusion(S, y, params: DiffusionParams = DiffusionParams()) -> SolveResult:
    """Solve ``(I - alpha S) f = (1 - alpha) y`` by conjugate gradient.

    When the iteration budget runs out the iterate with the smallest
    residual is returned with ``converged=False``.

    Raises:
        ValueError: if ``y`` is all zeros or the shapes disagree.
    """
    A = S if isinstance(S, sp.csr_matrix) and S.dtype == np.float64 else as_operator(S)
    y = np.asarray(y, dtype=np.float64).ravel()
    n = A.shape[0]
    if A.shape != (n, n) or y.size != n:
        raise ValueError(f"shape mismatch: matrix {A.shape}, seed vector {y.size}")
    if not np.any(y):
        raise ValueError("seed vector is all zeros")
    alpha = params.alpha
    b = (1.0 - alpha) * y
    bnorm = np.linalg.norm(b)
    goal = params.tolerance * bnorm

    def matvec(v):
        return v - alpha * (A @ v)

    x = np.zeros(n)
    r = b.copy()
    p = r.copy()
    rs = r @ r
    best_x, best_res = x.copy(), np.sqrt(rs)
    converged = False
    it = 0
    while it < params.max_iters:
        it += 1
        ap = matvec(p)
        step = rs / (p @ ap)
        x += step * p
        r -= step * ap
        rs_new = r @ r
        res = np.sqrt(rs_new)
        if res <= goal:
            converged = True
            best_x, best_res = x, res
            break
        if res < best_res:
            best_x, best_res = x.copy(), res
        p *= rs_new / rs
        p += r
        rs = rs_new
    residual = float(np.linalg.norm(matvec(best_x) - b) / bnorm)
    if not converged:
        logger.warning("diffusion did not converge in %d iterations (residual %.3g)",
                       params.max_iters, residual)
    return SolveResult(best_x, converged, it, residual)


def _rank(query, ids, f, converged=True, iterations=0) -> RankedList:
    order = np.lexsort((ids, -f))
    return RankedList(query, ids[order], f[order], converged, iterations)


def diffuse_query(q, ds, S, params: DiffusionParams = DiffusionParams(), *,
                  query: int = 0) -> RankedList:
    """Rank every dataset item for one query by its diffusion score."""
    A = as_operator(S)
    data = _data(ds)
    params.check_count(data.shape[0])
    res = solve_diffusion(A, seed_vector(q, data, params.k_seed), params)
    return _rank(query, _ids(ds, data.shape[0]), res.scores, res.converged, res.iterations)


def diffuse_queries(queries, ds, S, params: DiffusionParams = DiffusionParams(), *,
                    workers: int = 1, strict: bool = False) -> list[RankedList]:
    """Diffuse each row of ``queries``; queries run concurrently with ``workers`` threads.

    Raises:
        NonConvergenceError: with ``strict=True`` if any solve fails to converge.
    """
    A = as_operator(S)
    data = _data(ds)
    params.check_count(data.shape[0])
    ids = _ids(ds, data.shape[0])
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float32))

    def one(k):
        res = solve_diffusion(A, seed_vector(queries[k], data, params.k_seed), params)
        return _rank(k, ids, res.scores, res.converged, res.iterations)

    idx = range(queries.shape[0])
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            out = list(ex.map(one, idx))
    else:
        out = [one(k) for k in idx]
    if strict:
        bad = [r.query for r in out if not r.converged]
        if bad:
            raise NonConvergenceError(f"diffusion did not converge for queries {bad}")
    return out


def row_topk(m: CsrMatrix, k: int) -> CsrMatrix:
    """Keep, for every node, only its ``k`` strongest edges.

    An edge survives if either endpoint keeps it, so the result stays
    symmetric. Ties go to the lower neighbour id.
    """
    if k < 1:
        raise ValueError("k must be positive")
    if not m.upper:
        raise ValueError("row_topk applies to raw upper-triangular graphs")
    w = m.to_scipy(np.float32)
    rows = np.repeat(np.arange(m.n), np.diff(w.indptr))
    order = np.lexsort((w.indices, -w.data, rows))
    rank = np.arange(order.size) - w.indptr[rows[order]]
    sel = order[rank < k]
    i, j, v = rows[sel], w.indices[sel], w.data[sel]
    lo, hi = np.minimum(i, j), np.maximum(i, j)
    key = (lo.astype(np.uint64) << np.uint64(32)) | hi.astype(np.uint64)
    key, first = np.unique(key, return_index=True)
    lo, hi, v = lo[first], hi[first], v[first]
    row_ptr = np.zeros(m.n + 1, dtype=np.int64)
    np.cumsum(np.bincount(lo, minlength=m.n), out=row_ptr[1:])
    return CsrMatrix(m.n, row_ptr, hi.astype(np.int64), v.astype(np.float32),
                     upper=True, threshold=m.threshold)


def normalized_operator(graph: CsrMatrix, row_k: int | None = None):
    """``(S, isolated)`` ready for :func:`solve_diffusion`, optionally after :func:`row_topk`."""
    if row_k:
        graph = row_topk(graph, row_k)
    return sym_normalize(graph)
