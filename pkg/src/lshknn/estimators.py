"""scikit-learn style wrappers around graph construction and diffusion."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .diffusion import (DiffusionParams, diffuse_queries, normalized_operator,
                        seed_vector, solve_diffusion)
from .graphbuild import METHODS, build_graph
from .lsh import HashFamily
from .vecstore import DescriptorSet, l2_normalize


def _validated(X, normalize):
    X = check_array(X, dtype=np.float32, ensure_min_samples=1)
    ds = DescriptorSet(X)
    return l2_normalize(ds) if normalize else ds


class LSHKNNGraph(TransformerMixin, BaseEstimator):
    """Build a thresholded cosine affinity graph with sign-random-projection LSH.

    Parameters
    ----------
    method : {"lsh", "multiprobe", "bruteforce"}
    bits, tables : int
        Code length per table and number of tables.
    gamma : float
        Fraction of 1-neighbour buckets probed (``multiprobe`` only).
    threshold : float
        Edges with cosine similarity below this are dropped.
    seed : int
    workers : int
    normalize : bool
        L2-normalize rows before building.

    Attributes
    ----------
    graph_ : CsrMatrix
        Upper-triangular affinity graph.
    report_ : BuildReport
    family_ : HashFamily or None
    n_features_in_ : int
    """

    def __init__(self, method="lsh", bits=6, tables=20, gamma=0.5, threshold=0.3,
                 seed=0, workers=1, normalize=True, max_bucket_warn=None):
        self.method = method
        self.bits = bits
        self.tables = tables
        self.gamma = gamma
        self.threshold = threshold
        self.seed = seed
        self.workers = workers
        self.normalize = normalize
        self.max_bucket_warn = max_bucket_warn

    def fit(self, X, y=None):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        ds = _validated(X, self.normalize)
        self.n_features_in_ = ds.dim
        self.family_ = None
        if self.method != "bruteforce":
            self.family_ = HashFamily.random(ds.dim, self.bits, self.tables, self.seed)
        self.graph_, self.report_ = build_graph(
            ds, self.method, gamma=self.gamma, threshold=self.threshold,
            workers=self.workers, max_bucket_warn=self.max_bucket_warn, family=self.family_,
            bits=self.bits, tables=self.tables, seed=self.seed)
        return self

    def transform(self, X):
        """Bucket codes of ``X``: an ``(n, tables)`` integer array."""
        check_is_fitted(self, "graph_")
        if self.family_ is None:
            raise ValueError("brute-force graphs have no hash codes")
        X = check_array(X, dtype=np.float32)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return np.stack([self.family_.codes(X, t) for t in range(self.family_.tables)], axis=1)

    def affinity_matrix(self):
        """Symmetric scipy CSR affinity matrix of the fitted data."""
        check_is_fitted(self, "graph_")
        return self.graph_.to_scipy()


class DiffusionRanker(BaseEstimator):
    """Rank a fitted collection for external queries by graph diffusion.

    ``fit`` builds the affinity graph with ``graph`` (an :class:`LSHKNNGraph`,
    default settings when ``None``) unless a prebuilt graph is passed.
    """

    def __init__(self, graph=None, alpha=0.99, k_seed=10, tolerance=1e-6, max_iters=200,
                 row_topk=None, normalize=True, workers=1):
        self.graph = graph
        self.alpha = alpha
        self.k_seed = k_seed
        self.tolerance = tolerance
        self.max_iters = max_iters
        self.row_topk = row_topk
        self.normalize = normalize
        self.workers = workers

    def _params(self):
        return DiffusionParams(self.alpha, self.k_seed, self.tolerance, self.max_iters)

    def fit(self, X, y=None, graph=None):
        params = self._params()
        self.dataset_ = _validated(X, self.normalize)
        params.check_count(self.dataset_.count)
        if graph is None:
            builder = LSHKNNGraph() if self.graph is None else self.graph
            builder.fit(self.dataset_.data)
            graph = builder.graph_
        if graph.n != self.dataset_.count:
            raise ValueError(f"graph has {graph.n} nodes, data has {self.dataset_.count} rows")
        self.graph_ = graph
        self.operator_, self.isolated_ = normalized_operator(graph, self.row_topk)
        self.n_features_in_ = self.dataset_.dim
        self._csr = self.operator_.to_scipy()
        return self

    def _queries(self, Q):
        check_is_fitted(self, "operator_")
        Q = _validated(Q, self.normalize).data
        if Q.shape[1] != self.n_features_in_:
            raise ValueError(f"queries have {Q.shape[1]} features, expected {self.n_features_in_}")
        return Q

    def decision_function(self, Q):
        """Diffusion scores, shape ``(n_queries, n_items)``."""
        Q = self._queries(Q)
        params = self._params()
        out = np.empty((Q.shape[0], self.dataset_.count))
        for k, q in enumerate(Q):
            out[k] = solve_diffusion(self._csr, seed_vector(q, self.dataset_, params.k_seed),
                                     params).scores
        return out

    def rank(self, Q, strict=False):
        """One :class:`RankedList` per query row."""
        return diffuse_queries(self._queries(Q), self.dataset_, self._csr, self._params(),
                               workers=self.workers, strict=strict)

    def predict(self, Q):
        """Id of the top-ranked item for each query."""
        return np.array([r.ids[0] for r in self.rank(Q)])
