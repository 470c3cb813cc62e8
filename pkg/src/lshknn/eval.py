"""Retrieval and graph-quality metrics, plus ground-truth and rankings files.

Ground-truth file, one block per query::

    query 0
    relevant 3 17 42
    ignore 0

Rankings file: one line per query made of ``query_index item_id score``
triples in rank order, scores with six decimals.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .diffusion import RankedList
from .sparse import CsrMatrix


@dataclass(frozen=True)
class QueryTruth:
    relevant: frozenset
    ignore: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, "relevant", frozenset(int(i) for i in self.relevant))
        object.__setattr__(self, "ignore", frozenset(int(i) for i in self.ignore))
        both = self.relevant & self.ignore
        if both:
            raise ValueError(f"ids both relevant and ignored: {sorted(both)[:5]}")


class GroundTruth(dict):
    """Mapping ``query index -> QueryTruth``."""

    @classmethod
    def from_labels(cls, query_labels, item_labels, ignore=None):
        """Relevant items of query ``k`` are those sharing its label."""
        item_labels = np.asarray(item_labels)
        gt = cls()
        for k, lab in enumerate(query_labels):
            ign = () if ignore is None else ignore[k]
            gt[k] = QueryTruth(np.flatnonzero(item_labels == lab), ign)
        return gt


def read_ground_truth(path) -> GroundTruth:
    gt = GroundTruth()
    current = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            head, rest = parts[0], parts[1:]
            try:
                values = [int(v) for v in rest]
            except ValueError:
                raise ValueError(f"{path}:{lineno}: non-integer id") from None
            if head == "query":
                if len(values) != 1:
                    raise ValueError(f"{path}:{lineno}: expected 'query <index>'")
                current = values[0]
                if current in gt:
                    raise ValueError(f"{path}:{lineno}: duplicate query {current}")
                gt[current] = None
            elif head in ("relevant", "ignore"):
                if current is None:
                    raise ValueError(f"{path}:{lineno}: '{head}' before any 'query' line")
                rel, ign = gt[current] or (None, None)
                if head == "relevant":
                    rel = values
                else:
                    ign = values
                gt[current] = (rel, ign)
            else:
                raise ValueError(f"{path}:{lineno}: unknown keyword {head!r}")
    for q, v in gt.items():
        if v is None or v[0] is None:
            raise ValueError(f"{path}: query {q} has no 'relevant' line")
        gt[q] = QueryTruth(v[0], v[1] or ())
    return gt


def write_ground_truth(path, gt) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for q in sorted(gt):
            t = gt[q]
            fh.write(f"query {q}\n")
            fh.write("relevant " + " ".join(map(str, sorted(t.relevant))) + "\n")
            if t.ignore:
                fh.write("ignore " + " ".join(map(str, sorted(t.ignore))) + "\n")


def write_rankings(path_or_file, rankings) -> None:
    def emit(fh):
        for r in rankings:
            q = str(r.query)
            fh.write(" ".join(f"{q} {i} {s:.6f}" for i, s in zip(r.ids.tolist(), r.scores.tolist())))
            fh.write("\n")

    if hasattr(path_or_file, "write"):
        emit(path_or_file)
    else:
        with open(path_or_file, "w", encoding="utf-8") as fh:
            emit(fh)


def read_rankings(path) -> list[RankedList]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) % 3:
                raise ValueError(f"{path}:{lineno}: expected 'query item score' triples")
            t = np.array(parts, dtype=object).reshape(-1, 3)
            queries = set(t[:, 0])
            if len(queries) != 1:
                raise ValueError(f"{path}:{lineno}: mixed query indices on one line")
            ids = t[:, 1].astype(np.int64)
            if np.unique(ids).size != ids.size:
                raise ValueError(f"{path}:{lineno}: repeated item id")
            out.append(RankedList(int(t[0, 0]), ids, t[:, 2].astype(np.float64)))
    return out


def _ranked_ids(ranking) -> np.ndarray:
    if isinstance(ranking, RankedList):
        return ranking.ids
    return np.asarray([r[0] if isinstance(r, tuple) else r for r in ranking], dtype=np.int64)


def average_precision(ranking, truth: QueryTruth) -> float:
    """Non-interpolated AP: mean precision at the rank of each relevant item.

    Ignored ids are dropped from the ranking first; relevant items that are
    never retrieved contribute 0.
    """
    if not truth.relevant:
        raise ValueError("average precision needs at least one relevant item")
    ids = _ranked_ids(ranking)
    if truth.ignore:
        ids = ids[~np.isin(ids, np.fromiter(truth.ignore, np.int64))]
    hit = np.isin(ids, np.fromiter(truth.relevant, np.int64))
    ranks = np.flatnonzero(hit) + 1
    precision = np.arange(1, ranks.size + 1) / ranks
    return float(precision.sum() / len(truth.relevant))


def mean_average_precision(rankings, gt, return_aps: bool = False):
    """Mean of per-query APs.

    ``rankings`` is a sequence of :class:`RankedList` matched to ``gt`` by
    their ``query`` field, or a plain sequence matched to ``sorted(gt)``.
    """
    rankings = list(rankings)
    if len(rankings) != len(gt):
        raise ValueError(f"{len(rankings)} rankings for {len(gt)} ground-truth queries")
    if all(isinstance(r, RankedList) for r in rankings):
        pairs = []
        for r in rankings:
            if r.query not in gt:
                raise ValueError(f"no ground truth for query {r.query}")
            pairs.append((r, gt[r.query]))
    else:
        pairs = list(zip(rankings, (gt[q] for q in sorted(gt))))
    aps = np.array([average_precision(r, t) for r, t in pairs])
    m = float(aps.mean()) if aps.size else 0.0
    return (m, aps) if return_aps else m


def edge_recall(approx: CsrMatrix, oracle: CsrMatrix) -> float:
    """Fraction of oracle edges present in ``approx`` (compared as ``(row, col)`` pairs).

    An oracle without edges gives 1.0.
    """
    if approx.n != oracle.n:
        raise ValueError(f"size mismatch: {approx.n} vs {oracle.n} nodes")
    if oracle.nnz == 0:
        return 1.0
    common = np.intersect1d(approx.edge_keys(), oracle.edge_keys(), assume_unique=True)
    return common.size / oracle.nnz


def weight_mismatches(approx: CsrMatrix, oracle: CsrMatrix) -> int:
    """Count edges of ``approx`` that are absent from ``oracle`` or carry another weight."""
    if approx.n != oracle.n:
        raise ValueError(f"size mismatch: {approx.n} vs {oracle.n} nodes")
    ka, ko = approx.edge_keys(), oracle.edge_keys()
    pos = np.searchsorted(ko, ka)
    pos = np.minimum(pos, max(ko.size - 1, 0))
    if ko.size == 0:
        return int(ka.size)
    found = ko[pos] == ka
    same = found & (oracle.values[pos] == approx.values)
    return int(ka.size - same.sum())
