"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

The lines are also collected into the "acceptance criteria" section at the
end of the pytest report (see conftest.py).
"""

import os
import time
from pathlib import Path

import numpy as np
import pytest

from lshknn.cli import run
from lshknn.datasets import make_queries, make_sphere_clusters
from lshknn.diffusion import (DiffusionParams, diffuse_queries, normalized_operator,
                              solve_diffusion)
from lshknn.eval import (GroundTruth, QueryTruth, average_precision, edge_recall,
                         mean_average_precision, read_ground_truth, weight_mismatches)
from lshknn.graphbuild import build_graph, build_lsh_graph, build_multiprobe_graph
from lshknn.lsh import HashFamily
from lshknn.sparse import CooMatrix, coo_sort_dedup, coo_to_csr, sym_lookup, sym_normalize
from lshknn.vecstore import load_fvecs, write_fvecs

from conftest import graph_from_edges, random_connected_graph, record

SEED = 0


@pytest.fixture(scope="module")
def clustered():
    """n=5000, d=64, 50 clusters on the unit sphere, one held-out query per cluster."""
    x, labels, centers = make_sphere_clusters(5000, dim=64, n_clusters=50, spread=0.1,
                                              random_state=SEED)
    q, qlabels = make_queries(centers, spread=0.1, random_state=SEED + 1)
    return x, labels, q, qlabels


@pytest.fixture(scope="module")
def graphs(clustered):
    x = clustered[0]
    t0 = time.perf_counter()
    lsh, lrep = build_graph(x, "lsh", bits=6, tables=20, seed=SEED)
    bf, brep = build_graph(x, "bruteforce")
    return lsh, lrep, bf, brep, time.perf_counter() - t0


def test_oracle_subset_and_recall(graphs):
    t0 = time.perf_counter()
    lsh, lrep, bf, brep, build_s = graphs
    mismatches = weight_mismatches(lsh, bf)
    recall = edge_recall(lsh, bf)
    all_pairs = brep.edges_considered
    frac_all = lrep.edges_kept / all_pairs
    frac_kept = lrep.edges_kept / brep.edges_kept
    runtime = build_s + time.perf_counter() - t0
    ok = mismatches == 0 and recall >= 0.6 and frac_all <= 0.05 and runtime < 60
    record("oracle subset & recall", ok,
           f"weight mismatches={mismatches}, recall={recall:.4f} (>=0.6), "
           f"LSH edges / C(n,2)={frac_all:.4f} (<=0.05), "
           f"LSH edges / thresholded brute-force edges={frac_kept:.4f}, runtime={runtime:.1f}s")
    assert mismatches == 0
    assert recall >= 0.6
    assert frac_all <= 0.05
    assert runtime < 60


def test_diffusion_accuracy_parity(clustered, graphs):
    t0 = time.perf_counter()
    x, labels, q, qlabels = clustered
    lsh, _, bf, _, build_s = graphs
    gt = GroundTruth.from_labels(qlabels, labels)
    assert len(gt) == 50
    maps = {}
    for name, g in (("lsh", lsh), ("bruteforce", bf)):
        S, _ = normalized_operator(g)
        maps[name] = mean_average_precision(diffuse_queries(q, x, S, DiffusionParams()), gt)
    runtime = build_s + time.perf_counter() - t0
    ok = maps["lsh"] >= maps["bruteforce"] - 0.02 and runtime < 120
    record("diffusion accuracy parity", ok,
           f"mAP lsh={maps['lsh']:.4f}, bruteforce={maps['bruteforce']:.4f} "
           f"(gap must be <=0.02), runtime={runtime:.1f}s")
    assert maps["lsh"] >= maps["bruteforce"] - 0.02
    assert runtime < 120


@pytest.mark.slow
def test_speed_direction():
    t_start = time.perf_counter()
    # 500 clusters keeps 100 points per cluster, as in the n=5000 dataset.
    x, _, _ = make_sphere_clusters(50_000, dim=64, n_clusters=500, spread=0.1,
                                   random_state=SEED)
    warm = x[:2000]
    build_graph(warm, "lsh", bits=6, tables=2, seed=SEED)
    build_graph(warm, "bruteforce")
    t0 = time.perf_counter()
    _, lrep = build_graph(x, "lsh", bits=6, tables=20, seed=SEED, workers=1)
    t_lsh = time.perf_counter() - t0
    t0 = time.perf_counter()
    _, brep = build_graph(x, "bruteforce", workers=1)
    t_bf = time.perf_counter() - t0
    ratio = t_lsh / t_bf
    runtime = time.perf_counter() - t_start
    ok = ratio <= 0.5 and runtime < 1800
    record("speed direction", ok,
           f"LSH {t_lsh:.2f}s vs brute force {t_bf:.2f}s, ratio={ratio:.3f} (<=0.5); "
           f"pairs evaluated {lrep.edges_considered / brep.edges_considered:.3f} of C(n,2); "
           f"runtime={runtime:.1f}s")
    assert t_lsh < t_bf
    assert ratio <= 0.5
    assert runtime < 1800


def test_solver_correctness():
    t0 = time.perf_counter()
    rng = np.random.default_rng(SEED)
    params = DiffusionParams()
    worst = 0.0
    for _ in range(60):
        n = int(rng.integers(2, 201))
        S, iso = sym_normalize(random_connected_graph(rng, n, extra=float(rng.uniform(0, 0.1))))
        assert iso.size == 0
        y = rng.random(n) * (rng.random(n) < 0.5)
        y[rng.integers(n)] = 1.0
        res = solve_diffusion(S, y, params)
        direct = np.linalg.solve(np.eye(n) - params.alpha * S.toarray(), (1 - params.alpha) * y)
        worst = max(worst, np.linalg.norm(res.scores - direct) / np.linalg.norm(direct))
    S2, _ = sym_normalize(graph_from_edges(2, [(0, 1, 1.0)]))
    f2 = solve_diffusion(S2, [1.0, 0.0], DiffusionParams(alpha=0.5)).scores
    err2 = float(np.abs(f2 - [2 / 3, 1 / 3]).max())
    runtime = time.perf_counter() - t0
    ok = worst <= 1e-5 and err2 <= 1e-9 and runtime < 10
    record("solver correctness", ok,
           f"60 graphs, worst relative error={worst:.2e} (<=1e-5), "
           f"n=2 error={err2:.1e} (<=1e-9), runtime={runtime:.2f}s")
    assert worst <= 1e-5
    assert err2 <= 1e-9
    assert runtime < 10


def test_sparse_format_correctness():
    t0 = time.perf_counter()
    rng = np.random.default_rng(SEED)
    dedup_ok = roundtrip_ok = True
    for _ in range(1000):
        n = int(rng.integers(2, 51))
        k = int(rng.integers(0, 80))
        i, j = rng.integers(0, n, k), rng.integers(0, n, k)
        keep = i != j
        i, j = i[keep], j[keep]
        w = rng.choice(np.linspace(0.3, 1.0, 8), size=i.size).astype(np.float32)
        m = CooMatrix(n, threshold=0.3)
        m.push_many(i, j, w)
        coo_sort_dedup(m)
        oracle = {}
        for a, b, v in zip(i.tolist(), j.tolist(), w.tolist()):
            key = (min(a, b), max(a, b))
            oracle[key] = max(oracle.get(key, -1.0), v)
        r, c, v = m.triplets()
        dedup_ok &= list(zip(r.tolist(), c.tolist(), v.tolist())) == sorted(
            (a, b, x) for (a, b), x in oracle.items())
        r2, c2, v2 = coo_to_csr(m).to_coo()
        roundtrip_ok &= (np.array_equal(r2, r) and np.array_equal(c2, c)
                         and v2.tobytes() == v.tobytes())
    g = random_connected_graph(rng, 60, extra=0.2)
    pairs = rng.integers(0, 60, size=(1000, 2))
    lookup_ok = all(sym_lookup(g, int(a), int(b)) == sym_lookup(g, int(b), int(a))
                    for a, b in pairs)
    runtime = time.perf_counter() - t0
    ok = dedup_ok and roundtrip_ok and lookup_ok and runtime < 5
    record("sparse-format correctness", ok,
           f"sort-dedup vs set oracle={dedup_ok}, COO->CSR->COO exact={roundtrip_ok}, "
           f"symmetric lookup={lookup_ok}, runtime={runtime:.2f}s")
    assert dedup_ok and roundtrip_ok and lookup_ok
    assert runtime < 5


def _edge_map(g):
    r, c, w = g.to_coo()
    return dict(zip(zip(r.tolist(), c.tolist()), w.tolist()))


def test_multiprobe_containment():
    t0 = time.perf_counter()
    x, _, _ = make_sphere_clusters(3000, dim=32, n_clusters=30, spread=0.15, random_state=SEED)
    f = HashFamily.random(32, 6, 20, seed=SEED)
    plain, _ = build_lsh_graph(x, f)
    probed, _ = build_multiprobe_graph(x, f, gamma=0.5)
    contained = set(_edge_map(plain)) <= set(_edge_map(probed))
    equal_all = True
    rng = np.random.default_rng(SEED)
    for n in (2, 3, 17, 100, 250, 500):
        for dim in (2, 8, 64):
            data = rng.standard_normal((n, dim)).astype(np.float32)
            data /= np.linalg.norm(data, axis=1, keepdims=True)
            fam = HashFamily.random(dim, 1, 1, seed=int(rng.integers(1 << 31)))
            mp, _ = build_multiprobe_graph(data, fam, gamma=1.0)
            bf, _ = build_graph(data, "bruteforce")
            equal_all &= _edge_map(mp) == _edge_map(bf)
    runtime = time.perf_counter() - t0
    ok = contained and equal_all and runtime < 10
    record("multi-probe containment", ok,
           f"gamma=0.5 superset of plain LSH={contained} ({len(_edge_map(probed))} vs "
           f"{len(_edge_map(plain))} edges), gamma=1 delta=1 L=1 equals brute force on 18 "
           f"datasets={equal_all}, runtime={runtime:.2f}s")
    assert contained and equal_all
    assert runtime < 10


def _ap_oracle(ranking, relevant, ignore):
    hits, total, rank = 0, 0.0, 0
    for item in ranking:
        if item in ignore:
            continue
        rank += 1
        if item in relevant:
            hits += 1
            total += hits / rank
    return total / len(relevant)


def test_map_evaluator():
    t0 = time.perf_counter()
    examples = [([0, 1], {0}, 1.0), ([1, 0], {0}, 0.5), ([0, 1, 2], {0, 2}, (1 / 1 + 2 / 3) / 2)]
    exact = all(average_precision(r, QueryTruth(rel)) == want for r, rel, want in examples)
    rng = np.random.default_rng(SEED)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 60))
        ranking = rng.permutation(n + 10)[:n].tolist()
        pool = rng.permutation(n + 10)
        n_rel = int(rng.integers(1, 8))
        relevant = set(pool[:n_rel].tolist())
        ignore = set(pool[n_rel:n_rel + int(rng.integers(0, 5))].tolist())
        got = average_precision(ranking, QueryTruth(relevant, ignore))
        worst = max(worst, abs(got - _ap_oracle(ranking, relevant, ignore)))
    runtime = time.perf_counter() - t0
    ok = exact and worst <= 1e-9 and runtime < 5
    record("mAP evaluator", ok,
           f"hand examples exact={exact}, 100 random instances max |diff|={worst:.1e} "
           f"(<=1e-9), runtime={runtime:.2f}s")
    assert exact
    assert worst <= 1e-9
    assert runtime < 5


def test_determinism(tmp_path):
    t0 = time.perf_counter()
    x, _, _ = make_sphere_clusters(5000, dim=64, n_clusters=50, spread=0.1, random_state=SEED)
    src = tmp_path / "d.fvecs"
    write_fvecs(src, x)
    digests = {}
    for workers in (1, 8):
        for attempt in range(2):
            out = tmp_path / f"g_{workers}_{attempt}.aknn"
            code = run(["build-graph", "--input", str(src), "--method", "lsh", "--bits", "6",
                        "--tables", "20", "--seed", "7", "--workers", str(workers),
                        "--output", str(out)], out=open(os.devnull, "w"))
            assert code == 0
            digests[(workers, attempt)] = out.read_bytes()
    same_w1 = digests[(1, 0)] == digests[(1, 1)]
    same_w8 = digests[(8, 0)] == digests[(8, 1)]
    across = digests[(1, 0)] == digests[(8, 0)]
    runtime = time.perf_counter() - t0
    ok = same_w1 and same_w8 and runtime < 120
    record("determinism", ok,
           f"byte-identical reruns with 1 worker={same_w1}, with 8 workers={same_w8}, "
           f"1 vs 8 workers identical={across}, runtime={runtime:.1f}s")
    assert same_w1 and same_w8 and across
    assert runtime < 120


REAL = os.environ.get("LSHKNN_REAL_DATA")


@pytest.mark.skipif(not REAL, reason="set LSHKNN_REAL_DATA to a directory with "
                                     "base.fvecs, queries.fvecs and gt.txt")
def test_real_data_track():
    """Non-gating: user-supplied Oxford5k R-MAC descriptors, target mAP 90.95 +- 1.5."""
    root = Path(REAL)
    ds = load_fvecs(root / "base.fvecs", normalize=True)
    q = load_fvecs(root / "queries.fvecs", normalize=True)
    gt = read_ground_truth(root / "gt.txt")
    g, _ = build_graph(ds, "lsh", bits=6, tables=20, threshold=0.3, seed=SEED)
    S, _ = normalized_operator(g)
    m = mean_average_precision(diffuse_queries(q.data, ds, S, DiffusionParams(alpha=0.99)), gt)
    ok = abs(100 * m - 90.95) <= 1.5
    record("real-data track (non-gating)", ok, f"mAP={100 * m:.2f} (target 90.95 +- 1.5)")
    if not ok:
        pytest.xfail(f"mAP {100 * m:.2f} outside 90.95 +- 1.5")
