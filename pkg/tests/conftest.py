import numpy as np
import pytest

from lshknn.sparse import CooMatrix, coo_sort_dedup, coo_to_csr

# Acceptance outcomes, printed once at the end of the session.
CRITERIA: list[tuple[str, bool, str]] = []


def record(name: str, ok: bool, detail: str = "") -> None:
    CRITERIA.append((name, bool(ok), detail))
    print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in CRITERIA:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")


def graph_from_edges(n, edges, threshold=0.0):
    """Upper-triangular CsrMatrix from ``(i, j, w)`` triples."""
    coo = CooMatrix(n, threshold=threshold)
    if edges:
        i, j, w = zip(*edges)
        coo.push_many(i, j, w)
    coo_sort_dedup(coo)
    return coo_to_csr(coo)


def random_connected_graph(rng, n, extra=0.05):
    """Random spanning tree plus random extra edges, weights in [0.3, 1]."""
    perm = rng.permutation(n)
    edges = [(int(perm[k]), int(perm[rng.integers(k)]), rng.uniform(0.3, 1.0))
             for k in range(1, n)]
    m = int(extra * n * (n - 1) / 2)
    i, j = rng.integers(n, size=m), rng.integers(n, size=m)
    edges += [(int(a), int(b), rng.uniform(0.3, 1.0)) for a, b in zip(i, j) if a != b]
    return graph_from_edges(n, edges)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
