import numpy as np
import pytest

from langtopo.graph import Graph, SbmSpec, generate_sbm


def small_graph(n=10, seed=0, d_in=6, p=0.3, classes=3):
    rng = np.random.default_rng(seed)
    iu, iv = np.triu_indices(n, 1)
    keep = rng.random(len(iu)) < p
    edges = np.stack([iu[keep], iv[keep]], 1)
    x = rng.standard_normal((n, d_in))
    y = rng.integers(0, classes, n)
    split = np.array(["train", "val", "test"])[np.arange(n) % 3]
    return Graph.build(n, edges, x, y, split, classes)


def path_graph(n, d_in=3):
    edges = [(i, i + 1) for i in range(n - 1)]
    x = np.arange(n * d_in, dtype=float).reshape(n, d_in) + 1.0
    return Graph.build(n, edges, x, np.zeros(n, dtype=int), ["train"] * n, 1)


@pytest.fixture
def graph10():
    return small_graph()


@pytest.fixture(scope="session")
def sbm300():
    return generate_sbm(SbmSpec(n=300, blocks=3, p_in=0.1, p_out=0.01, seed=0))


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report():
    """Record one pass/fail line for the acceptance summary."""
    def record(number: int, ok: bool, detail: str):
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
