import os
import subprocess
import sys

import numpy as np
import pytest

from langtopo import _fallback, kernels

from conftest import small_graph


def naive_mean(g, h):
    out = np.zeros_like(h)
    for u in range(g.n):
        nb = list(g.neighbors(u))
        if nb:
            out[u] = sum(h[v] for v in nb) / len(nb)
    return out


def test_backend_selected():
    assert kernels.BACKEND in ("cython", "numpy")


@pytest.mark.parametrize("seed", range(4))
def test_neighbor_mean_matches_naive_loop(seed):
    g = small_graph(n=15, seed=seed, p=0.2)
    h = np.random.default_rng(seed).standard_normal((15, 4))
    assert np.allclose(kernels.neighbor_mean(g.indptr, g.indices, h), naive_mean(g, h), atol=1e-12)


@pytest.mark.parametrize("seed", range(4))
def test_backends_agree(seed):
    g = small_graph(n=40, seed=seed, p=0.1)
    rng = np.random.default_rng(seed)
    h = rng.standard_normal((40, 5))
    a = kernels.neighbor_mean(g.indptr, g.indices, h)
    b = _fallback.neighbor_mean(g.indptr, g.indices, h)
    assert np.allclose(a, b, atol=1e-12)
    a = kernels.neighbor_mean_transpose(g.indptr, g.indices, h)
    b = _fallback.neighbor_mean_transpose(g.indptr, g.indices, h)
    assert np.allclose(a, b, atol=1e-12)


def test_transpose_is_adjoint():
    g = small_graph(n=20, seed=9, p=0.2)
    rng = np.random.default_rng(9)
    x, y = rng.standard_normal((20, 3)), rng.standard_normal((20, 3))
    lhs = np.sum(kernels.neighbor_mean(g.indptr, g.indices, x) * y)
    rhs = np.sum(x * kernels.neighbor_mean_transpose(g.indptr, g.indices, y))
    assert lhs == pytest.approx(rhs, abs=1e-12)


def test_isolated_nodes_get_zero():
    from langtopo.graph import Graph
    g = Graph.build(3, [(0, 1)], np.ones((3, 1)), np.zeros(3, int), ["train"] * 3)
    out = kernels.neighbor_mean(g.indptr, g.indices, np.array([[1.0], [2.0], [3.0]]))
    assert out.tolist() == [[2.0], [1.0], [0.0]]


def test_pure_python_switch():
    code = "import langtopo.kernels as k; print(k.BACKEND)"
    env = dict(os.environ, LANGTOPO_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"
