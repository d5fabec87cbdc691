import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from langtopo import numgrad as ng
from langtopo.gnn import encode_tensors, init_encoder
from langtopo.stage1 import node_recon_loss

from conftest import small_graph


def test_sigmoid_and_softmax_basics():
    assert ng.sigmoid(0.0).item() == 0.5
    assert np.allclose(ng.row_softmax([[0.0, 0.0]]).data, [[0.5, 0.5]])


def test_matmul_against_triple_loop():
    rng = np.random.default_rng(0)
    a, b = rng.standard_normal((2, 3)), rng.standard_normal((3, 4))
    expected = np.zeros((2, 4))
    for i in range(2):
        for j in range(4):
            for k in range(3):
                expected[i, j] += a[i, k] * b[k, j]
    out = ng.matmul(a, b)
    assert out.shape == (2, 4)
    assert np.allclose(out.data, expected, rtol=0, atol=1e-14)


def test_errors():
    with pytest.raises(ValueError, match="shape mismatch"):
        ng.matmul(np.ones((2, 3)), np.ones((2, 3)))
    with pytest.raises(ValueError, match="non-positive"):
        ng.log([1.0, 0.0])
    with pytest.raises(FloatingPointError):
        ng.exp([1000.0])
    tape = ng.Tape()
    x = tape.param(np.ones(3), "x")
    with pytest.raises(ValueError, match="scalar"):
        tape.backward(x * 2.0)


def test_square_and_constant_gradients():
    tape = ng.Tape()
    x = tape.param(3.0, "x")
    assert tape.backward(x * x)["x"] == pytest.approx(6.0)
    tape = ng.Tape()
    x = tape.param(3.0, "x")
    y = tape.param(1.0, "unused")
    grads = tape.backward(ng.constant(5.0) + 0.0 * x)
    assert grads["x"] == 0.0 and grads["unused"] == 0.0


def test_backward_visits_each_node_once():
    tape = ng.Tape()
    x = tape.param(np.array([1.0, 2.0]), "x")
    y = x * x
    z = ng.sum(y + y)
    calls = []
    for node in tape.nodes:
        if node.backward_fn is not None:
            fn = node.backward_fn
            node.backward_fn = lambda g, fn=fn, node=node: (calls.append(id(node)), fn(g))[1]
    grads = tape.backward(z)
    assert np.allclose(grads["x"], 4 * np.array([1.0, 2.0]))
    assert len(calls) == len(set(calls)) == len(tape.nodes) - 1


def test_grad_check_simple_cases():
    rng = np.random.default_rng(1)
    pt = {"x": rng.standard_normal(5)}
    assert ng.grad_check(lambda p: ng.sum(p["x"] * p["x"]), pt) < 1e-8
    pos = {"x": np.abs(rng.standard_normal(5)) + 0.1}
    assert ng.grad_check(lambda p: ng.sum(ng.relu(p["x"]) * 3.0), pos) < 1e-6
    with pytest.raises(ValueError):
        ng.grad_check(lambda p: ng.sum(p["x"]), pt, eps=1e-2)


UNARY = {
    "relu": ng.relu,
    "sigmoid": ng.sigmoid,
    "exp": ng.exp,
    "log": lambda x: ng.log(x * x + 0.5),
    "row_softmax": ng.row_softmax,
    "row_log_softmax": ng.row_log_softmax,
    "row_l2_normalize": ng.row_l2_normalize,
    "transpose": ng.transpose,
    "power": lambda x: ng.power(x * x + 0.1, 1.5),
    "mean_axis": lambda x: ng.mean(x, axis=0),
    "sum_keep": lambda x: ng.sum(x, axis=1, keepdims=True),
    "gather_rows": lambda x: ng.gather_rows(x, [2, 0, 2]),
    "concat": lambda x: ng.concat([x, x * 2.0], axis=1),
    "divide": lambda x: x / (x * x + 1.0),
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_primitive_vjp_matches_finite_differences(name):
    rng = np.random.default_rng(abs(hash(name)) % 2**32)
    x = rng.standard_normal((3, 4))
    x = np.where(np.abs(x) < 0.05, 0.3, x)
    w = rng.standard_normal(UNARY[name](x).shape)
    err = ng.grad_check(lambda p: ng.sum(UNARY[name](p["x"]) * w), {"x": x})
    assert err < 1e-6


@pytest.mark.parametrize("op", [ng.add, ng.sub, ng.mul, ng.matmul])
def test_binary_vjp_matches_finite_differences(op):
    rng = np.random.default_rng(7)
    a, b = rng.standard_normal((3, 3)), rng.standard_normal((1, 3) if op is not ng.matmul else (3, 2))
    w = rng.standard_normal(op(a, b).shape)
    assert ng.grad_check(lambda p: ng.sum(op(p["a"], p["b"]) * w), {"a": a, "b": b}) < 1e-6


def test_neighbor_mean_vjp():
    g = small_graph(n=10, seed=4)
    rng = np.random.default_rng(4)
    w = rng.standard_normal((10, 3))
    f = lambda p: ng.sum(ng.neighbor_mean(g.indptr, g.indices, p["h"]) * w)
    assert ng.grad_check(f, {"h": rng.standard_normal((10, 3))}) < 1e-6


def test_composite_gnn_cosine_loss():
    g = small_graph(n=10, seed=2)
    enc = init_encoder([6, 5, 6], "node_text", 3)
    point = {"s0": enc.weights[0][0], "n0": enc.weights[0][1], "s1": enc.weights[1][0], "n1": enc.weights[1][1]}

    def f(p):
        h = encode_tensors([(p["s0"], p["n0"]), (p["s1"], p["n1"])], g, g.features)
        return node_recon_loss(g.features, h, 2.0)

    assert ng.grad_check(f, point) < 1e-4


@settings(max_examples=20, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 10_000))
def test_backward_is_linear(a, b, seed):
    rng = np.random.default_rng(seed)
    x0 = rng.standard_normal(4)
    f = lambda x: ng.sum(ng.sigmoid(x) * x)
    g = lambda x: ng.sum(ng.exp(x * 0.5))

    def grad(fn):
        tape = ng.Tape()
        return tape.backward(fn(tape.param(x0, "x")))["x"]

    combo = grad(lambda x: f(x) * a + g(x) * b)
    assert np.allclose(combo, a * grad(f) + b * grad(g), atol=1e-12)


def test_adam_first_step_is_signed_lr():
    state = ng.AdamState(lr=0.01)
    g = np.array([0.3, -2.0, 1e-3])
    params, state = ng.adam_step(state, {"w": np.zeros(3)}, {"w": g})
    assert state.step == 1
    assert np.allclose(params["w"], -0.01 * np.sign(g), rtol=1e-4)


def test_adam_zero_gradient_and_nonfinite():
    state = ng.AdamState(lr=0.1)
    params, state = ng.adam_step(state, {"w": np.ones(2)}, {"w": np.zeros(2)})
    assert np.array_equal(params["w"], np.ones(2)) and state.step == 1
    with pytest.raises(FloatingPointError, match="'w'"):
        ng.adam_step(state, params, {"w": np.array([np.nan, 0.0])})


def test_adam_minimizes_quadratic():
    c = np.array([1.0, -2.0, 0.5])
    params, state = {"x": np.zeros(3)}, ng.AdamState(lr=0.02)
    dists = []
    for _ in range(100):
        dists.append(np.linalg.norm(params["x"] - c))
        params, state = ng.adam_step(state, params, {"x": 2 * (params["x"] - c)})
    windows = [dists[i] for i in range(0, 100, 10)]
    assert all(b < a for a, b in zip(windows, windows[1:]))


def test_checkpoint_round_trip(tmp_path):
    arrays = {"a": np.arange(6.0).reshape(2, 3), "b": np.array(2.5), "c": np.ones((2, 1, 2))}
    ng.save_checkpoint(tmp_path, arrays, {"channel": "node_text"})
    loaded, meta = ng.load_checkpoint(tmp_path)
    assert meta == {"channel": "node_text"}
    for k in arrays:
        assert np.array_equal(loaded[k], arrays[k])
    manifest = (tmp_path / "manifest.txt").read_text().splitlines()
    assert manifest[1:] == ["a\t2x3\t0", "b\t-\t48", "c\t2x1x2\t56"]
    raw = (tmp_path / "params.bin").read_bytes()
    assert np.frombuffer(raw[48:56], "<f8")[0] == 2.5


def test_straight_through_contract():
    tape = ng.Tape()
    soft = tape.param(np.array([0.2, -0.4]), "soft")
    out = ng.straight_through(soft, np.array([1.0, 0.0]))
    assert out.data.tolist() == [1.0, 0.0]
    grads = tape.backward(ng.sum(out * np.array([3.0, -2.0])))
    assert grads["soft"].tolist() == [3.0, -2.0]
