import math
from dataclasses import replace

import numpy as np
import pytest

from langtopo import gnn
from langtopo import numgrad as ng
from langtopo.codebook import Codebook, sample_gumbel
from langtopo.graph import Graph
from langtopo.stage1 import Stage1Config, train_stage1
from langtopo.stage2 import (
    AlignmentPair,
    Stage2Config,
    Student,
    align_batch,
    align_components,
    evaluate,
    gnn_embeddings,
    gnn_reference,
    infer,
    new_student,
    stage2_batch_loss,
    stage2_loss,
    train_stage2,
)

from conftest import small_graph

S1 = Stage1Config(K=6, d_code=3, hidden=4, d_edgecode=3, spectral_dims=2, epochs=10)
S2 = Stage2Config(epochs=4, d_tok=8, d_hidden=8, d_rep=6, batch_size=2, accumulation=2)


@pytest.fixture(scope="module")
def trained():
    g = small_graph(n=24, seed=2, p=0.2)
    return g, train_stage1(g, S1, 0)


def test_loss_examples():
    cfg = Stage2Config()
    z = np.array([0.1, 0.2])
    p = np.array([0.25, 0.25, 0.5])
    logits = np.array([1.0, 2.0, 0.5])
    ce = -(2.0 - math.log(sum(math.exp(v) for v in logits)))
    value, d = stage2_loss(logits, 1, AlignmentPair(z, z, p, p), cfg)
    assert value == pytest.approx(ce, abs=1e-12) and d["loss_mse"] == 0 and d["loss_kl"] == 0
    zero = replace(cfg, alpha_mse=0.0, beta_kl=0.0)
    value, _ = stage2_loss(logits, 0, AlignmentPair(z, z + 1, np.eye(3)[0], p), zero)
    assert value == pytest.approx(-(1.0 - math.log(sum(math.exp(v) for v in logits))), abs=1e-12)
    _, d = stage2_loss(logits, 0, AlignmentPair(z, z, np.eye(4)[2], np.full(4, 0.25)), cfg)
    assert d["loss_kl"] == pytest.approx(math.log(4))
    with pytest.raises(ValueError, match="label out of range"):
        stage2_loss(logits, 3, AlignmentPair(z, z, p, p), cfg)


def test_kl_clamp_and_mse_mean():
    cfg = Stage2Config(alpha_mse=1.0, beta_kl=1.0)
    _, d = stage2_loss([0.0, 0.0], 0, AlignmentPair(np.zeros(2), np.array([1.0, 3.0]),
                                                      np.array([0.5, 0.5]), np.array([1.0, 0.0])), cfg)
    assert d["loss_mse"] == pytest.approx(5.0)
    assert d["loss_kl"] == pytest.approx(0.5 * math.log(0.5) + 0.5 * (math.log(0.5) - math.log(1e-12)))


def test_config_validation():
    with pytest.raises(ValueError):
        Stage2Config(alpha_mse=-0.1)
    with pytest.raises(ValueError):
        Stage2Config(gnn_channel="both")
    assert Stage2Config().digest() == Stage2Config().digest()


def test_align_components_formula_oracle():
    rng = np.random.default_rng(3)
    E = rng.standard_normal((8, 3))
    h1, h2 = rng.standard_normal(3), rng.standard_normal(3)
    pair = align_components(h1, h2, Codebook(E), 0.5, np.random.default_rng(9))
    noise = np.random.default_rng(9)
    n1, n2 = sample_gumbel((1, 8), noise)[0], sample_gumbel((1, 8), noise)[0]
    for h, n, p, z in ((h1, n1, pair.p_llm, pair.z_llm), (h2, n2, pair.p_gnn, pair.z_gnn)):
        s = np.array([-0.5 * np.sum((h - e) ** 2) for e in E]) + n
        w = np.exp((s - s.max()) / 0.5)
        assert np.allclose(p, w / w.sum(), atol=1e-12)
        assert np.allclose(z, p @ E, atol=1e-9)
    assert abs(pair.p_llm.sum() - 1) < 1e-12 and abs(pair.p_gnn.sum() - 1) < 1e-12


def test_shared_noise_identical_inputs():
    E = np.random.default_rng(0).standard_normal((5, 2))
    h = np.array([0.3, -0.4])
    pair = align_components(h, h, Codebook(E), 0.5, np.random.default_rng(1), shared_noise=True)
    assert np.array_equal(pair.p_llm, pair.p_gnn) and np.array_equal(pair.z_llm, pair.z_gnn)


def test_gnn_reference_channels(trained):
    g, art = trained
    a = gnn_reference(art, g, 4, "node")
    b = gnn_reference(art, g, 4, "edge")
    assert np.allclose(gnn_reference(art, g, 4, "mean"), 0.5 * (a + b))
    assert np.array_equal(gnn_reference(art, g, 4, "node"), a)
    with pytest.raises(IndexError):
        gnn_reference(art, g, 24, "node")


def test_stage2_loss_gradient_and_gnn_freeze(trained):
    g, art = trained
    student = new_student(g, 3, S2, 0)
    from langtopo.stage2 import pooled_inputs
    from langtopo.student import student_forward_batch
    pooled = pooled_inputs(g, student.vocab, S2)
    rows = np.arange(5)
    h_gnn = gnn_embeddings(art, g, "edge")[rows]
    rng = np.random.default_rng(0)
    n1, n2 = sample_gumbel((5, 6), rng), sample_gumbel((5, 6), rng)
    cfg = Stage2Config(alpha_mse=0.5, beta_kl=0.1)

    def f(p):
        h_llm, logits = student_forward_batch(p, pooled[rows])
        p_llm, lp, z_llm, p_gnn, z_gnn = align_batch(h_llm, h_gnn, art.codebook.E, 0.5, n1, n2, art.config)
        return stage2_batch_loss(logits, g.labels[rows], z_llm, z_gnn, p_llm, lp, p_gnn, cfg)[0]

    assert ng.grad_check(f, student.params) < 1e-4

    tape = ng.Tape()
    frozen = {k: tape.param(v, k) for k, v in art.params.items()}
    tracked = {k: tape.param(v, k) for k, v in student.params.items()}
    h_llm, logits = student_forward_batch(tracked, pooled[rows])
    p_llm, lp, z_llm, p_gnn, z_gnn = align_batch(h_llm, h_gnn, art.codebook.E, 0.5, n1, n2, art.config)
    grads = tape.backward(stage2_batch_loss(logits, g.labels[rows], z_llm, z_gnn, p_llm, lp, p_gnn, cfg)[0])
    assert all(not np.any(grads[k]) for k in frozen)


def test_train_zero_epochs_and_freeze(trained):
    g, art = trained
    student = new_student(g, 3, S2, 1)
    same, metrics = train_stage2(g, art, student, replace(S2, epochs=0), 1)
    assert same is student and metrics == []
    before = {k: v.copy() for k, v in art.params.items()}
    train_stage2(g, art, student, S2, 1)
    assert all(np.array_equal(before[k], art.params[k]) for k in before)


def test_train_deterministic_and_keys(trained):
    g, art = trained
    runs = [train_stage2(g, art, new_student(g, 3, S2, 5), S2, 5)[1] for _ in range(2)]
    assert runs[0] == runs[1]
    assert list(runs[0][0]) == ["epoch", "loss_ce", "loss_mse", "loss_kl", "train_acc", "val_acc"]


def test_unaligned_needs_no_artifacts(trained):
    g, _ = trained
    cfg = replace(S2, alpha_mse=0.0, beta_kl=0.0)
    student, metrics = train_stage2(g, None, new_student(g, 3, cfg, 0), cfg, 0)
    assert all(m["loss_mse"] == 0 and m["loss_kl"] == 0 for m in metrics)
    with pytest.raises(ValueError):
        train_stage2(g, None, new_student(g, 3, S2, 0), S2, 0)


def test_infer_never_runs_gnn_and_fits_train(trained):
    g, art = trained
    cfg = replace(S2, epochs=60, lr=0.02)
    student, metrics = train_stage2(g, art, new_student(g, 3, cfg, 0), cfg, 0)
    before = gnn.gnn_forward_count()
    acc = evaluate(student, g, "test")
    assert gnn.gnn_forward_count() == before
    assert 0.0 <= acc <= 1.0
    assert all(0 <= infer(student, g, u) < g.num_classes for u in range(g.n))
    with pytest.raises(IndexError):
        infer(student, g, g.n)


def test_infer_reproduces_labels_once_train_is_fit(trained):
    g, art = trained
    g = Graph.build(g.n, g.edges, g.features, g.labels, ["train"] * g.n, g.num_classes)
    cfg = replace(S2, epochs=60, lr=0.02)
    student, _ = train_stage2(g, art, new_student(g, 3, cfg, 0), cfg, 0)
    assert evaluate(student, g, "train") == 1.0
    assert all(infer(student, g, u) == g.labels[u] for u in range(g.n))


def test_student_checkpoint_round_trip(trained, tmp_path):
    g, art = trained
    student, _ = train_stage2(g, art, new_student(g, 3, S2, 2), S2, 2)
    student.save(tmp_path)
    back = Student.load(tmp_path)
    assert back.config == student.config and back.vocab.tokens == student.vocab.tokens
    assert [infer(back, g, u) for u in range(g.n)] == [infer(student, g, u) for u in range(g.n)]
