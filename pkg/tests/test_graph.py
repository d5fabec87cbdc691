import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from math import comb

from langtopo.graph import (
    Graph,
    GraphFormatError,
    SbmSpec,
    generate_sbm,
    k_hop_neighbors,
    load_graph,
    load_graph_dir,
    save_graph,
)

from conftest import path_graph, small_graph


def write_files(tmp_path, edges, n=2, d=2, labels=None, splits=None):
    (tmp_path / "edges.tsv").write_text(edges)
    (tmp_path / "features.txt").write_text(f"{n} {d}\n" + "".join("1.0 " * d + "\n" for _ in range(n)))
    (tmp_path / "labels.txt").write_text(labels if labels is not None else "0\n" * n)
    (tmp_path / "splits.txt").write_text(splits if splits is not None else "train\n" * n)
    return [tmp_path / f for f in ("edges.tsv", "features.txt", "labels.txt", "splits.txt")]


def test_single_edge_symmetrized(tmp_path):
    g = load_graph(*write_files(tmp_path, "0\t1\n"))
    assert list(g.neighbors(0)) == [1]
    assert list(g.neighbors(1)) == [0]


def test_duplicate_and_reverse_lines_dedup(tmp_path):
    g = load_graph(*write_files(tmp_path, "0\t1\n1\t0\n0\t1\n"))
    assert g.num_edges == 1


def test_label_equal_to_class_count_rejected(tmp_path):
    with pytest.raises(GraphFormatError, match="label out of range"):
        load_graph(*write_files(tmp_path, "0\t1\n", labels="0\n2\n"), num_classes=2)


@pytest.mark.parametrize("edges,match", [
    ("0\tx\n", ":1: malformed edge"),
    ("0\t1\n0 1\n", ":2: malformed edge"),
    ("0\t5\n", "out of range"),
])
def test_bad_edge_lines_report_line(tmp_path, edges, match):
    with pytest.raises(GraphFormatError, match=match):
        load_graph(*write_files(tmp_path, edges))


def test_feature_row_length_mismatch(tmp_path):
    files = write_files(tmp_path, "0\t1\n")
    files[1].write_text("2 2\n1.0 2.0\n3.0\n")
    with pytest.raises(GraphFormatError, match="features.txt:3: feature row length"):
        load_graph(*files)


def test_unknown_split_tag(tmp_path):
    with pytest.raises(GraphFormatError, match="unknown split tag 'dev'"):
        load_graph(*write_files(tmp_path, "0\t1\n", splits="train\ndev\n"))


def test_self_loops_dropped_on_load(tmp_path):
    g = load_graph(*write_files(tmp_path, "0\t0\n0\t1\n"))
    assert g.num_edges == 1


def test_round_trip(tmp_path):
    g = small_graph(n=25, seed=3)
    h = load_graph_dir(save_graph(g, tmp_path), num_classes=g.num_classes)
    for u in range(g.n):
        assert list(g.neighbors(u)) == list(h.neighbors(u))
    assert np.array_equal(g.features, h.features)
    assert np.array_equal(g.labels, h.labels)
    assert np.array_equal(g.split, h.split)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 30), st.lists(st.tuples(st.integers(0, 29), st.integers(0, 29)), max_size=80))
def test_neighbor_symmetry(n, pairs):
    edges = [(u % n, v % n) for u, v in pairs if u % n != v % n]
    g = Graph.build(n, edges, np.ones((n, 1)), np.zeros(n, int), ["train"] * n)
    for u in range(n):
        nb = list(g.neighbors(u))
        assert nb == sorted(set(nb)) and u not in nb
        for v in nb:
            assert u in g.neighbors(v)


def test_sbm_degenerate_cliques():
    g = generate_sbm(SbmSpec(n=4, blocks=2, p_in=1.0, p_out=0.0, d_in=2, seed=1))
    assert {tuple(e) for e in g.edges} == {(0, 1), (2, 3)}


def test_sbm_noise_free_features_are_one_hot():
    g = generate_sbm(SbmSpec(n=12, blocks=3, d_in=5, text_signal=1.0, seed=2))
    expected = np.zeros((12, 5))
    expected[np.arange(12), g.labels] = 1.0
    assert np.array_equal(g.features, expected)


def test_sbm_edge_count_within_three_sigma():
    spec = SbmSpec(n=300, blocks=3, p_in=0.1, p_out=0.01, seed=7)
    g = generate_sbm(spec)
    intra = 3 * comb(100, 2)
    inter = comb(300, 2) - intra
    mean = intra * 0.1 + inter * 0.01
    sd = np.sqrt(intra * 0.1 * 0.9 + inter * 0.01 * 0.99)
    assert mean == pytest.approx(1785.0)
    assert abs(g.num_edges - mean) < 3 * sd


def test_sbm_reproducible_and_split_ratio():
    spec = SbmSpec(n=100, blocks=4, seed=11, d_in=8)
    a, b = generate_sbm(spec), generate_sbm(spec)
    assert np.array_equal(a.edges, b.edges)
    assert np.array_equal(a.features, b.features)
    assert np.array_equal(a.split, b.split)
    assert [len(a.split_nodes(t)) for t in ("train", "val", "test")] == [60, 20, 20]


@pytest.mark.parametrize("kw", [dict(blocks=1), dict(p_in=0.1, p_out=0.2), dict(text_signal=1.5)])
def test_sbm_spec_invariants(kw):
    with pytest.raises(ValueError):
        SbmSpec(**kw)


def test_sbm_needs_n_at_least_blocks():
    with pytest.raises(ValueError):
        generate_sbm(SbmSpec(n=2, blocks=3, d_in=3))


def test_k_hop_cases():
    g = path_graph(3)
    assert k_hop_neighbors(g, 0, 0, 10) == []
    assert k_hop_neighbors(g, 0, 2, 10) == [1, 2]
    star = Graph.build(6, [(0, v) for v in (5, 3, 1, 4, 2)], np.ones((6, 1)), np.zeros(6, int), ["train"] * 6)
    assert k_hop_neighbors(star, 0, 1, 1) == [1]
    with pytest.raises(IndexError):
        k_hop_neighbors(g, 3, 1, 1)


def test_k_hop_matches_distance_oracle():
    g = small_graph(n=20, seed=5, p=0.15)
    a = g.adjacency()
    reach1 = a > 0
    reach2 = (a @ a > 0) | reach1
    for u in range(g.n):
        got = k_hop_neighbors(g, u, 2, 100)
        one = sorted(v for v in range(g.n) if reach1[u, v] and v != u)
        two = sorted(v for v in range(g.n) if reach2[u, v] and not reach1[u, v] and v != u)
        assert got == one + two
