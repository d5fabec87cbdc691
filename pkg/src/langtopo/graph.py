"""Undirected attributed graphs: construction, file I/O, SBM generation, k-hop queries."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

SPLIT_TAGS = ("train", "val", "test")


class GraphFormatError(ValueError):
    """Raised for malformed graph files; the message names file and line."""


@dataclass(frozen=True, eq=False)
class Graph:
    n: int
    edges: np.ndarray      # (m, 2), u < v, sorted, unique
    indptr: np.ndarray     # CSR row pointers, length n + 1
    indices: np.ndarray    # CSR column ids, sorted within each row
    features: np.ndarray   # (n, d_in)
    labels: np.ndarray     # (n,)
    split: np.ndarray      # (n,) of "train" / "val" / "test"
    num_classes: int

    @classmethod
    def build(cls, n: int, edges, features, labels, split, num_classes: int | None = None) -> "Graph":
        """Symmetrize, deduplicate and validate. Self-loops are rejected."""
        n = int(n)
        e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if e.size and (e.min() < 0 or e.max() >= n):
            raise ValueError("edge endpoint out of range")
        if np.any(e[:, 0] == e[:, 1]):
            raise ValueError("self-loops are not allowed")
        e = np.unique(np.sort(e, axis=1), axis=0)
        both = np.concatenate([e, e[:, ::-1]])
        order = np.lexsort((both[:, 1], both[:, 0]))
        both = both[order]
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.add.at(indptr, both[:, 0] + 1, 1)
        indptr = np.cumsum(indptr)

        x = np.asarray(features, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] != n:
            raise ValueError(f"features must be {n} x d_in, got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError("features contain non-finite values")
        y = np.asarray(labels, dtype=np.int64)
        if y.shape != (n,):
            raise ValueError(f"expected {n} labels, got {y.shape[0]}")
        if num_classes is None:
            num_classes = int(y.max()) + 1 if n else 0
        if n and (y.min() < 0 or y.max() >= num_classes):
            raise ValueError("label out of range")
        s = np.asarray(split, dtype="<U5")
        if s.shape != (n,):
            raise ValueError(f"expected {n} split tags, got {s.shape[0]}")
        bad = ~np.isin(s, SPLIT_TAGS)
        if bad.any():
            raise ValueError(f"unknown split tag {s[bad][0]!r}")
        for arr in (e, indptr, both, x, y, s):
            arr.setflags(write=False)
        indices = both[:, 1].copy()
        indices.setflags(write=False)
        return cls(n, e, indptr, indices, x, y, s, int(num_classes))

    @property
    def d_in(self) -> int:
        return self.features.shape[1]

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def neighbors(self, u: int) -> np.ndarray:
        return self.indices[self.indptr[u]:self.indptr[u + 1]]

    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    def split_nodes(self, tag: str) -> np.ndarray:
        if tag not in SPLIT_TAGS:
            raise ValueError(f"unknown split tag {tag!r}")
        return np.flatnonzero(self.split == tag)

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.n, self.n))
        a[self.edges[:, 0], self.edges[:, 1]] = 1.0
        a[self.edges[:, 1], self.edges[:, 0]] = 1.0
        return a

    def permute(self, perm) -> "Graph":
        """Relabel so that old node ``perm[i]`` becomes new node ``i``."""
        perm = np.asarray(perm, dtype=np.int64)
        inv = np.empty_like(perm)
        inv[perm] = np.arange(self.n)
        return Graph.build(self.n, inv[self.edges], self.features[perm], self.labels[perm],
                           self.split[perm], self.num_classes)


def _lines(path: Path):
    with open(path, encoding="utf-8", newline="\n") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if line.strip():
                yield lineno, line


def load_graph(edge_path, feature_path, label_path, split_path, num_classes: int | None = None) -> Graph:
    feature_path = Path(feature_path)
    rows = list(_lines(feature_path))
    if not rows:
        raise GraphFormatError(f"{feature_path}: empty file")
    try:
        n, d_in = (int(t) for t in rows[0][1].split())
    except ValueError:
        raise GraphFormatError(f"{feature_path}:{rows[0][0]}: header must be 'n d_in'") from None
    if len(rows) - 1 != n:
        raise GraphFormatError(f"{feature_path}: header says {n} rows, found {len(rows) - 1}")
    x = np.empty((n, d_in))
    for i, (lineno, line) in enumerate(rows[1:]):
        parts = line.split()
        if len(parts) != d_in:
            raise GraphFormatError(f"{feature_path}:{lineno}: feature row length {len(parts)} != {d_in}")
        try:
            x[i] = [float(p) for p in parts]
        except ValueError:
            raise GraphFormatError(f"{feature_path}:{lineno}: malformed float") from None

    edge_path = Path(edge_path)
    edges = []
    for lineno, line in _lines(edge_path):
        parts = line.split("\t")
        try:
            u, v = int(parts[0]), int(parts[1])
            if len(parts) != 2:
                raise ValueError
        except (ValueError, IndexError):
            raise GraphFormatError(f"{edge_path}:{lineno}: malformed edge line {line!r}") from None
        if not (0 <= u < n and 0 <= v < n):
            raise GraphFormatError(f"{edge_path}:{lineno}: node index out of range")
        if u != v:
            edges.append((u, v))

    label_path = Path(label_path)
    labels = []
    for lineno, line in _lines(label_path):
        try:
            labels.append(int(line.strip()))
        except ValueError:
            raise GraphFormatError(f"{label_path}:{lineno}: malformed label") from None
        if labels[-1] < 0 or (num_classes is not None and labels[-1] >= num_classes):
            raise GraphFormatError(f"{label_path}:{lineno}: label out of range")
    split_path = Path(split_path)
    split = []
    for lineno, line in _lines(split_path):
        tag = line.strip()
        if tag not in SPLIT_TAGS:
            raise GraphFormatError(f"{split_path}:{lineno}: unknown split tag {tag!r}")
        split.append(tag)
    if len(labels) != n or len(split) != n:
        raise GraphFormatError(f"expected {n} labels and split tags, got {len(labels)} and {len(split)}")
    return Graph.build(n, edges, x, labels, split, num_classes)


def load_graph_dir(directory, num_classes: int | None = None) -> Graph:
    d = Path(directory)
    return load_graph(d / "edges.tsv", d / "features.txt", d / "labels.txt", d / "splits.txt", num_classes)


def save_graph(graph: Graph, directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    with open(d / "edges.tsv", "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(f"{u}\t{v}\n" for u, v in graph.edges)
    with open(d / "features.txt", "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{graph.n} {graph.d_in}\n")
        fh.writelines(" ".join(repr(float(v)) for v in row) + "\n" for row in graph.features)
    with open(d / "labels.txt", "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(f"{int(y)}\n" for y in graph.labels)
    with open(d / "splits.txt", "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(f"{s}\n" for s in graph.split)
    return d


@dataclass(frozen=True)
class SbmSpec:
    n: int = 300
    blocks: int = 3
    p_in: float = 0.1
    p_out: float = 0.01
    d_in: int = 16
    text_signal: float = 0.5
    seed: int = 0
    split_ratio: tuple[float, float, float] = (0.6, 0.2, 0.2)

    def __post_init__(self):
        if self.blocks < 2:
            raise ValueError("blocks must be >= 2")
        if not 0.0 <= self.p_out <= self.p_in <= 1.0:
            raise ValueError("need 0 <= p_out <= p_in <= 1")
        if not 0.0 <= self.text_signal <= 1.0:
            raise ValueError("text_signal must lie in [0, 1]")
        if self.d_in < self.blocks:
            raise ValueError("d_in must be at least the number of blocks")
        if len(self.split_ratio) != 3 or abs(sum(self.split_ratio) - 1.0) > 1e-9:
            raise ValueError("split_ratio must be three fractions summing to 1")


def assign_split(n: int, rng: np.random.Generator, ratio=(0.6, 0.2, 0.2)) -> np.ndarray:
    order = rng.permutation(n)
    n_train = int(round(ratio[0] * n))
    n_val = int(round(ratio[1] * n))
    split = np.full(n, "test", dtype="<U5")
    split[order[:n_train]] = "train"
    split[order[n_train:n_train + n_val]] = "val"
    return split


def generate_sbm(spec: SbmSpec) -> Graph:
    """Balanced stochastic block model; labels are block ids."""
    n, b = spec.n, spec.blocks
    if n < b:
        raise ValueError(f"n={n} is smaller than the number of blocks {b}")
    rng = np.random.default_rng(spec.seed)
    labels = np.concatenate([np.full(len(c), k) for k, c in enumerate(np.array_split(np.arange(n), b))])
    iu, iv = np.triu_indices(n, k=1)
    prob = np.where(labels[iu] == labels[iv], spec.p_in, spec.p_out)
    keep = rng.random(len(iu)) < prob
    edges = np.stack([iu[keep], iv[keep]], axis=1)
    onehot = np.zeros((n, spec.d_in))
    onehot[np.arange(n), labels] = 1.0
    noise = rng.standard_normal((n, spec.d_in))
    features = spec.text_signal * onehot + (1.0 - spec.text_signal) * noise
    split = assign_split(n, rng, spec.split_ratio)
    return Graph.build(n, edges, features, labels, split, b)


def k_hop_neighbors(graph: Graph, node: int, hops: int, budget: int) -> list[int]:
    """Breadth-first neighbours within ``hops``, self excluded, ascending per frontier."""
    if not 0 <= node < graph.n:
        raise IndexError(f"node {node} out of range")
    if hops < 0 or budget < 0:
        raise ValueError("hops and budget must be non-negative")
    seen = {node}
    out: list[int] = []
    frontier = [node]
    for _ in range(hops):
        nxt = set()
        for u in frontier:
            nxt.update(int(v) for v in graph.neighbors(u) if v not in seen)
        frontier = sorted(nxt)
        seen.update(frontier)
        out.extend(frontier)
        if len(out) >= budget or not frontier:
            break
    return out[:budget]
