"""Small bag-of-tokens text encoder standing in for a fine-tuned language model.

A node is serialized as ``[NODE] own-feature-tokens ([SEP] neighbour-feature-tokens)*``
where each feature value becomes a binned token ``f<dim>_b<bin>``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import numgrad as ng
from .graph import Graph, k_hop_neighbors

PAD, UNK, SEP, NODE = 0, 1, 2, 3
RESERVED = ("[PAD]", "[UNK]", "[SEP]", "[NODE]")


@dataclass
class Vocabulary:
    tokens: list[str]
    lo: np.ndarray          # per-dimension lower edge of bin 0
    width: np.ndarray       # per-dimension bin width (0 for constant dimensions)
    nbins: np.ndarray       # per-dimension bin count

    def __post_init__(self):
        self.ids = {t: i for i, t in enumerate(self.tokens)}
        if len(self.ids) != len(self.tokens):
            raise ValueError("duplicate tokens in vocabulary")

    def __len__(self) -> int:
        return len(self.tokens)

    def id_of(self, token: str) -> int:
        return self.ids.get(token, UNK)

    def bin_of(self, dim: int, value: float) -> int:
        if self.width[dim] == 0:
            return 0
        b = int(np.floor((value - self.lo[dim]) / self.width[dim]))
        return min(max(b, 0), int(self.nbins[dim]) - 1)

    def feature_tokens(self, row: Sequence[float]) -> list[int]:
        return [self.id_of(f"f{d}_b{self.bin_of(d, v)}") for d, v in enumerate(row)]

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    @staticmethod
    def read_tokens(path) -> list[str]:
        return Path(path).read_text(encoding="utf-8").splitlines()


def build_vocab(graph: Graph, bins_per_dim: int = 8, max_size: int = 4096) -> Vocabulary:
    """Equal-width bins over the training-split range of each feature dimension.

    Intervals are half-open, so a value on an interior edge goes to the upper bin.
    """
    if bins_per_dim < 2:
        raise ValueError("bins_per_dim must be at least 2")
    if max_size < len(RESERVED):
        raise ValueError(f"max_size must be at least {len(RESERVED)}")
    rows = graph.split_nodes("train")
    x = graph.features[rows] if len(rows) else graph.features
    lo, hi = x.min(axis=0), x.max(axis=0)
    span = hi - lo
    nbins = np.where(span > 0, bins_per_dim, 1)
    width = np.where(span > 0, span / bins_per_dim, 0.0)
    tokens = list(RESERVED)
    for d in range(graph.d_in):
        for b in range(int(nbins[d])):
            if len(tokens) >= max_size:
                break
            tokens.append(f"f{d}_b{b}")
    return Vocabulary(tokens, lo, width, nbins)


def serialize_node(graph: Graph, node: int, hops: int, budget: int, vocab: Vocabulary,
                   max_len: int = 512) -> list[int]:
    if not 0 <= node < graph.n:
        raise IndexError(f"node {node} out of range")
    seq = [NODE] + vocab.feature_tokens(graph.features[node])
    for v in k_hop_neighbors(graph, node, hops, budget):
        seq.append(SEP)
        seq.extend(vocab.feature_tokens(graph.features[v]))
    return seq[:max_len]


def bag_of_tokens(sequences: Sequence[Sequence[int]], vocab_size: int) -> np.ndarray:
    """Row-normalized token counts with PAD dropped, i.e. the mean-pooling matrix."""
    out = np.zeros((len(sequences), vocab_size))
    for i, seq in enumerate(sequences):
        ids = np.asarray([t for t in seq if t != PAD], dtype=np.int64)
        if ids.size == 0:
            raise ValueError("token sequence is empty after removing PAD")
        np.add.at(out[i], ids, 1.0)
        out[i] /= ids.size
    return out


def init_student(vocab_size: int, d_tok: int, d_hidden: int, d_rep: int, d_code: int,
                 num_classes: int, seed: int | np.random.Generator) -> dict[str, np.ndarray]:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)

    def glorot(a, b):
        s = np.sqrt(6.0 / (a + b))
        return rng.uniform(-s, s, (a, b))

    return {
        "emb": rng.normal(0.0, 1.0 / np.sqrt(d_tok), (vocab_size, d_tok)),
        "ff1.w": glorot(d_tok, d_hidden),
        "ff1.b": np.zeros((1, d_hidden)),
        "ff2.w": glorot(d_hidden, d_rep),
        "ff2.b": np.zeros((1, d_rep)),
        "align.w": glorot(d_rep, d_code),
        "cls.w": glorot(d_rep, num_classes),
        "cls.b": np.zeros((1, num_classes)),
    }


def student_forward_batch(params, pooled) -> tuple[ng.Tensor, ng.Tensor]:
    """``pooled`` is a (B, |V|) mean-pooling matrix; returns ``(h_llm, logits)`` tensors."""
    t = {k: ng.as_tensor(v) for k, v in params.items()}
    x = ng.as_tensor(pooled) @ t["emb"]
    r = ng.relu(x @ t["ff1.w"] + t["ff1.b"])
    r = ng.relu(r @ t["ff2.w"] + t["ff2.b"])
    return r @ t["align.w"], r @ t["cls.w"] + t["cls.b"]


def student_forward(params, tokens: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    vocab_size = np.shape(ng.as_tensor(params["emb"]).data)[0]
    h, logits = student_forward_batch(params, bag_of_tokens([tokens], vocab_size))
    return h.data[0].copy(), logits.data[0].copy()
