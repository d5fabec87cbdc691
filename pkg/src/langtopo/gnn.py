"""Mean-aggregation GraphSAGE encoders for the node-text and edge-structure channels."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import numgrad as ng
from .graph import Graph

CHANNELS = ("node_text", "edge_structure")

_forward_calls = 0


def gnn_forward_count() -> int:
    """Number of encoder forward passes run in this process."""
    return _forward_calls


@dataclass
class EncoderParams:
    dims: tuple[int, ...]
    channel: str
    weights: list[tuple[np.ndarray, np.ndarray]]   # per layer: (W_self, W_nb)

    @property
    def num_layers(self) -> int:
        return len(self.weights)

    def to_dict(self, prefix: str) -> dict[str, np.ndarray]:
        out = {}
        for i, (w_self, w_nb) in enumerate(self.weights):
            out[f"{prefix}.{i}.self"] = w_self
            out[f"{prefix}.{i}.nb"] = w_nb
        return out

    @classmethod
    def from_dict(cls, arrays, prefix: str, channel: str) -> "EncoderParams":
        weights = []
        i = 0
        while f"{prefix}.{i}.self" in arrays:
            weights.append((np.array(arrays[f"{prefix}.{i}.self"]), np.array(arrays[f"{prefix}.{i}.nb"])))
            i += 1
        if not weights:
            raise KeyError(f"no encoder weights under {prefix!r}")
        dims = (weights[0][0].shape[0],) + tuple(w.shape[1] for w, _ in weights)
        return cls(dims, channel, weights)


def init_encoder(dims: Sequence[int], channel: str, seed: int | np.random.Generator) -> EncoderParams:
    """Glorot-uniform weights for each layer ``dims[l-1] -> dims[l]``."""
    dims = tuple(int(d) for d in dims)
    if len(dims) < 2:
        raise ValueError("dims needs an input and at least one output dimension")
    if channel not in CHANNELS:
        raise ValueError(f"unknown channel {channel!r}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    weights = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        s = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append((rng.uniform(-s, s, (fan_in, fan_out)), rng.uniform(-s, s, (fan_in, fan_out))))
    return EncoderParams(dims, channel, weights)


def spectral_coordinates(graph: Graph, k: int) -> np.ndarray:
    """Leading ``k`` eigenvectors of ``D^-1/2 A D^-1/2``, scaled by ``sqrt(n)``.

    Each vector's sign is fixed so that its largest-magnitude entry is positive.
    """
    if k <= 0:
        return np.zeros((graph.n, 0))
    deg = graph.degrees().astype(np.float64)
    inv = np.where(deg > 0, 1.0 / np.sqrt(np.maximum(deg, 1.0)), 0.0)
    a = graph.adjacency() * inv[:, None] * inv[None, :]
    vals, vecs = np.linalg.eigh(a)
    vecs = vecs[:, np.argsort(-vals, kind="stable")[:k]]
    pivot = np.argmax(np.abs(vecs), axis=0)
    vecs = vecs * np.sign(vecs[pivot, np.arange(vecs.shape[1])])
    out = np.zeros((graph.n, k))
    out[:, :vecs.shape[1]] = vecs * np.sqrt(graph.n)
    return out


def structure_features(graph: Graph, spectral_dims: int = 0) -> np.ndarray:
    """Edge-structure channel input: ``[degree, 1]`` plus optional spectral coordinates."""
    base = np.stack([graph.degrees().astype(np.float64), np.ones(graph.n)], axis=1)
    return np.concatenate([base, spectral_coordinates(graph, spectral_dims)], axis=1)


def channel_input(graph: Graph, channel: str, spectral_dims: int = 0) -> np.ndarray:
    if channel == "node_text":
        return graph.features
    if channel == "edge_structure":
        return structure_features(graph, spectral_dims)
    raise ValueError(f"unknown channel {channel!r}")


def encode_tensors(weights, graph: Graph, x) -> ng.Tensor:
    """Differentiable forward pass; ``weights`` is a list of (W_self, W_nb) tensors or arrays.

    Hidden layers apply relu; the last layer is linear.
    """
    global _forward_calls
    _forward_calls += 1
    h = ng.as_tensor(x)
    if h.shape[0] != graph.n:
        raise ValueError(f"input has {h.shape[0]} rows for a {graph.n}-node graph")
    for i, (w_self, w_nb) in enumerate(weights):
        if h.shape[1] != np.shape(ng.as_tensor(w_self).data)[0]:
            raise ValueError(f"layer {i}: input dim {h.shape[1]} != weight rows {np.shape(w_self)[0]}")
        agg = ng.neighbor_mean(graph.indptr, graph.indices, h)
        h = h @ w_self + agg @ w_nb
        if i < len(weights) - 1:
            h = ng.relu(h)
    return h


def encode(params: EncoderParams, graph: Graph, x: np.ndarray | None = None) -> np.ndarray:
    if x is None:
        spectral = params.dims[0] - 2 if params.channel == "edge_structure" else 0
        x = channel_input(graph, params.channel, spectral)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.dims[0]:
        raise ValueError(f"input must be n x {params.dims[0]}, got {x.shape}")
    return encode_tensors(params.weights, graph, x).data
