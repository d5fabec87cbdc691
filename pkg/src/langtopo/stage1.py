"""Stage 1: train both GNN channels, the shared codebook and linear decoders.

Loss = edge reconstruction + alpha_node * scaled-cosine node reconstruction
+ beta_kl * KL(assignment || uniform).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import numgrad as ng
from . import rng as rngs
from .codebook import (
    HARD_STRATEGIES,
    STRATEGIES,
    Codebook,
    TauSchedule,
    anneal_tau,
    hard_indices,
    init_codebook,
    one_hot,
    perplexity,
    relax_rows,
    reseed_unused,
    sample_gumbel,
    usage_rate,
)
from .gnn import EncoderParams, channel_input, encode_tensors, init_encoder
from .graph import Graph


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class Stage1Config:
    alpha_node: float = 10.0
    beta_kl: float = 1e-2
    gamma: float = 2.0
    K: int = 64
    d_code: int = 16
    hidden: int = 32
    layers: int = 2
    d_edgecode: int = 16
    tau: TauSchedule = field(default_factory=TauSchedule)
    epochs: int = 200
    lr: float = 0.005
    patience: int = 50
    strategy: str = "gumbel_softmax"
    metric: str = "euclidean"
    logit_scale: float = 1.0
    spectral_dims: int = 4
    negative_ratio: int = 5
    full_matrix_threshold: int = 2000
    vq_losses: bool = False
    commitment_beta: float = 0.25
    kl_mode: str = "batch_mean"
    edge_weight: float = 1.0
    reseed_every: int = 0

    def __post_init__(self):
        if self.alpha_node < 0 or self.beta_kl < 0 or self.edge_weight < 0:
            raise ValueError("alpha_node, beta_kl and edge_weight must be non-negative")
        if not self.gamma > 1:
            raise ValueError("gamma must exceed 1")
        if self.K < 2 or self.d_code < 1 or self.hidden < 1 or self.layers < 1 or self.d_edgecode < 1:
            raise ValueError("K >= 2 and positive dimensions/layer count required")
        if self.epochs < 0 or self.patience < 1 or self.lr <= 0:
            raise ValueError("epochs >= 0, patience >= 1 and lr > 0 required")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.metric not in ("euclidean", "cosine"):
            raise ValueError(f"unknown metric {self.metric!r}")
        if self.kl_mode not in ("per_node", "batch_mean"):
            raise ValueError(f"unknown kl_mode {self.kl_mode!r}")
        if self.negative_ratio < 1:
            raise ValueError("negative_ratio must be >= 1")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Stage1Config":
        d = json.loads(text)
        d["tau"] = TauSchedule(**d["tau"])
        return cls(**d)


@dataclass
class DecoderParams:
    node: np.ndarray       # d_code x d_in
    edge: np.ndarray       # d_code x d_edgecode
    edge_bias: float = 0.0


# ---------------------------------------------------------------- loss terms

def node_recon_loss(V, V_hat, gamma: float = 2.0) -> ng.Tensor:
    """Scaled cosine error, averaged over rows."""
    V = ng.as_tensor(V)
    V_hat = ng.as_tensor(V_hat)
    if V.shape != V_hat.shape:
        raise ValueError(f"shape mismatch {V.shape} vs {V_hat.shape}")
    if np.any(np.linalg.norm(V.data, axis=1) == 0):
        raise ValueError("zero-norm true feature row")
    cos = ng.sum(ng.row_l2_normalize(V) * ng.row_l2_normalize(V_hat), axis=1)
    gap = 1.0 - cos
    if not float(gamma).is_integer():
        gap = ng.relu(gap)
    return ng.mean(ng.power(gap, gamma))


def edge_recon_loss(A, Z_edge, bias=0.0, entries: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None) -> ng.Tensor:
    """Mean squared error between adjacency entries and ``sigmoid(z_u . z_v + bias)``.

    With ``entries=(u, v, target)`` only those pairs are scored; otherwise the
    full ``A`` matrix is used.
    """
    Z = ng.as_tensor(Z_edge)
    if entries is None:
        A = np.asarray(A, dtype=np.float64)
        if A.shape != (Z.shape[0], Z.shape[0]):
            raise ValueError("adjacency and Z_edge disagree on node count")
        pred = ng.sigmoid(Z @ Z.T + bias)
        diff = pred - A
    else:
        u, v, target = entries
        dots = ng.sum(ng.gather_rows(Z, u) * ng.gather_rows(Z, v), axis=1)
        diff = ng.sigmoid(dots + bias) - target
    return ng.mean(diff * diff)


def kl_to_uniform(P, log_P=None) -> ng.Tensor | float:
    """Mean over rows of KL(p || uniform).

    Plain arrays give a float; pass tensors ``P`` and ``log_P`` to get a
    differentiable result.
    """
    if log_P is None:
        p = np.asarray(P, dtype=np.float64)
        if p.ndim != 2 or p.shape[0] == 0:
            raise ValueError("need a non-empty batch of distributions")
        K = p.shape[1]
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(p > 0, p * np.log(K * p), 0.0)
        return float(terms.sum(axis=1).mean())
    P = ng.as_tensor(P)
    K = P.shape[1]
    return ng.mean(ng.sum(P * (log_P + np.log(K)), axis=1))


def _kl_batch_mean(P: ng.Tensor) -> ng.Tensor:
    pbar = ng.mean(P, axis=0, keepdims=True)
    K = P.shape[1]
    return ng.sum(pbar * ng.log(pbar + 1e-12) + pbar * np.log(K))


def edge_entries(graph: Graph, negative_ratio: int, rng: np.random.Generator):
    """All edges (both directions) plus uniformly drawn non-edges."""
    e = graph.edges
    pos_u = np.concatenate([e[:, 0], e[:, 1]])
    pos_v = np.concatenate([e[:, 1], e[:, 0]])
    want = negative_ratio * len(e)
    adj = set(map(tuple, e.tolist()))
    neg_u, neg_v = [], []
    while len(neg_u) < want:
        u, v = rng.integers(0, graph.n, 2)
        a, b = (u, v) if u < v else (v, u)
        if u != v and (a, b) not in adj:
            neg_u.append(u)
            neg_v.append(v)
    u = np.concatenate([pos_u, np.asarray(neg_u, dtype=np.int64)])
    v = np.concatenate([pos_v, np.asarray(neg_v, dtype=np.int64)])
    target = np.concatenate([np.ones(len(pos_u)), np.zeros(want)])
    return u, v, target


def constant_density_edge_loss(graph: Graph) -> float:
    """Full-matrix loss of the best constant predictor (the graph density)."""
    rho = 2.0 * graph.num_edges / graph.n ** 2
    return rho * (1.0 - rho)


# ---------------------------------------------------------------- parameters

def init_params(graph: Graph, config: Stage1Config, seed: int) -> dict[str, np.ndarray]:
    hidden = [config.hidden] * (config.layers - 1)
    node_enc = init_encoder([graph.d_in, *hidden, config.d_code], "node_text", rngs.stream(seed, "encoder-node"))
    edge_enc = init_encoder([2 + config.spectral_dims, *hidden, config.d_code], "edge_structure", rngs.stream(seed, "encoder-edge"))
    cb = init_codebook(config.K, config.d_code, rngs.stream(seed, rngs.CODEBOOK_INIT))
    dec = rngs.stream(seed, "decoders")
    s_node = np.sqrt(6.0 / (config.d_code + graph.d_in))
    s_edge = np.sqrt(6.0 / (config.d_code + config.d_edgecode))
    params = {**node_enc.to_dict("node"), **edge_enc.to_dict("edge"), "codebook": cb.E}
    params["dec.node"] = dec.uniform(-s_node, s_node, (config.d_code, graph.d_in))
    params["dec.edge"] = dec.uniform(-s_edge, s_edge, (config.d_code, config.d_edgecode))
    rho = min(max(2.0 * graph.num_edges / graph.n ** 2, 1e-6), 1 - 1e-6)
    params["dec.edge_bias"] = np.array(np.log(rho / (1.0 - rho)))
    return params


def _layer_weights(t, prefix: str):
    out = []
    i = 0
    while f"{prefix}.{i}.self" in t:
        out.append((t[f"{prefix}.{i}.self"], t[f"{prefix}.{i}.nb"]))
        i += 1
    return out


@dataclass
class Stage1Artifacts:
    config: Stage1Config
    params: dict[str, np.ndarray]
    metrics: list[dict] = field(default_factory=list)
    best_epoch: int = -1

    @property
    def codebook(self) -> Codebook:
        return Codebook(self.params["codebook"])

    def encoder(self, channel: str) -> EncoderParams:
        prefix = {"node_text": "node", "edge_structure": "edge"}[channel]
        return EncoderParams.from_dict(self.params, prefix, channel)

    @property
    def decoders(self) -> DecoderParams:
        return DecoderParams(self.params["dec.node"], self.params["dec.edge"], float(self.params["dec.edge_bias"]))

    def save(self, directory) -> Path:
        K, d = self.params["codebook"].shape
        meta = {
            "codebook": f"{K}x{d}",
            "node.channel": "node_text",
            "edge.channel": "edge_structure",
            "best_epoch": str(self.best_epoch),
            "stage1_config": self.config.to_json(),
        }
        return ng.save_checkpoint(directory, self.params, meta)

    @classmethod
    def load(cls, directory) -> "Stage1Artifacts":
        arrays, meta = ng.load_checkpoint(directory)
        return cls(Stage1Config.from_json(meta["stage1_config"]), arrays, [], int(meta.get("best_epoch", -1)))


# ---------------------------------------------------------------- forward

@dataclass
class Stage1Noise:
    node: np.ndarray | None
    edge: np.ndarray | None

    @classmethod
    def draw(cls, n: int, K: int, rng: np.random.Generator) -> "Stage1Noise":
        return cls(sample_gumbel((n, K), rng), sample_gumbel((n, K), rng))

    @classmethod
    def zero(cls) -> "Stage1Noise":
        return cls(None, None)


def _quantize(h: ng.Tensor, E: ng.Tensor, config: Stage1Config, tau: float, noise):
    """Returns (z, p_for_kl, log_p_for_kl or None, hard indices, p_for_diagnostics, vq term)."""
    if config.strategy == "gumbel_softmax":
        p, log_p, z = relax_rows(h, E, tau, noise, config.metric, config.logit_scale)
        return z, p, log_p, np.argmax(p.data, axis=1), p.data, None
    idx = hard_indices(h.data, E.data, config.strategy, noise if config.strategy == "gumbel_argmax" else None,
                       config.metric, config.logit_scale)
    z = ng.straight_through(h, E.data[idx])
    vq = None
    if config.vq_losses:
        chosen = ng.gather_rows(E, idx)
        codebook_term = ng.mean(ng.sum((ng.stop_gradient(h) - chosen) ** 2, axis=1))
        commit_term = ng.mean(ng.sum((h - ng.stop_gradient(chosen)) ** 2, axis=1))
        vq = codebook_term + config.commitment_beta * commit_term
    return z, None, None, idx, one_hot(idx, E.shape[0]), vq


def stage1_loss(graph: Graph, params, config: Stage1Config, tau: float, noise: Stage1Noise,
                node_rows: np.ndarray | None = None, edge_sample=None, adjacency: np.ndarray | None = None,
                structure_input: np.ndarray | None = None):
    """Combined Stage-1 loss as a tensor plus a diagnostics dict.

    ``params`` maps names to tensors (tracked or not) or arrays. ``node_rows``
    restricts the node reconstruction term; KL and edge terms use every node.
    """
    t = {k: ng.as_tensor(v) for k, v in params.items()}
    E = t["codebook"]
    h_node = encode_tensors(_layer_weights(t, "node"), graph, channel_input(graph, "node_text"))
    x_edge = structure_input if structure_input is not None else channel_input(graph, "edge_structure", config.spectral_dims)
    h_edge = encode_tensors(_layer_weights(t, "edge"), graph, x_edge)
    z_node, p_node, lp_node, idx_node, dp_node, vq_node = _quantize(h_node, E, config, tau, noise.node)
    z_edge, p_edge, lp_edge, idx_edge, dp_edge, vq_edge = _quantize(h_edge, E, config, tau, noise.edge)

    v_hat = z_node @ t["dec.node"]
    rows = np.arange(graph.n) if node_rows is None else np.asarray(node_rows)
    l_node = node_recon_loss(graph.features[rows], ng.gather_rows(v_hat, rows), config.gamma)

    decoded = z_edge @ t["dec.edge"]
    if edge_sample is None and graph.n > config.full_matrix_threshold:
        raise ValueError("graph exceeds full_matrix_threshold; pass an edge sample")
    A = graph.adjacency() if edge_sample is None and adjacency is None else adjacency
    l_edge = edge_recon_loss(A, decoded, t["dec.edge_bias"], edge_sample)

    if config.strategy == "gumbel_softmax":
        if config.kl_mode == "per_node":
            kl = 0.5 * (kl_to_uniform(p_node, lp_node) + kl_to_uniform(p_edge, lp_edge))
        else:
            kl = 0.5 * (_kl_batch_mean(p_node) + _kl_batch_mean(p_edge))
    else:
        kl = ng.Tensor(np.log(config.K))

    total = config.edge_weight * l_edge + config.alpha_node * l_node + config.beta_kl * kl
    vq_val = 0.0
    if vq_node is not None:
        vq = vq_node + vq_edge
        total = total + vq
        vq_val = float(vq.data)
    diag_p = np.concatenate([dp_node, dp_edge])
    diag = {
        "loss_total": float(total.data),
        "loss_node": float(l_node.data),
        "loss_edge": float(l_edge.data),
        "kl": float(kl.data),
        "loss_vq": vq_val,
        "tau": float(tau),
        "perplexity": perplexity(diag_p),
        "usage": usage_rate(np.concatenate([idx_node, idx_edge]), config.K),
        "h_node": h_node.data,
        "p_node": dp_node,
        "p_edge": dp_edge,
    }
    return total, diag


# ---------------------------------------------------------------- training

METRIC_KEYS = ("epoch", "loss_total", "loss_node", "loss_edge", "kl", "tau", "perplexity", "usage")


def evaluate_stage1(graph: Graph, artifacts: Stage1Artifacts, rows: np.ndarray | None = None,
                    epoch: int | None = None) -> dict:
    """Noise-free diagnostics of trained artifacts (all nodes by default)."""
    cfg = artifacts.config
    tau = anneal_tau(cfg.tau, epoch if epoch is not None else max(artifacts.best_epoch, 0))
    sample = None
    if graph.n > cfg.full_matrix_threshold:
        sample = edge_entries(graph, cfg.negative_ratio, rngs.stream(0, "edge-eval"))
    _, diag = stage1_loss(graph, artifacts.params, cfg, tau, Stage1Noise.zero(), rows, sample)
    return diag


def train_stage1(graph: Graph, config: Stage1Config, seed: int, on_epoch=None) -> Stage1Artifacts:
    """Full-graph Adam training with early stopping on the validation loss.

    Returns the parameters from the best validation epoch. ``on_epoch`` is
    called with each metrics record.
    """
    params = init_params(graph, config, seed)
    if config.epochs == 0:
        return Stage1Artifacts(config, params, [], -1)
    noise_rng = rngs.stream(seed, rngs.GUMBEL_STAGE1)
    neg_rng = rngs.stream(seed, "edge-negatives")
    reseed_rng = rngs.stream(seed, "codebook-reseed")
    train_rows = graph.split_nodes("train")
    val_rows = graph.split_nodes("val")
    full = graph.n <= config.full_matrix_threshold
    A = graph.adjacency() if full else None
    x_struct = channel_input(graph, "edge_structure", config.spectral_dims)
    val_sample = None if full else edge_entries(graph, config.negative_ratio, rngs.stream(seed, "edge-val"))
    state = ng.AdamState(lr=config.lr)
    best_val, best_params, best_epoch, wait = np.inf, params, -1, 0
    metrics: list[dict] = []
    for epoch in range(config.epochs):
        tau = anneal_tau(config.tau, epoch)
        noise = Stage1Noise.draw(graph.n, config.K, noise_rng)
        sample = None if full else edge_entries(graph, config.negative_ratio, neg_rng)
        tape = ng.Tape()
        tracked = {k: tape.param(v, k) for k, v in params.items()}
        try:
            loss, diag = stage1_loss(graph, tracked, config, tau, noise, train_rows, sample, A, x_struct)
        except FloatingPointError as exc:
            raise TrainingError(f"non-finite loss at epoch {epoch}: {exc}") from None
        if not np.isfinite(diag["loss_total"]):
            raise TrainingError(f"non-finite loss at epoch {epoch}")
        grads = tape.backward(loss)
        params, state = ng.adam_step(state, params, grads)
        if config.reseed_every and (epoch + 1) % config.reseed_every == 0:
            used = np.concatenate([np.argmax(diag["p_node"], 1), np.argmax(diag["p_edge"], 1)])
            params["codebook"] = reseed_unused(Codebook(params["codebook"]), used, diag["h_node"], reseed_rng).E
        try:
            val_loss, _ = stage1_loss(graph, params, config, tau, Stage1Noise.zero(),
                                      val_rows if len(val_rows) else None, val_sample, A, x_struct)
        except FloatingPointError as exc:
            raise TrainingError(f"non-finite validation loss at epoch {epoch}: {exc}") from None
        record = {k: diag[k] for k in METRIC_KEYS if k != "epoch"}
        record = {"epoch": epoch, **record, "val_loss": float(val_loss.data)}
        metrics.append(record)
        if on_epoch is not None:
            on_epoch(record)
        if record["val_loss"] < best_val:
            best_val, best_params, best_epoch, wait = record["val_loss"], params, epoch, 0
        else:
            wait += 1
            if wait >= config.patience:
                break
    return Stage1Artifacts(config, dict(best_params), metrics, best_epoch)


def with_overrides(config: Stage1Config, **kw) -> Stage1Config:
    return replace(config, **kw)
