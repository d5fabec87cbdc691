"""Stage 2: align the student to the frozen GNN through the Stage-1 codebook.

Loss = cross-entropy + alpha_mse * MSE(z_llm, z_gnn) + beta_kl * KL(p_llm || p_gnn).
Inference uses only the student and the serialized neighbourhood text.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import gnn
from . import numgrad as ng
from . import rng as rngs
from .codebook import Codebook, relax_rows, sample_gumbel
from .graph import Graph
from .stage1 import Stage1Artifacts, TrainingError
from .student import (
    Vocabulary,
    bag_of_tokens,
    build_vocab,
    init_student,
    serialize_node,
    student_forward_batch,
)

KL_CLAMP = 1e-12
GNN_CHANNELS = ("node", "edge", "mean")


@dataclass(frozen=True)
class Stage2Config:
    alpha_mse: float = 0.1
    beta_kl: float = 1e-4
    lr: float = 5e-3
    epochs: int = 50
    batch_size: int = 4
    accumulation: int = 8
    hops: int = 1
    budget: int = 16
    max_len: int = 512
    tau: float = 0.5
    gnn_channel: str = "edge"
    shared_noise: bool = False
    align_scope: str = "all"
    bins: int = 8
    d_tok: int = 32
    d_hidden: int = 64
    d_rep: int = 32

    def __post_init__(self):
        if self.alpha_mse < 0 or self.beta_kl < 0:
            raise ValueError("alpha_mse and beta_kl must be non-negative")
        if self.lr <= 0 or self.epochs < 0 or self.batch_size < 1 or self.accumulation < 1:
            raise ValueError("lr > 0, epochs >= 0, batch_size >= 1, accumulation >= 1 required")
        if self.hops not in (0, 1, 2):
            raise ValueError("hops must be 0, 1 or 2")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.align_scope not in ("train", "all"):
            raise ValueError("align_scope must be 'train' or 'all'")
        if self.gnn_channel not in GNN_CHANNELS:
            raise ValueError(f"gnn_channel must be one of {GNN_CHANNELS}")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]


@dataclass
class AlignmentPair:
    z_llm: np.ndarray
    z_gnn: np.ndarray
    p_llm: np.ndarray
    p_gnn: np.ndarray


@dataclass
class Student:
    params: dict[str, np.ndarray]
    vocab: Vocabulary
    config: Stage2Config

    def save(self, directory) -> Path:
        d = Path(directory)
        arrays = dict(self.params)
        arrays["vocab.lo"] = self.vocab.lo
        arrays["vocab.width"] = self.vocab.width
        arrays["vocab.nbins"] = self.vocab.nbins.astype(np.float64)
        ng.save_checkpoint(d, arrays, {"stage2_config": self.config.to_json()})
        self.vocab.save(d / "vocab.txt")
        return d

    @classmethod
    def load(cls, directory) -> "Student":
        d = Path(directory)
        arrays, meta = ng.load_checkpoint(d)
        vocab = Vocabulary(Vocabulary.read_tokens(d / "vocab.txt"), arrays.pop("vocab.lo"),
                           arrays.pop("vocab.width"), arrays.pop("vocab.nbins").astype(np.int64))
        return cls(arrays, vocab, Stage2Config(**json.loads(meta["stage2_config"])))


# ---------------------------------------------------------------- GNN side

def gnn_embeddings(artifacts: Stage1Artifacts, graph: Graph, channel: str = "mean") -> np.ndarray:
    """Frozen encoder outputs for every node; plain arrays, so no gradient can reach the GNN."""
    if channel not in GNN_CHANNELS:
        raise ValueError(f"unknown channel {channel!r}")
    out = []
    if channel in ("node", "mean"):
        out.append(gnn.encode(artifacts.encoder("node_text"), graph))
    if channel in ("edge", "mean"):
        out.append(gnn.encode(artifacts.encoder("edge_structure"), graph))
    return out[0] if len(out) == 1 else 0.5 * (out[0] + out[1])


def gnn_reference(artifacts: Stage1Artifacts, graph: Graph, node: int, channel: str = "mean") -> np.ndarray:
    if not 0 <= node < graph.n:
        raise IndexError(f"node {node} out of range")
    return gnn_embeddings(artifacts, graph, channel)[node].copy()


# ---------------------------------------------------------------- alignment

def _relax(h, E, tau, noise, artifacts_cfg):
    metric = artifacts_cfg.metric if artifacts_cfg is not None else "euclidean"
    scale = artifacts_cfg.logit_scale if artifacts_cfg is not None else 1.0
    return relax_rows(h, E, tau, noise, metric, scale)


def align_batch(h_llm, h_gnn: np.ndarray, E: np.ndarray, tau: float, noise_llm, noise_gnn,
                stage1_config=None):
    """Tensors ``(p_llm, log_p_llm, z_llm)`` and arrays ``(p_gnn, z_gnn)``."""
    p_llm, logp_llm, z_llm = _relax(h_llm, E, tau, noise_llm, stage1_config)
    p_gnn, _, z_gnn = _relax(np.asarray(h_gnn), E, tau, noise_gnn, stage1_config)
    return p_llm, logp_llm, z_llm, p_gnn.data, z_gnn.data


def align_components(h_llm, h_gnn, codebook: Codebook, tau: float, rng: np.random.Generator | None = None,
                     *, shared_noise: bool = False, zero_noise: bool = False, stage1_config=None) -> AlignmentPair:
    h_llm = np.asarray(h_llm, dtype=np.float64).reshape(1, -1)
    h_gnn = np.asarray(h_gnn, dtype=np.float64).reshape(1, -1)
    if h_llm.shape[1] != codebook.d_code or h_gnn.shape[1] != codebook.d_code:
        raise ValueError("both embeddings must have the codebook dimension")
    if zero_noise:
        n_llm = n_gnn = None
    else:
        if rng is None:
            raise ValueError("an rng is required unless zero_noise is set")
        n_llm = sample_gumbel((1, codebook.K), rng)
        n_gnn = n_llm if shared_noise else sample_gumbel((1, codebook.K), rng)
    p_llm, _, z_llm, p_gnn, z_gnn = align_batch(h_llm, h_gnn, codebook.E, tau, n_llm, n_gnn, stage1_config)
    return AlignmentPair(z_llm.data[0].copy(), z_gnn[0].copy(), p_llm.data[0].copy(), p_gnn[0].copy())


def _cross_entropy(logits: ng.Tensor, labels: np.ndarray) -> ng.Tensor:
    logp = ng.row_log_softmax(logits)
    onehot = np.zeros(logp.shape)
    onehot[np.arange(len(labels)), labels] = 1.0
    return -ng.mean(ng.sum(logp * onehot, axis=1))


def stage2_batch_loss(logits, labels, z_llm, z_gnn, p_llm, logp_llm, p_gnn, config: Stage2Config,
                      labelled: np.ndarray | None = None):
    """Batch-mean Stage-2 loss tensor and a diagnostics dict.

    ``labelled`` optionally masks the rows that contribute cross-entropy;
    alignment terms always use every row.
    """
    logits = ng.as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64).ravel()
    C = logits.shape[1]
    if labels.min() < 0 or labels.max() >= C:
        raise ValueError("label out of range")
    if labelled is None:
        ce = _cross_entropy(logits, labels)
    elif np.any(labelled):
        rows = np.flatnonzero(labelled)
        ce = _cross_entropy(ng.gather_rows(logits, rows), labels[rows])
    else:
        ce = ng.Tensor(0.0)
    diff = ng.as_tensor(z_llm) - np.asarray(z_gnn)
    mse = ng.mean(diff * diff)
    p_llm = ng.as_tensor(p_llm)
    if logp_llm is None:
        with np.errstate(divide="ignore"):
            logp_llm = np.where(p_llm.data > 0, np.log(np.where(p_llm.data > 0, p_llm.data, 1.0)), 0.0)
    log_gnn = np.log(np.maximum(np.asarray(p_gnn), KL_CLAMP))
    kl = ng.mean(ng.sum(p_llm * (ng.as_tensor(logp_llm) - log_gnn), axis=1))
    total = ce + config.alpha_mse * mse + config.beta_kl * kl
    return total, {"loss": float(total.data), "loss_ce": float(ce.data),
                   "loss_mse": float(mse.data), "loss_kl": float(kl.data)}


def stage2_loss(logits, label: int, pair: AlignmentPair, config: Stage2Config):
    """Single-example Stage-2 loss on plain arrays; returns ``(value, diagnostics)``."""
    logits = np.asarray(logits, dtype=np.float64).reshape(1, -1)
    total, diag = stage2_batch_loss(logits, [label], pair.z_llm.reshape(1, -1), pair.z_gnn.reshape(1, -1),
                                    pair.p_llm.reshape(1, -1), None, pair.p_gnn.reshape(1, -1), config)
    return float(total.data), diag


# ---------------------------------------------------------------- training

STAGE2_METRIC_KEYS = ("epoch", "loss_ce", "loss_mse", "loss_kl", "train_acc", "val_acc")


def pooled_inputs(graph: Graph, vocab: Vocabulary, config: Stage2Config, hops: int | None = None) -> np.ndarray:
    hops = config.hops if hops is None else hops
    seqs = [serialize_node(graph, u, hops, config.budget, vocab, config.max_len) for u in range(graph.n)]
    return bag_of_tokens(seqs, len(vocab))


def _accuracy(params, pooled: np.ndarray, labels: np.ndarray, rows: np.ndarray) -> float:
    if len(rows) == 0:
        return float("nan")
    _, logits = student_forward_batch(params, pooled[rows])
    return float(np.mean(np.argmax(logits.data, axis=1) == labels[rows]))


def new_student(graph: Graph, d_code: int, config: Stage2Config, seed: int) -> Student:
    vocab = build_vocab(graph, config.bins)
    params = init_student(len(vocab), config.d_tok, config.d_hidden, config.d_rep,
                          d_code, graph.num_classes, rngs.stream(seed, "student-init"))
    return Student(params, vocab, config)


def train_stage2(graph: Graph, artifacts: Stage1Artifacts | None, student: Student, config: Stage2Config,
                 seed: int, on_epoch=None) -> tuple[Student, list[dict]]:
    """Adam on the student only; returns the best-validation-accuracy student and per-epoch metrics.

    ``artifacts`` may be None when both alignment weights are zero.
    """
    use_align = config.alpha_mse > 0 or config.beta_kl > 0
    if use_align and artifacts is None:
        raise ValueError("alignment needs Stage-1 artifacts")
    if config.epochs == 0:
        return student, []
    d_code = student.params["align.w"].shape[1]
    if use_align:
        E = artifacts.codebook.E
        h_gnn_all = gnn_embeddings(artifacts, graph, config.gnn_channel)
    K = E.shape[0] if use_align else 2
    pooled = pooled_inputs(graph, student.vocab, config)
    labels = graph.labels
    train_rows = graph.split_nodes("train")
    val_rows = graph.split_nodes("val")
    is_train = np.zeros(graph.n, dtype=bool)
    is_train[train_rows] = True
    visit = np.arange(graph.n) if config.align_scope == "all" else train_rows
    order_rng = rngs.stream(seed, "stage2-order")
    noise_rng = rngs.stream(seed, rngs.GUMBEL_STAGE2)
    params = {k: v.copy() for k, v in student.params.items()}
    state = ng.AdamState(lr=config.lr)
    best_acc, best_params = -1.0, params
    metrics = []
    for epoch in range(config.epochs):
        order = order_rng.permutation(visit)
        batches = [order[i:i + config.batch_size] for i in range(0, len(order), config.batch_size)]
        sums = {"loss_ce": 0.0, "loss_mse": 0.0, "loss_kl": 0.0}
        acc_grads, acc_count = None, 0
        for bi, rows in enumerate(batches):
            tape = ng.Tape()
            tracked = {k: tape.param(v, k) for k, v in params.items()}
            h_llm, logits = student_forward_batch(tracked, pooled[rows])
            n_llm = sample_gumbel((len(rows), K), noise_rng)
            n_gnn = n_llm if config.shared_noise else sample_gumbel((len(rows), K), noise_rng)
            if use_align:
                p_llm, logp_llm, z_llm, p_gnn, z_gnn = align_batch(
                    h_llm, h_gnn_all[rows], E, config.tau, n_llm, n_gnn, artifacts.config)
            else:
                p_llm = np.full((len(rows), K), 1.0 / K)
                p_gnn = p_llm
                logp_llm = np.log(p_llm)
                z_llm = z_gnn = np.zeros((len(rows), d_code))
            try:
                loss, diag = stage2_batch_loss(logits, labels[rows], z_llm, z_gnn, p_llm, logp_llm, p_gnn,
                                               config, is_train[rows])
            except FloatingPointError as exc:
                raise TrainingError(f"non-finite loss at epoch {epoch}: {exc}") from None
            if not np.isfinite(diag["loss"]):
                raise TrainingError(f"non-finite loss at epoch {epoch}")
            for k in sums:
                sums[k] += diag[k]
            grads = tape.backward(loss)
            if acc_grads is None:
                acc_grads = grads
            else:
                for k in acc_grads:
                    acc_grads[k] += grads[k]
            acc_count += 1
            if acc_count == config.accumulation or bi == len(batches) - 1:
                mean_grads = {k: g / acc_count for k, g in acc_grads.items()}
                params, state = ng.adam_step(state, params, mean_grads)
                acc_grads, acc_count = None, 0
        nb = max(len(batches), 1)
        record = {"epoch": epoch, **{k: v / nb for k, v in sums.items()},
                  "train_acc": _accuracy(params, pooled, labels, train_rows),
                  "val_acc": _accuracy(params, pooled, labels, val_rows)}
        metrics.append(record)
        if on_epoch is not None:
            on_epoch(record)
        score = record["val_acc"] if len(val_rows) else record["train_acc"]
        if score > best_acc:
            best_acc, best_params = score, params
    return Student(dict(best_params), student.vocab, config), metrics


# ---------------------------------------------------------------- inference

class GnnInvokedError(AssertionError):
    pass


def infer(student: Student, graph: Graph, node: int, hops: int | None = None) -> int:
    """Predict from the serialized text and links alone; fails if any GNN forward ran."""
    before = gnn.gnn_forward_count()
    hops = student.config.hops if hops is None else hops
    seq = serialize_node(graph, node, hops, student.config.budget, student.vocab, student.config.max_len)
    _, logits = student_forward_batch(student.params, bag_of_tokens([seq], len(student.vocab)))
    if gnn.gnn_forward_count() != before:
        raise GnnInvokedError("GNN encoder ran during inference")
    return int(np.argmax(logits.data[0]))


def evaluate(student: Student, graph: Graph, split: str = "test", hops: int | None = None) -> float:
    rows = graph.split_nodes(split)
    if len(rows) == 0:
        raise ValueError(f"no nodes in split {split!r}")
    preds = np.array([infer(student, graph, int(u), hops) for u in rows])
    return float(np.mean(preds == graph.labels[rows]))
