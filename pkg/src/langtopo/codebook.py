"""Graph-modality codebook: Gumbel-softmax relaxed lookup, hard lookup, diagnostics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numgrad as ng

GUMBEL_EPS = 1e-12
HARD_STRATEGIES = ("argmax_euclidean", "argmax_cosine", "gumbel_argmax")
STRATEGIES = ("gumbel_softmax",) + HARD_STRATEGIES


@dataclass
class Codebook:
    E: np.ndarray

    def __post_init__(self):
        self.E = np.asarray(self.E, dtype=np.float64)
        if self.E.ndim != 2 or self.E.shape[0] < 2:
            raise ValueError("codebook needs K >= 2 rows")
        if not np.all(np.isfinite(self.E)):
            raise ValueError("codebook has non-finite entries")

    @property
    def K(self) -> int:
        return self.E.shape[0]

    @property
    def d_code(self) -> int:
        return self.E.shape[1]


@dataclass
class RelaxedAssignment:
    p: np.ndarray
    z: np.ndarray


@dataclass(frozen=True)
class TauSchedule:
    tau0: float = 1.0
    tau_min: float = 0.1
    decay_rate: float = 0.97

    def __post_init__(self):
        if not self.tau0 >= self.tau_min > 0:
            raise ValueError("need tau0 >= tau_min > 0")
        if not 0 < self.decay_rate <= 1:
            raise ValueError("decay_rate must lie in (0, 1]")


def anneal_tau(schedule: TauSchedule, epoch: int) -> float:
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    return max(schedule.tau_min, schedule.tau0 * schedule.decay_rate ** epoch)


def init_codebook(K: int, d_code: int, seed: int | np.random.Generator) -> Codebook:
    """Gaussian rows projected onto the unit sphere."""
    if K < 2:
        raise ValueError("K must be at least 2")
    if d_code < 1:
        raise ValueError("d_code must be at least 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    e = rng.standard_normal((K, d_code))
    norms = np.linalg.norm(e, axis=1, keepdims=True)
    return Codebook(e / np.where(norms > 0, norms, 1.0))


def gumbel_from_uniform(u) -> np.ndarray:
    u = np.clip(np.asarray(u, dtype=np.float64), GUMBEL_EPS, 1.0 - GUMBEL_EPS)
    return -np.log(-np.log(u))


def sample_gumbel(count, rng: np.random.Generator) -> np.ndarray:
    """Standard Gumbel draws; ``count`` is an int or a shape tuple."""
    shape = (count,) if np.isscalar(count) else tuple(count)
    if int(np.prod(shape)) < 1:
        raise ValueError("count must be at least 1")
    u = GUMBEL_EPS + (1.0 - 2 * GUMBEL_EPS) * rng.random(shape)
    return gumbel_from_uniform(u)


def similarity_logits(h, E, metric: str = "euclidean", scale: float = 1.0) -> ng.Tensor:
    """Codeword logits: ``-||h - e||^2 / 2`` (euclidean) or ``scale * cos(h, e)``.

    ``h`` is (n, d) and ``E`` is (K, d); both may be tracked tensors.
    """
    h, E = ng.as_tensor(h), ng.as_tensor(E)
    if h.shape[1] != E.shape[1]:
        raise ValueError(f"embedding dim {h.shape[1]} != codeword dim {E.shape[1]}")
    if metric == "euclidean":
        hh = ng.sum(h * h, axis=1, keepdims=True)
        ee = ng.sum(E * E, axis=1, keepdims=True).T
        return (h @ E.T) - 0.5 * hh - 0.5 * ee
    if metric == "cosine":
        return (ng.row_l2_normalize(h) @ ng.row_l2_normalize(E).T) * scale
    raise ValueError(f"unknown similarity metric {metric!r}")


def relax_rows(h, E, tau: float, noise=None, metric: str = "euclidean", scale: float = 1.0):
    """Batched Gumbel-softmax lookup.

    Returns ``(P, log_P, Z)`` tensors; ``noise`` is an (n, K) array or None
    for zero noise.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    s = similarity_logits(h, E, metric, scale)
    if noise is not None:
        s = s + np.asarray(noise, dtype=np.float64)
    scaled = s * (1.0 / tau)
    log_p = ng.row_log_softmax(scaled)
    p = ng.row_softmax(scaled)
    return p, log_p, p @ ng.as_tensor(E)


def relax_assign(h, codebook: Codebook, tau: float, rng: np.random.Generator | None = None, *,
                 zero_noise: bool = False, metric: str = "euclidean", scale: float = 1.0) -> RelaxedAssignment:
    h = np.asarray(h, dtype=np.float64).reshape(1, -1)
    if not np.all(np.isfinite(h)):
        raise ValueError("h has non-finite entries")
    noise = None
    if not zero_noise:
        if rng is None:
            raise ValueError("an rng is required unless zero_noise is set")
        noise = sample_gumbel((1, codebook.K), rng)
    p, _, z = relax_rows(h, codebook.E, tau, noise, metric, scale)
    return RelaxedAssignment(p.data[0].copy(), z.data[0].copy())


def hard_indices(h: np.ndarray, E: np.ndarray, strategy: str, noise: np.ndarray | None = None,
                 metric: str = "euclidean", scale: float = 1.0) -> np.ndarray:
    """Row-wise codeword choice. ``np.argmax`` keeps the lowest index on ties."""
    h = np.atleast_2d(np.asarray(h, dtype=np.float64))
    if not np.all(np.isfinite(h)):
        raise ValueError("h has non-finite entries")
    if strategy == "argmax_euclidean":
        d2 = ((h[:, None, :] - E[None, :, :]) ** 2).sum(axis=2)
        return np.argmin(d2, axis=1)
    if strategy == "argmax_cosine":
        hn = np.linalg.norm(h, axis=1)
        if np.any(hn == 0):
            raise ValueError("cosine undefined for zero vector")
        en = np.linalg.norm(E, axis=1)
        sims = (h @ E.T) / (hn[:, None] * np.where(en > 0, en, 1.0)[None, :])
        return np.argmax(sims, axis=1)
    if strategy == "gumbel_argmax":
        s = similarity_logits(h, E, metric, scale).data
        if noise is not None:
            s = s + noise
        return np.argmax(s, axis=1)
    raise ValueError(f"unknown hard strategy {strategy!r}")


def hard_assign(h, codebook: Codebook, strategy: str, rng: np.random.Generator | None = None,
                *, zero_noise: bool = False) -> tuple[int, np.ndarray]:
    noise = None
    if strategy == "gumbel_argmax" and not zero_noise:
        if rng is None:
            raise ValueError("gumbel_argmax needs an rng unless zero_noise is set")
        noise = sample_gumbel((1, codebook.K), rng)
    idx = int(hard_indices(h, codebook.E, strategy, noise)[0])
    return idx, codebook.E[idx].copy()


def _entropy(p: np.ndarray) -> float:
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


def perplexity(assignments) -> float:
    """``exp`` of the entropy (nats) of the mean assignment distribution."""
    a = np.asarray(assignments, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] == 0:
        raise ValueError("need a non-empty list of probability vectors")
    return float(np.exp(_entropy(a.mean(axis=0))))


def usage_rate(hard_indices_, K: int) -> float:
    """Fraction of the ``K`` codewords selected at least once."""
    idx = np.asarray(hard_indices_, dtype=np.int64).ravel()
    if idx.size == 0:
        raise ValueError("empty index list")
    if idx.min() < 0 or idx.max() >= K:
        raise ValueError("codeword index out of range")
    return len(np.unique(idx)) / K


def one_hot(indices, K: int) -> np.ndarray:
    idx = np.asarray(indices, dtype=np.int64)
    out = np.zeros((idx.size, K))
    out[np.arange(idx.size), idx] = 1.0
    return out


def softmax(logits) -> np.ndarray:
    x = np.asarray(logits, dtype=np.float64)
    e = np.exp(x - x.max())
    return e / e.sum()


def gumbel_argmax_frequencies(logits, samples: int, rng: np.random.Generator,
                              chunk: int = 50_000) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    K = logits.size
    counts = np.zeros(K, dtype=np.int64)
    done = 0
    while done < samples:
        m = min(chunk, samples - done)
        picks = np.argmax(logits[None, :] + sample_gumbel((m, K), rng), axis=1)
        counts += np.bincount(picks, minlength=K)
        done += m
    return counts / samples


def gumbel_max_equivalence_test(logits, samples: int, rng: np.random.Generator) -> float:
    """Total-variation distance between Gumbel-argmax frequencies and ``softmax(logits)``."""
    if samples < 1000:
        raise ValueError("samples must be at least 1000")
    freq = gumbel_argmax_frequencies(logits, samples, rng)
    return 0.5 * float(np.abs(freq - softmax(logits)).sum())


def reseed_unused(codebook: Codebook, used: np.ndarray, embeddings: np.ndarray,
                  rng: np.random.Generator) -> Codebook:
    """Replace never-selected codewords with randomly chosen encoder outputs."""
    dead = np.setdiff1d(np.arange(codebook.K), np.unique(used))
    if dead.size == 0:
        return codebook
    E = codebook.E.copy()
    E[dead] = embeddings[rng.integers(0, len(embeddings), dead.size)]
    return Codebook(E)
