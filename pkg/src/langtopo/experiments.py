"""Multi-run experiments shared by the CLI and the acceptance suite."""

from __future__ import annotations

from dataclasses import replace
from typing import Iterable

import numpy as np

from .codebook import STRATEGIES
from .graph import Graph
from .stage1 import Stage1Artifacts, Stage1Config, evaluate_stage1, train_stage1
from .stage2 import Stage2Config, evaluate, new_student, train_stage2

LOOKUP_COLUMNS = ("perplexity", "usage", "loss_node", "loss_edge")


def compare_lookup(graph: Graph, config: Stage1Config, seeds: Iterable[int]) -> dict[str, dict[str, float]]:
    """Train Stage 1 once per strategy and seed; mean noise-free diagnostics per strategy."""
    seeds = list(seeds)
    table = {}
    for strategy in STRATEGIES:
        cfg = replace(config, strategy=strategy)
        rows = []
        for seed in seeds:
            diag = evaluate_stage1(graph, train_stage1(graph, cfg, seed))
            rows.append([diag[c] for c in LOOKUP_COLUMNS])
        table[strategy] = dict(zip(LOOKUP_COLUMNS, np.mean(rows, axis=0).tolist()))
    return table


def student_accuracy(graph: Graph, artifacts: Stage1Artifacts | None, config: Stage2Config,
                     seed: int, d_code: int) -> float:
    student = new_student(graph, d_code, config, seed)
    student, _ = train_stage2(graph, artifacts, student, config, seed)
    return evaluate(student, graph, "test")


def unaligned(config: Stage2Config) -> Stage2Config:
    return replace(config, alpha_mse=0.0, beta_kl=0.0)


def ablate_hops(graph: Graph, stage1: Stage1Config, stage2: Stage2Config, seeds: Iterable[int],
                hops: Iterable[int] = (0, 1, 2)) -> dict[tuple[int, str], list[float]]:
    """Per-seed test accuracies keyed by ``(hops, "aligned" | "unaligned")``."""
    seeds = list(seeds)
    hops = list(hops)
    out: dict[tuple[int, str], list[float]] = {(h, v): [] for h in hops for v in ("aligned", "unaligned")}
    for seed in seeds:
        artifacts = train_stage1(graph, stage1, seed)
        for h in hops:
            cfg = replace(stage2, hops=h)
            out[(h, "aligned")].append(student_accuracy(graph, artifacts, cfg, seed, stage1.d_code))
            out[(h, "unaligned")].append(student_accuracy(graph, None, unaligned(cfg), seed, stage1.d_code))
    return out
