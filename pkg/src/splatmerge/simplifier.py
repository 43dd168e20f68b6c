"""Progressive greedy edge-collapse driver.

One pass: exact kNN over current centres -> unique undirected edges -> edge
costs -> cheapest disjoint edges (at most N - N_target of them) -> batch
merge. Passes repeat until the target count is reached or a pass finds
nothing to merge.
"""

from __future__ import annotations

import dataclasses
import logging
import math
import time
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .merge_cost import DEFAULT_BLOCK, CostParams, SharedSampleBank, edge_costs
from .mpmm import MergePlan, apply_plan
from .spatial_graph import MergeGraph, build_graph
from .splat_model import SplatSet

log = logging.getLogger(__name__)


def default_max_passes(keep_ratio: float) -> int:
    return 10 * math.ceil(math.log2(1.0 / keep_ratio)) + 16


def target_count(keep_ratio: float, n0: int) -> int:
    """max(ceil(ratio * n0), 1), with the ratio read as the decimal it was
    written as so 0.07 * 100 is 7, not 8."""
    exact = Fraction(repr(float(keep_ratio))) * n0
    return max(math.ceil(exact), 1)


@dataclass
class SimplifyConfig:
    keep_ratio: float
    k: int = 8
    tau: float = 0.01
    cost: CostParams = field(default_factory=CostParams)
    block_size: int = DEFAULT_BLOCK
    max_passes: int | None = None
    workers: int = 1

    def __post_init__(self):
        if not (0.0 < self.keep_ratio <= 1.0):
            raise ValueError(f"keep_ratio must be in (0, 1], got {self.keep_ratio}")
        if self.k < 1:
            raise ValueError(f"k must be positive, got {self.k}")
        if not (0.0 <= self.tau <= 1.0):
            raise ValueError(f"tau must be in [0, 1], got {self.tau}")
        if self.block_size < 1:
            raise ValueError("block_size must be positive")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.max_passes is None:
            self.max_passes = default_max_passes(self.keep_ratio)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["cost"]["cost_mode"] = self.cost.cost_mode.value
        return d


@dataclass
class PassRecord:
    pass_index: int
    node_count: int
    edge_count: int
    merges: int
    min_cost: float | None
    median_cost: float | None
    wall_time: float


@dataclass
class SimplifyReport:
    input_count: int
    filtered: int
    target_count: int
    seed: int
    passes: list[PassRecord] = field(default_factory=list)
    final_count: int = 0
    stop_reason: str = ""
    total_wall_time: float = 0.0
    invalid_records: int = 0
    config: dict = field(default_factory=dict)

    @property
    def total_merges(self) -> int:
        return sum(p.merges for p in self.passes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def opacity_filter(splats: SplatSet, tau: float) -> tuple[SplatSet, int]:
    """Drop splats with opacity below min(tau, lower median of opacity)."""
    n = len(splats)
    if n == 0:
        return splats, 0
    median = np.sort(splats.alpha)[(n - 1) // 2]
    threshold = min(tau, median)
    keep = splats.alpha >= threshold
    dropped = int(n - keep.sum())
    return (splats.subset(keep) if dropped else splats), dropped


def greedy_disjoint_pairs(graph: MergeGraph, max_pairs: int) -> MergePlan:
    """Scan edges by ascending (cost, i, j); take each one whose endpoints are
    both still free, until ``max_pairs`` are taken. Infinite costs never win."""
    if graph.costs is None:
        raise ValueError("graph has no costs")
    if max_pairs <= 0 or len(graph) == 0:
        return MergePlan(np.zeros((0, 2), dtype=np.int64))
    i, j = graph.edges[:, 0], graph.edges[:, 1]
    order = np.lexsort((j, i, graph.costs))
    order = order[np.isfinite(graph.costs[order])]
    used = bytearray(graph.node_count)
    picked = []
    for a, b in zip(i[order].tolist(), j[order].tolist()):
        if used[a] or used[b]:
            continue
        used[a] = used[b] = 1
        picked.append((a, b))
        if len(picked) >= max_pairs:
            break
    return MergePlan(np.array(picked, dtype=np.int64).reshape(-1, 2))


def simplify(splats: SplatSet, config: SimplifyConfig) -> tuple[SplatSet, SimplifyReport]:
    t_start = time.perf_counter()
    n0 = len(splats)
    n_tgt = target_count(config.keep_ratio, n0)
    report = SimplifyReport(
        input_count=n0, filtered=0, target_count=n_tgt, seed=config.cost.rng_seed, config=config.to_dict()
    )
    current, report.filtered = opacity_filter(splats, config.tau)
    log.info("opacity filter dropped %d of %d splats", report.filtered, n0)

    report.stop_reason = "target reached"
    pass_index = 0
    while len(current) > n_tgt:
        if pass_index >= config.max_passes:
            report.stop_reason = "max passes reached"
            break
        n = len(current)
        if n < 2:
            report.stop_reason = "nothing to pair"
            break
        t_pass = time.perf_counter()
        graph = build_graph(current.mu, config.k, workers=config.workers)
        bank = SharedSampleBank.from_seed([config.cost.rng_seed, pass_index], config.cost.sample_count)
        costs = edge_costs(graph, current, config.cost, config.block_size, bank=bank, workers=config.workers)
        plan = greedy_disjoint_pairs(graph, n - n_tgt)
        finite = costs[np.isfinite(costs)]
        record = PassRecord(
            pass_index=pass_index,
            node_count=n,
            edge_count=len(graph),
            merges=len(plan),
            min_cost=float(finite.min()) if finite.size else None,
            median_cost=float(np.median(finite)) if finite.size else None,
            wall_time=0.0,
        )
        if len(plan) == 0:
            record.wall_time = time.perf_counter() - t_pass
            report.passes.append(record)
            report.stop_reason = "no mergeable edges"
            break
        current = apply_plan(current, plan)
        record.wall_time = time.perf_counter() - t_pass
        report.passes.append(record)
        log.info(
            "pass %d: %d nodes, %d edges, %d merges -> %d splats (%.2fs)",
            pass_index, n, len(graph), len(plan), len(current), record.wall_time,
        )
        pass_index += 1

    current = SplatSet(
        current.mu, current.scale, current.rot, np.clip(current.alpha, 0.0, 1.0), current.features, current.normals
    )
    report.final_count = len(current)
    report.total_wall_time = time.perf_counter() - t_start
    return current, report
