"""Synthetic planted-partition context graphs for end-to-end baseline runs.

Nodes fall into equal blocks with dense intra-block and sparse inter-block
edges. A few blocks form the positive pathway. Each context activates a random
subset of nodes; pathway nodes are activated at a lower rate, so inside any
single context the pathway breaks into small pieces while the reference graph
keeps it connected.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datamodel import ContextGraph, ContextSample
from .splits import rng_for


@dataclass(frozen=True)
class PlantedPartitionConfig:
    n_nodes: int = 600
    n_blocks: int = 20
    n_positive_blocks: int = 4
    p_in: float = 0.08
    p_out: float = 0.002
    n_contexts: int = 6
    membership: float = 0.5
    positive_membership: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.n_positive_blocks < self.n_blocks <= self.n_nodes:
            raise ValueError("need 0 < positive blocks < blocks <= nodes")
        for name in ("p_in", "p_out", "membership", "positive_membership"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must be a probability")
        if self.n_contexts < 1:
            raise ValueError("n_contexts must be >= 1")


@dataclass(frozen=True)
class ToyData:
    graph: ContextGraph
    samples: tuple[ContextSample, ...]
    blocks: dict[str, int]
    positives: frozenset[str]


def planted_partition(cfg: PlantedPartitionConfig = PlantedPartitionConfig()) -> ToyData:
    rng = rng_for(cfg.seed)
    width = len(str(cfg.n_nodes - 1))
    nodes = tuple(f"P{i:0{width}d}" for i in range(cfg.n_nodes))
    block = np.arange(cfg.n_nodes) * cfg.n_blocks // cfg.n_nodes
    iu, ju = np.triu_indices(cfg.n_nodes, k=1)
    same = block[iu] == block[ju]
    keep = rng.random(len(iu)) < np.where(same, cfg.p_in, cfg.p_out)
    edges = tuple((nodes[a], nodes[b], None) for a, b in zip(iu[keep], ju[keep]))

    positive_blocks = set(range(cfg.n_positive_blocks))
    is_pos = np.isin(block, list(positive_blocks))
    rate = np.where(is_pos, cfg.positive_membership, cfg.membership)
    contexts = [f"ctx{c}" for c in range(cfg.n_contexts)]
    membership = {}
    samples = []
    for ctx in contexts:
        active = rng.random(cfg.n_nodes) < rate
        members = [nodes[i] for i in np.flatnonzero(active)]
        membership[ctx] = frozenset(members)
        samples += [ContextSample(nodes[i], ctx, int(is_pos[i])) for i in np.flatnonzero(active)]
    graph = ContextGraph(nodes, edges, {c: m for c, m in membership.items() if m})
    return ToyData(graph, tuple(samples), {n: int(b) for n, b in zip(nodes, block)},
                   frozenset(n for n, p in zip(nodes, is_pos) if p))
