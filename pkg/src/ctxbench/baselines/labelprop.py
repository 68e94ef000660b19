"""Neighbourhood majority-vote label propagation on a context subgraph."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional

from ..datamodel import ContextGraph
from ..errors import SeedNodeMissing, UnknownContext

UNREACHED_SCORE = 0.5


@dataclass(frozen=True)
class LabelState:
    fixed: Mapping[str, int]
    inferred: Mapping[str, int]
    scores: Mapping[str, float]
    rounds: int

    @property
    def unlabeled(self) -> list[str]:
        return sorted(n for n in self.scores if n not in self.fixed and n not in self.inferred)


def label_propagation(g: ContextGraph, context: Optional[str], seeds: Mapping[str, int],
                      max_rounds: Optional[int] = None) -> LabelState:
    """Propagate seed labels by synchronous strict-majority votes.

    Each round, every unlabeled node looks at its currently labeled neighbours
    and adopts the label held by a strict majority; ties leave it unlabeled for
    the round. Labels never change once assigned. The final score of a node is
    the fraction of positive labels among its labeled neighbours, or 0.5 when
    it has none. ``context=None`` runs on the whole reference graph.
    """
    if context is not None:
        if context not in g.membership:
            raise UnknownContext(f"graph has no context {context!r}", context=context)
        g = g.subgraph(context)
    adj = g.adjacency
    for node, label in seeds.items():
        if node not in adj:
            raise SeedNodeMissing(f"seed {node} is not in the {context or 'reference'} graph", node=node)
        if label not in (0, 1):
            raise ValueError(f"seed label for {node} must be 0 or 1")
    fixed = dict(seeds)
    labels: dict[str, int] = dict(fixed)
    inferred: dict[str, int] = {}
    limit = len(adj) if max_rounds is None else min(max_rounds, len(adj))
    rounds = 0
    frontier = [n for n in g.nodes if n not in labels]
    while rounds < limit:
        updates = {}
        for node in frontier:
            pos = neg = 0
            for nb in adj[node]:
                lab = labels.get(nb)
                if lab == 1:
                    pos += 1
                elif lab == 0:
                    neg += 1
            if pos > neg:
                updates[node] = 1
            elif neg > pos:
                updates[node] = 0
        if not updates:
            break
        rounds += 1
        labels.update(updates)
        inferred.update(updates)
        frontier = [n for n in frontier if n not in updates]

    scores: dict[str, float] = {}
    for node in g.nodes:
        if node in fixed:
            scores[node] = float(fixed[node])
            continue
        votes = [labels[nb] for nb in adj[node] if nb in labels]
        scores[node] = sum(votes) / len(votes) if votes else UNREACHED_SCORE
    return LabelState(fixed, inferred, scores, rounds)
