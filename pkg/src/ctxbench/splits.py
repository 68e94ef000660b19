"""Seeded split generators and negative sampling for binding data.

All randomness flows through ``numpy.random.Generator(PCG64(seed))``; the
generator name is written into every serialized split so a split file says
how it was produced.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Hashable, Iterable, Optional, Sequence, TypeVar

import numpy as np

from .datamodel import BindingPair, ContextSample, TrialRecord
from .errors import (
    DegenerateClass,
    EmptyFold,
    ExhaustedCandidates,
    MissingExternalPool,
    TooFewEntities,
)

PRNG = "numpy-pcg64-v1"
FOLDS = ("train", "valid", "test")
KINDS = ("cold", "temporal", "stratified", "random")

T = TypeVar("T")


def rng_for(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def record_key(record) -> str:
    """Stable id of a record: entity ids for samples, ``a|b`` for pairs."""
    if isinstance(record, ContextSample):
        return f"{record.entity}|{record.context}"
    if isinstance(record, BindingPair):
        return f"{record.receptor}|{record.ligand}"
    if isinstance(record, TrialRecord):
        return record.trial_id
    return str(record)


@dataclass(frozen=True)
class SplitSpec:
    kind: str
    seed: int
    train: frozenset[str]
    valid: frozenset[str]
    test: frozenset[str]
    dropped: frozenset[str] = frozenset()
    prng: str = PRNG

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown split kind {self.kind!r}")
        for name in ("train", "valid", "test", "dropped"):
            object.__setattr__(self, name, frozenset(getattr(self, name)))
        sets = [self.train, self.valid, self.test, self.dropped]
        total = sum(len(s) for s in sets)
        if len(frozenset().union(*sets)) != total:
            raise ValueError("split folds overlap")

    def fold_of(self, key: str) -> Optional[str]:
        for name in FOLDS:
            if key in getattr(self, name):
                return name
        return None

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "seed": self.seed,
            "prng": self.prng,
            "train": sorted(self.train),
            "valid": sorted(self.valid),
            "test": sorted(self.test),
            "dropped": sorted(self.dropped),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict) -> "SplitSpec":
        return cls(d["kind"], int(d["seed"]), frozenset(d["train"]), frozenset(d["valid"]), frozenset(d["test"]),
                   frozenset(d.get("dropped", ())), d.get("prng", PRNG))


def largest_remainder(n: int, fractions: Sequence[float]) -> list[int]:
    """Integer sizes summing to ``n``, each within 1 of ``n * fraction``.

    Leftover units go to the largest fractional parts; ties favour earlier folds.
    """
    fr = [Fraction(f).limit_denominator(10**9) for f in fractions]
    if any(f < 0 for f in fr) or abs(sum(fr) - 1) > Fraction(1, 10**6):
        raise ValueError(f"fractions must be non-negative and sum to 1, got {tuple(fractions)}")
    total = sum(fr)
    quotas = [n * f / total for f in fr]
    sizes = [math.floor(q) for q in quotas]
    leftover = n - sum(sizes)
    order = sorted(range(len(fr)), key=lambda i: (-(quotas[i] - sizes[i]), i))
    for i in order[:leftover]:
        sizes[i] += 1
    return sizes


def _slice_folds(ids: Sequence[str], sizes: Sequence[int]) -> tuple[list[str], list[str], list[str]]:
    a, b = sizes[0], sizes[0] + sizes[1]
    return list(ids[:a]), list(ids[a:b]), list(ids[b:])


def _shuffled(ids: Iterable[str], rng: np.random.Generator) -> list[str]:
    ordered = sorted(set(ids))
    return [ordered[i] for i in rng.permutation(len(ordered))]


def cold_split(samples: Sequence[T], fractions: Sequence[float] = (0.8, 0.1, 0.1), seed: int = 0,
               key: Callable[[T], str] = lambda s: s.entity) -> SplitSpec:
    """Split distinct entities into folds; every sample of an entity lands in one fold.

    ``key`` picks the cold entity, e.g. ``lambda p: p.ligand`` for binding pairs.
    """
    entities = {key(s) for s in samples}
    if len(entities) < 3:
        raise TooFewEntities(f"cold split needs >= 3 distinct entities, got {len(entities)}", n=len(entities))
    ids = _shuffled(entities, rng_for(seed))
    train, valid, test = _slice_folds(ids, largest_remainder(len(ids), fractions))
    return SplitSpec("cold", seed, frozenset(train), frozenset(valid), frozenset(test))


def temporal_split(records: Sequence[TrialRecord], cutoff: str = "2014-01-01", seed: int = 0,
                   valid_fraction: float = 0.1) -> SplitSpec:
    """Trials starting after ``cutoff`` are test, trials completed before it train/valid.

    Trials meeting neither clause straddle the cutoff and are dropped.
    """
    test, trainval, dropped = [], [], []
    for r in records:
        if r.start_date > cutoff:
            test.append(r.trial_id)
        elif r.completion_date < cutoff:
            trainval.append(r.trial_id)
        else:
            dropped.append(r.trial_id)
    ids = _shuffled(trainval, rng_for(seed))
    n_train, n_valid = largest_remainder(len(ids), (1 - valid_fraction, valid_fraction))
    spec = SplitSpec("temporal", seed, frozenset(ids[:n_train]), frozenset(ids[n_train:]), frozenset(test),
                     frozenset(dropped))
    for name in ("train", "test"):
        if not getattr(spec, name):
            raise EmptyFold(f"temporal split left the {name} fold empty", name=name)
    return spec


def stratified_split(samples: Sequence[T], test_fraction: float = 0.9, seed: int = 0,
                     key: Callable[[T], str] = record_key,
                     label: Callable[[T], int] = lambda s: s.label) -> SplitSpec:
    """Class-proportional train/test split (the valid fold stays empty)."""
    by_class: dict[int, list[str]] = {0: [], 1: []}
    for s in samples:
        by_class[label(s)].append(key(s))
    if not by_class[0] or not by_class[1]:
        raise DegenerateClass("stratified split needs both classes", n_pos=len(by_class[1]), n_neg=len(by_class[0]))
    n = len(by_class[0]) + len(by_class[1])
    n_train, _ = largest_remainder(n, (1 - test_fraction, test_fraction))
    per_class = largest_remainder(n_train, (Fraction(len(by_class[0]), n), Fraction(len(by_class[1]), n))) \
        if n_train else [0, 0]
    rng = rng_for(seed)
    train, test = [], []
    for cls, take in zip((0, 1), per_class):
        ids = _shuffled(by_class[cls], rng)
        train += ids[:take]
        test += ids[take:]
    return SplitSpec("stratified", seed, frozenset(train), frozenset(), frozenset(test))


def random_split(records: Sequence[T], fractions: Sequence[float] = (0.8, 0.1, 0.1), seed: int = 0,
                 key: Callable[[T], str] = record_key) -> SplitSpec:
    ids = _shuffled((key(r) for r in records), rng_for(seed))
    train, valid, test = _slice_folds(ids, largest_remainder(len(ids), fractions))
    return SplitSpec("random", seed, frozenset(train), frozenset(valid), frozenset(test))


def assign(spec: SplitSpec, records: Iterable[T], key: Callable[[T], Hashable]) -> dict[str, list[T]]:
    """Group records by fold; records whose key is in no fold are left out."""
    out: dict[str, list[T]] = {name: [] for name in FOLDS}
    for r in records:
        fold = spec.fold_of(key(r))
        if fold is not None:
            out[fold].append(r)
    return out


# ---------------------------------------------------------------------------
# negative sampling


@dataclass(frozen=True)
class NegativeSamplingConfig:
    heuristic: str
    ratio: float = 1.0
    seed: int = 0
    external_pool: tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.heuristic not in ("RN", "ET", "NA"):
            raise ValueError(f"heuristic must be RN, ET or NA, got {self.heuristic!r}")
        if not self.ratio > 0:
            raise ValueError("ratio must be positive")
        if self.heuristic == "ET" and not self.external_pool:
            raise MissingExternalPool("ET sampling needs a non-empty external receptor pool")


def _sample_pairs(receptors: Sequence[str], ligands: Sequence[str], exclude: set[tuple[str, str]],
                  count: int, rng: np.random.Generator) -> list[tuple[str, str]]:
    space = len(receptors) * len(ligands)
    rset, lset = set(receptors), set(ligands)
    blocked = sum(1 for r, l in exclude if r in rset and l in lset)
    available = space - blocked
    if count > available:
        raise ExhaustedCandidates(f"asked for {count} negatives, only {available} candidates",
                                  requested=count, available=available)
    if available <= 4 * count or space <= 200_000:
        candidates = [(r, l) for r in receptors for l in ligands if (r, l) not in exclude]
        picks = rng.choice(len(candidates), size=count, replace=False)
        return [candidates[i] for i in picks]
    chosen: list[tuple[str, str]] = []
    seen: set[tuple[str, str]] = set()
    while len(chosen) < count:
        pair = (receptors[rng.integers(len(receptors))], ligands[rng.integers(len(ligands))])
        if pair in exclude or pair in seen:
            continue
        seen.add(pair)
        chosen.append(pair)
    return chosen


def generate_negatives(pairs: Sequence[BindingPair], cfg: NegativeSamplingConfig) -> list[BindingPair]:
    """Build label-0 pairs for a binding dataset.

    RN recombines observed receptors and ligands, ET pairs observed ligands with
    receptors from ``cfg.external_pool``, NA passes through the label-0 pairs
    already present in ``pairs``. Known positives are never emitted.
    """
    positives = {p.key for p in pairs if p.label == 1}
    if cfg.heuristic == "NA":
        out, seen = [], set()
        for p in pairs:
            if p.label == 0 and p.key not in positives and p.key not in seen:
                seen.add(p.key)
                out.append(BindingPair(p.receptor, p.ligand, 0))
        if not out:
            raise ExhaustedCandidates("NA sampling found no experimental negatives in the input", requested=1, available=0)
        return out
    count = math.ceil(cfg.ratio * len(positives) - 1e-9)
    ligands = sorted({l for _, l in positives})
    if cfg.heuristic == "RN":
        receptors = sorted({r for r, _ in positives})
    else:
        if not cfg.external_pool:
            raise MissingExternalPool("ET sampling needs a non-empty external receptor pool")
        receptors = sorted(set(cfg.external_pool))
    chosen = _sample_pairs(receptors, ligands, positives, count, rng_for(cfg.seed))
    return [BindingPair(r, l, 0) for r, l in chosen]
