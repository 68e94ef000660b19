"""Benchmark groups, the shared evaluation path and append-only leaderboards.

A workspace directory holds everything the CLI and the HTTP service need::

    registry/                 dataset store
    groups/<group_id>.json    group definitions
    graphs/<group_id>.*.tsv   optional context graph for graph baselines
    leaderboards/<id>.jsonl   one line per evaluated (submission, seed)
"""

from __future__ import annotations

import json
import re
import uuid
from dataclasses import dataclass, field
from datetime import datetime, timezone
from functools import lru_cache
from pathlib import Path
from typing import Callable, Mapping, Optional

import numpy as np
from filelock import FileLock

from .baselines import HeadConfig, Node2VecConfig, label_propagation, node2vec_embed, predict_scores, \
    train_linear_head
from .baselines.labelprop import UNREACHED_SCORE
from .datamodel import (
    ContextGraph,
    ContextSample,
    Prediction,
    PredictionSet,
    parse_binding_pairs,
    parse_graph,
    parse_samples,
    parse_trials,
    serialize_graph,
    serialize_samples,
)
from .errors import UnknownGroup
from .metrics import MetricReport, MetricSuite, aggregate_seeds, evaluate_predictions
from .registry import Registry
from .registry.store import sha256_hex
from .splits import SplitSpec, cold_split, random_split, stratified_split, temporal_split
from .synthetic import PlantedPartitionConfig, planted_partition

FAMILIES = ("scdtn", "tcrepitope", "trialoutcome")
SPLIT_KINDS = {"scdtn": ("cold", "random", "stratified"), "tcrepitope": ("cold", "random", "stratified"),
               "trialoutcome": ("temporal", "random")}
BASELINES = ("labelprop", "node2vec", "random")
TOY_NODE2VEC = Node2VecConfig(dim=32, walks_per_node=10, walk_length=40, window=5, epochs=3)
_GROUP_ID = re.compile(r"^[A-Za-z0-9_.-]+$")


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="microseconds")


def suite_metric_names(suite: MetricSuite) -> set[str]:
    names = {f"auroc_top{k}" for k in suite.auroc_topk}
    names |= {f"ap@{r}_top{k}" for r in suite.ap_ranks for k in suite.ap_topk}
    names |= {"cf_auroc", "cf_auprc", "cf_acc", "cf_f1"} | {f"cf_ap@{r}" for r in suite.ap_ranks}
    return names


@dataclass(frozen=True)
class BenchmarkGroup:
    group_id: str
    family: str
    dataset: tuple[str, int]
    split_kind: str = "cold"
    split_params: Mapping = field(default_factory=dict)
    metric_suite: MetricSuite = MetricSuite()
    has_graph: bool = False

    def __post_init__(self):
        if not _GROUP_ID.match(self.group_id):
            raise ValueError(f"invalid group id {self.group_id!r}")
        if self.family not in FAMILIES:
            raise ValueError(f"unknown task family {self.family!r}")
        if self.split_kind not in SPLIT_KINDS[self.family]:
            raise ValueError(f"{self.family} groups support splits {SPLIT_KINDS[self.family]}")
        if self.metric_suite.primary not in suite_metric_names(self.metric_suite):
            raise ValueError(f"primary metric {self.metric_suite.primary!r} is not produced by the suite")
        object.__setattr__(self, "dataset", (self.dataset[0], int(self.dataset[1])))
        object.__setattr__(self, "split_params", dict(self.split_params))

    def to_dict(self) -> dict:
        return {
            "group_id": self.group_id,
            "family": self.family,
            "dataset": list(self.dataset),
            "split_kind": self.split_kind,
            "split_params": dict(self.split_params),
            "metric_suite": self.metric_suite.to_dict(),
            "has_graph": self.has_graph,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "BenchmarkGroup":
        return cls(d["group_id"], d["family"], tuple(d["dataset"]), d.get("split_kind", "cold"),
                   d.get("split_params", {}), MetricSuite.from_dict(d.get("metric_suite", {})),
                   bool(d.get("has_graph", False)))

    def fold_key(self, sample: ContextSample) -> str:
        """Id a sample is split on: the cold entity, or the whole key for random splits."""
        if self.split_kind in ("random", "stratified"):
            return f"{sample.entity}|{sample.context}"
        if self.family == "tcrepitope":
            return sample.context
        return sample.entity


@dataclass(frozen=True)
class SplitData:
    spec: SplitSpec
    train: tuple[ContextSample, ...]
    valid: tuple[ContextSample, ...]
    test: tuple[ContextSample, ...]


class Workspace:
    def __init__(self, data_dir: str | Path, clock: Callable[[], str] = _utc_now):
        self.root = Path(data_dir)
        self.root.mkdir(parents=True, exist_ok=True)
        self.registry = Registry(self.root / "registry")
        for sub in ("groups", "graphs", "leaderboards"):
            (self.root / sub).mkdir(exist_ok=True)
        self.clock = clock
        self._samples_cache: dict[str, tuple[ContextSample, ...]] = {}

    # -- groups -----------------------------------------------------------

    def _group_path(self, group_id: str) -> Path:
        if not _GROUP_ID.match(group_id):
            raise UnknownGroup(f"no benchmark group {group_id!r}", group=group_id)
        return self.root / "groups" / f"{group_id}.json"

    def add_group(self, group: BenchmarkGroup, graph: Optional[ContextGraph] = None) -> BenchmarkGroup:
        self.registry.get(*group.dataset)
        if graph is not None:
            edges, membership = serialize_graph(graph)
            (self.root / "graphs" / f"{group.group_id}.edges.tsv").write_bytes(edges)
            (self.root / "graphs" / f"{group.group_id}.membership.tsv").write_bytes(membership)
            group = BenchmarkGroup(**{**group.__dict__, "has_graph": True})
        path = self._group_path(group.group_id)
        if path.exists() and json.loads(path.read_text()) != group.to_dict():
            raise ValueError(f"group {group.group_id!r} already exists with a different definition")
        path.write_text(json.dumps(group.to_dict(), sort_keys=True, indent=1), encoding="utf-8")
        return group

    def group(self, group_id: str) -> BenchmarkGroup:
        path = self._group_path(group_id)
        if not path.exists():
            raise UnknownGroup(f"no benchmark group {group_id!r}", group=group_id)
        return BenchmarkGroup.from_dict(json.loads(path.read_text(encoding="utf-8")))

    def group_ids(self) -> list[str]:
        return sorted(p.stem for p in (self.root / "groups").glob("*.json"))

    def graph(self, group: BenchmarkGroup) -> ContextGraph:
        if not group.has_graph:
            raise ValueError(f"group {group.group_id} has no context graph")
        edges = self.root / "graphs" / f"{group.group_id}.edges.tsv"
        members = self.root / "graphs" / f"{group.group_id}.membership.tsv"
        return _load_graph(str(edges), str(members), edges.stat().st_mtime_ns, members.stat().st_mtime_ns)

    # -- data and splits --------------------------------------------------

    def samples(self, group: BenchmarkGroup) -> tuple[ContextSample, ...]:
        manifest = self.registry.get(*group.dataset)
        cache_key = f"{group.family}:{manifest.content_hash}"
        if cache_key not in self._samples_cache:
            data = self.registry.read_bytes(*group.dataset)
            self._samples_cache[cache_key] = tuple(_family_samples(group.family, data))
        return self._samples_cache[cache_key]

    def split(self, group: BenchmarkGroup, seed: int) -> SplitSpec:
        p = group.split_params
        if group.split_kind == "temporal":
            trials = parse_trials(self.registry.read_bytes(*group.dataset))
            return temporal_split(trials, p.get("cutoff", "2014-01-01"), seed, p.get("valid_fraction", 0.1))
        samples = self.samples(group)
        if group.split_kind == "cold":
            return cold_split(samples, tuple(p.get("fractions", (0.8, 0.1, 0.1))), seed, key=group.fold_key)
        if group.split_kind == "stratified":
            return stratified_split(samples, p.get("test_fraction", 0.9), seed, key=group.fold_key)
        return random_split(samples, tuple(p.get("fractions", (0.8, 0.1, 0.1))), seed, key=group.fold_key)

    def split_data(self, group: BenchmarkGroup, seed: int) -> SplitData:
        spec = self.split(group, seed)
        folds: dict[str, list[ContextSample]] = {"train": [], "valid": [], "test": []}
        for s in self.samples(group):
            fold = spec.fold_of(group.fold_key(s))
            if fold is not None:
                folds[fold].append(s)
        return SplitData(spec, tuple(folds["train"]), tuple(folds["valid"]), tuple(folds["test"]))

    def split_document(self, group: BenchmarkGroup, seed: int) -> dict:
        """Split plus its rows; test rows carry entity and context only."""
        data = self.split_data(group, seed)
        labeled = lambda rows: [{"entity": s.entity, "context": s.context, "label": s.label} for s in rows]
        return {
            "group": group.group_id,
            "seed": seed,
            "split": data.spec.to_dict(),
            "train": labeled(data.train),
            "valid": labeled(data.valid),
            "test": [{"entity": s.entity, "context": s.context} for s in data.test],
        }

    # -- evaluation and leaderboard ----------------------------------------

    def evaluate(self, group: BenchmarkGroup, preds: PredictionSet, seed: int) -> MetricReport:
        return evaluate_predictions(preds, self.split_data(group, seed).test, group.metric_suite, seed)

    def _board(self, group_id: str) -> Path:
        return self.root / "leaderboards" / f"{group_id}.jsonl"

    def submit(self, group: BenchmarkGroup, preds: PredictionSet, seed: int,
               submission_id: Optional[str] = None) -> tuple[MetricReport, dict]:
        report = self.evaluate(group, preds, seed)
        entry = {
            "group_id": group.group_id,
            "submission_id": submission_id or uuid.uuid4().hex,
            "seed": seed,
            "submitted_at": self.clock(),
            "metrics": report.flat(),
        }
        path = self._board(group.group_id)
        with FileLock(str(path) + ".lock"):
            with path.open("a", encoding="utf-8") as f:
                f.write(json.dumps(entry, sort_keys=True) + "\n")
        return report, entry

    def leaderboard(self, group: BenchmarkGroup) -> list[dict]:
        """One row per submission id, aggregated over its seeds, best primary mean first."""
        path = self._board(group.group_id)
        if not path.exists():
            return []
        by_id: dict[str, list[dict]] = {}
        for line in path.read_text(encoding="utf-8").splitlines():
            if line.strip():
                e = json.loads(line)
                by_id.setdefault(e["submission_id"], []).append(e)
        primary = group.metric_suite.primary
        rows = []
        for sid, entries in by_id.items():
            latest_per_seed = {e["seed"]: e for e in entries}
            aggs = aggregate_seeds([e["metrics"] for e in latest_per_seed.values()])
            score = next((a.mean for a in aggs if a.metric == primary), float("-inf"))
            rows.append({
                "group_id": group.group_id,
                "submission_id": sid,
                "submitted_at": min(e["submitted_at"] for e in entries),
                "n_seeds": len(latest_per_seed),
                "seeds": sorted(latest_per_seed),
                "primary": primary,
                "primary_mean": score,
                "aggregates": [a.to_dict() for a in aggs],
            })
        rows.sort(key=lambda r: (-r["primary_mean"], r["submitted_at"], r["submission_id"]))
        return rows


@lru_cache(maxsize=8)
def _load_graph(edges_path: str, membership_path: str, *_mtimes) -> ContextGraph:
    return parse_graph(Path(edges_path).read_bytes(), Path(membership_path).read_bytes())


def _family_samples(family: str, data: bytes) -> list[ContextSample]:
    if family == "scdtn":
        return parse_samples(data)
    if family == "tcrepitope":
        return [ContextSample(p.receptor, p.ligand, p.label) for p in parse_binding_pairs(data)]
    return [ContextSample(t.trial_id, t.phase, t.label) for t in parse_trials(data)]


# ---------------------------------------------------------------------------
# baselines over a group


def labelprop_predictions(graph: ContextGraph, data: SplitData) -> PredictionSet:
    """Per context: seed with train+valid labels, score test samples by neighbourhood vote."""
    seeds: dict[str, dict[str, int]] = {}
    for s in data.train + data.valid:
        if s.entity in graph.adjacency and s.entity in graph.membership.get(s.context, ()):
            seeds.setdefault(s.context, {})[s.entity] = s.label
    states = {}
    rows = []
    for s in data.test:
        if s.context not in graph.membership or s.entity not in graph.membership[s.context]:
            rows.append(Prediction(s.entity, s.context, UNREACHED_SCORE))
            continue
        if s.context not in states:
            states[s.context] = label_propagation(graph, s.context, seeds.get(s.context, {}))
        rows.append(Prediction(s.entity, s.context, states[s.context].scores[s.entity]))
    return PredictionSet(tuple(rows))


def node2vec_predictions(graph: ContextGraph, data: SplitData, group: BenchmarkGroup, seed: int,
                         cfg: Node2VecConfig = TOY_NODE2VEC, head: HeadConfig = HeadConfig()) -> PredictionSet:
    emb = node2vec_embed(graph, Node2VecConfig(**{**cfg.__dict__, "seed": seed}))
    contexts = sorted({s.context for s in data.train + data.valid + data.test})
    model = train_linear_head(emb, data.train + data.valid, data.spec, contexts, head, key=group.fold_key)
    return predict_scores(model, emb, [s.key for s in data.test])


def random_predictions(data: SplitData, seed: int) -> PredictionSet:
    rng = np.random.Generator(np.random.PCG64(seed))
    return PredictionSet(tuple(Prediction(s.entity, s.context, float(x))
                               for s, x in zip(data.test, rng.random(len(data.test)))))


def run_baseline(ws: Workspace, group: BenchmarkGroup, baseline: str, seed: int,
                 n2v: Node2VecConfig = TOY_NODE2VEC, head: HeadConfig = HeadConfig()) -> PredictionSet:
    if baseline not in BASELINES:
        raise ValueError(f"unknown baseline {baseline!r}; choose from {BASELINES}")
    data = ws.split_data(group, seed)
    if baseline == "random":
        return random_predictions(data, seed)
    graph = ws.graph(group)
    if baseline == "labelprop":
        return labelprop_predictions(graph, data)
    return node2vec_predictions(graph, data, group, seed, n2v, head)


# ---------------------------------------------------------------------------
# toy group


TOY_SUITE = MetricSuite(ap_ranks=(5,), ap_topk=(1, 4), auroc_topk=(1, 4), threshold=0.5, primary="ap@5_top4")


def create_toy_group(ws: Workspace, group_id: str = "toy", cfg: PlantedPartitionConfig = PlantedPartitionConfig(),
                     suite: MetricSuite = TOY_SUITE) -> BenchmarkGroup:
    """Register a planted-partition dataset and graph as an scdtn-style group."""
    toy = planted_partition(cfg)
    data = serialize_samples(toy.samples)
    name = f"{group_id}-samples"
    # re-running with the same config reuses the stored version instead of adding one
    manifest = next((m for m in ws.registry.versions(name)[::-1] if m.content_hash == sha256_hex(data)), None) \
        if name in ws.registry.names() else None
    if manifest is None:
        manifest = ws.registry.register(name, data)
    group = BenchmarkGroup(group_id, "scdtn", (manifest.name, manifest.version), "cold", {}, suite)
    return ws.add_group(group, toy.graph)
