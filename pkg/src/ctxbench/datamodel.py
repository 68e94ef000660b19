"""Typed records, file parsers and serializers shared across ctxbench.

Samples and predictions are CSV by default (JSON-lines accepted), graphs are
TSV edge lists plus a ``node<TAB>context`` membership file.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field, replace
from datetime import date
from functools import cached_property
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import (
    DuplicateKey,
    EmptyMatrix,
    InvalidScore,
    MalformedRow,
    NonPositiveWeight,
    SelfLoop,
    UnknownColumn,
    UnknownNode,
)

log = logging.getLogger(__name__)

AMINO_ACIDS = frozenset("ACDEFGHIKLMNPQRSTVWY")
PHASES = ("I", "II", "III")


@dataclass(frozen=True)
class ContextSample:
    entity: str
    context: str
    label: int

    def __post_init__(self):
        if not self.entity or not self.context:
            raise MalformedRow("entity and context must be non-empty", entity=self.entity, context=self.context)
        if self.label not in (0, 1) or isinstance(self.label, bool):
            raise MalformedRow(f"label must be 0 or 1, got {self.label!r}", label=self.label)

    @property
    def key(self) -> tuple[str, str]:
        return (self.entity, self.context)


@dataclass(frozen=True)
class Prediction:
    entity: str
    context: str
    score: float

    def __post_init__(self):
        if not self.entity or not self.context:
            raise MalformedRow("entity and context must be non-empty")
        s = self.score
        if isinstance(s, bool) or not isinstance(s, (int, float)) or not math.isfinite(s) or not 0.0 <= s <= 1.0:
            raise InvalidScore(f"score must be a finite number in [0, 1], got {s!r}", entity=self.entity, context=self.context)

    @property
    def key(self) -> tuple[str, str]:
        return (self.entity, self.context)


@dataclass(frozen=True)
class PredictionSet:
    rows: tuple[Prediction, ...]
    dataset_ref: str = ""

    def __post_init__(self):
        seen = set()
        for row in self.rows:
            if row.key in seen:
                raise DuplicateKey(f"duplicate prediction for {row.key}", entity=row.entity, context=row.context)
            seen.add(row.key)

    def scores(self) -> dict[tuple[str, str], float]:
        return {r.key: r.score for r in self.rows}


@dataclass(frozen=True)
class ContextGraph:
    """Undirected reference graph plus per-context node membership.

    ``edges`` holds ``(u, v, weight)`` with ``u < v``; ``weight`` is ``None``
    when the source file carried no weight column (treated as 1.0).
    """

    nodes: tuple[str, ...]
    edges: tuple[tuple[str, str, Optional[float]], ...]
    membership: Mapping[str, frozenset[str]] = field(default_factory=dict)

    def __post_init__(self):
        known = set(self.nodes)
        if len(known) != len(self.nodes):
            raise MalformedRow("duplicate node ids")
        for u, v, w in self.edges:
            if u == v:
                raise SelfLoop(f"self-loop on {u}", node=u)
            for n in (u, v):
                if n not in known:
                    raise UnknownNode(f"edge references unknown node {n}", node=n)
            if w is not None and not w > 0:
                raise NonPositiveWeight(f"edge {u}-{v} has weight {w}", weight=w)
        for ctx, members in self.membership.items():
            if not members:
                raise MalformedRow(f"context {ctx} has no members", context=ctx)
            for n in members:
                if n not in known:
                    raise UnknownNode(f"context {ctx} references unknown node {n}", node=n)

    @cached_property
    def adjacency(self) -> dict[str, dict[str, float]]:
        adj: dict[str, dict[str, float]] = {n: {} for n in self.nodes}
        for u, v, w in self.edges:
            weight = 1.0 if w is None else w
            adj[u][v] = weight
            adj[v][u] = weight
        return adj

    @property
    def contexts(self) -> list[str]:
        return sorted(self.membership)

    def degree(self, node: str) -> int:
        return len(self.adjacency[node])

    def subgraph(self, context: str) -> "ContextGraph":
        """Induced subgraph on the nodes active in ``context``."""
        members = self.membership[context]
        nodes = tuple(n for n in self.nodes if n in members)
        edges = tuple(e for e in self.edges if e[0] in members and e[1] in members)
        return ContextGraph(nodes, edges, {context: members})


@dataclass(frozen=True)
class ExpressionMatrix:
    genes: tuple[str, ...]
    cells: tuple[str, ...]
    counts: np.ndarray
    context: str = ""
    perturbation: Optional[str] = None  # None means control
    normalized: Optional[np.ndarray] = None
    warnings: tuple[str, ...] = ()

    def __post_init__(self):
        if len(set(self.genes)) != len(self.genes):
            raise MalformedRow("duplicate gene ids")
        counts = np.asarray(self.counts, dtype=float)
        if counts.shape != (len(self.cells), len(self.genes)):
            raise MalformedRow(f"counts shape {counts.shape} does not match {len(self.cells)} cells x {len(self.genes)} genes")
        if counts.size and (not np.all(np.isfinite(counts)) or counts.min() < 0):
            raise MalformedRow("raw counts must be finite and non-negative")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)
        if self.normalized is not None:
            norm = np.asarray(self.normalized, dtype=float)
            norm.setflags(write=False)
            object.__setattr__(self, "normalized", norm)

    @property
    def is_control(self) -> bool:
        return self.perturbation is None

    @cached_property
    def gene_index(self) -> dict[str, int]:
        return {g: i for i, g in enumerate(self.genes)}


@dataclass(frozen=True)
class TrialRecord:
    trial_id: str
    start_date: str
    completion_date: str
    phase: str
    label: int
    attributes: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not self.trial_id:
            raise MalformedRow("trial_id must be non-empty")
        for name in ("start_date", "completion_date"):
            value = getattr(self, name)
            try:
                parsed = date.fromisoformat(value)
            except (TypeError, ValueError):
                raise MalformedRow(f"{name} is not an ISO-8601 date: {value!r}", trial_id=self.trial_id) from None
            if parsed.isoformat() != value:
                raise MalformedRow(f"{name} must be YYYY-MM-DD: {value!r}", trial_id=self.trial_id)
        if self.start_date > self.completion_date:
            raise MalformedRow("start_date after completion_date", trial_id=self.trial_id)
        if self.phase not in PHASES:
            raise MalformedRow(f"phase must be one of {PHASES}, got {self.phase!r}", trial_id=self.trial_id)
        if self.label not in (0, 1) or isinstance(self.label, bool):
            raise MalformedRow(f"label must be 0 or 1, got {self.label!r}", trial_id=self.trial_id)


@dataclass(frozen=True)
class BindingPair:
    receptor: str
    ligand: str
    label: int

    def __post_init__(self):
        if not self.receptor or not self.ligand:
            raise MalformedRow("receptor and ligand must be non-empty")
        if self.label not in (0, 1) or isinstance(self.label, bool):
            raise MalformedRow(f"label must be 0 or 1, got {self.label!r}")

    @property
    def key(self) -> tuple[str, str]:
        return (self.receptor, self.ligand)

    def check_alphabet(self, alphabet: frozenset[str] = AMINO_ACIDS) -> None:
        for seq in (self.receptor, self.ligand):
            bad = set(seq) - alphabet
            if bad:
                raise MalformedRow(f"sequence {seq!r} has letters outside the alphabet: {''.join(sorted(bad))}")


# ---------------------------------------------------------------------------
# parsing helpers


def _decode(data: bytes | str) -> str:
    if isinstance(data, str):
        return data
    try:
        return data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise MalformedRow(f"stream is not UTF-8: {exc}") from None


def _records(data: bytes | str, fmt: str, required: Sequence[str], optional: Sequence[str] = (),
             extra: str = "error") -> Iterable[tuple[int, dict[str, str]]]:
    """Yield ``(line_number, row_dict)`` from CSV or JSONL input.

    Line numbers are 1-based and count the header line for CSV.
    """
    text = _decode(data)
    allowed = set(required) | set(optional)
    if fmt == "csv":
        reader = csv.reader(io.StringIO(text))
        try:
            header = next(reader)
        except StopIteration:
            raise UnknownColumn(f"missing header; expected {', '.join(required)}", name=required[0]) from None
        header = [h.strip() for h in header]
        _check_header(header, required, allowed, extra)
        for row in reader:
            lineno = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise MalformedRow(f"line {lineno}: expected {len(header)} fields, got {len(row)}", line=lineno)
            yield lineno, {h: c.strip() for h, c in zip(header, row)}
    elif fmt == "jsonl":
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedRow(f"line {lineno}: {exc.msg}", line=lineno) from None
            if not isinstance(obj, dict):
                raise MalformedRow(f"line {lineno}: expected a JSON object", line=lineno)
            _check_header(list(obj), required, allowed, extra)
            yield lineno, obj
    else:
        raise ValueError(f"unknown format {fmt!r}")


def _check_header(header: Sequence[str], required: Sequence[str], allowed: set[str], extra: str) -> None:
    for name in required:
        if name not in header:
            raise UnknownColumn(f"required column {name!r} missing", name=name)
    if extra == "error":
        for name in header:
            if name not in allowed:
                raise UnknownColumn(f"unknown column {name!r}", name=name)


def _label(value, lineno: int) -> int:
    if isinstance(value, bool):
        raise MalformedRow(f"line {lineno}: label must be 0 or 1", line=lineno)
    if isinstance(value, int) and value in (0, 1):
        return value
    if isinstance(value, str) and value in ("0", "1"):
        return int(value)
    raise MalformedRow(f"line {lineno}: label must be 0 or 1, got {value!r}", line=lineno)


def _text(value, lineno: int, name: str) -> str:
    if not isinstance(value, str) or not value:
        raise MalformedRow(f"line {lineno}: {name} must be a non-empty string", line=lineno)
    return value


def _write_csv(header: Sequence[str], rows: Iterable[Sequence]) -> bytes:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue().encode("utf-8")


def _write_jsonl(rows: Iterable[dict]) -> bytes:
    return "".join(json.dumps(r, sort_keys=True) + "\n" for r in rows).encode("utf-8")


def format_score(x: float) -> str:
    return repr(float(x))


# ---------------------------------------------------------------------------
# samples and predictions


def parse_samples(data: bytes | str, format: str = "csv") -> list[ContextSample]:
    samples: list[ContextSample] = []
    seen: set[tuple[str, str]] = set()
    for lineno, row in _records(data, format, ("entity", "context", "label")):
        entity = _text(row["entity"], lineno, "entity")
        context = _text(row["context"], lineno, "context")
        sample = ContextSample(entity, context, _label(row["label"], lineno))
        if sample.key in seen:
            raise DuplicateKey(f"line {lineno}: duplicate key ({entity}, {context})", entity=entity, context=context, line=lineno)
        seen.add(sample.key)
        samples.append(sample)
    return samples


def serialize_samples(samples: Iterable[ContextSample], format: str = "csv") -> bytes:
    if format == "jsonl":
        return _write_jsonl({"entity": s.entity, "context": s.context, "label": s.label} for s in samples)
    return _write_csv(("entity", "context", "label"), ((s.entity, s.context, s.label) for s in samples))


def parse_predictions(data: bytes | str, format: str = "csv", dataset_ref: str = "") -> PredictionSet:
    rows = []
    seen: set[tuple[str, str]] = set()
    for lineno, row in _records(data, format, ("entity", "context", "score")):
        raw = row["score"]
        try:
            score = float(raw) if isinstance(raw, str) else raw
        except ValueError:
            raise MalformedRow(f"line {lineno}: score {raw!r} is not a number", line=lineno) from None
        try:
            pred = Prediction(_text(row["entity"], lineno, "entity"), _text(row["context"], lineno, "context"), score)
        except InvalidScore as exc:
            raise InvalidScore(f"line {lineno}: {exc}", line=lineno) from None
        if pred.key in seen:
            raise DuplicateKey(f"line {lineno}: duplicate key {pred.key}", entity=pred.entity, context=pred.context, line=lineno)
        seen.add(pred.key)
        rows.append(pred)
    return PredictionSet(tuple(rows), dataset_ref)


def serialize_predictions(preds: PredictionSet, format: str = "csv") -> bytes:
    if format == "jsonl":
        return _write_jsonl({"entity": p.entity, "context": p.context, "score": p.score} for p in preds.rows)
    return _write_csv(("entity", "context", "score"), ((p.entity, p.context, format_score(p.score)) for p in preds.rows))


# ---------------------------------------------------------------------------
# graphs


def parse_graph(edges: bytes | str, membership: bytes | str | None = None) -> ContextGraph:
    """Parse a TSV edge list (``src<TAB>dst[<TAB>weight]``) and membership file.

    A line holding a single field declares an isolated node. Edges repeated in
    either orientation are collapsed onto their first occurrence.
    """
    nodes: dict[str, None] = {}
    kept: dict[tuple[str, str], tuple[str, str, Optional[float]]] = {}
    for lineno, line in enumerate(_decode(edges).splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.rstrip("\r").split("\t")
        if len(parts) == 1:
            nodes.setdefault(parts[0].strip(), None)
            continue
        if len(parts) not in (2, 3):
            raise MalformedRow(f"line {lineno}: expected src, dst[, weight]", line=lineno)
        u, v = parts[0].strip(), parts[1].strip()
        if not u or not v:
            raise MalformedRow(f"line {lineno}: empty node id", line=lineno)
        if u == v:
            raise SelfLoop(f"line {lineno}: self-loop on {u}", node=u, line=lineno)
        weight: Optional[float] = None
        if len(parts) == 3:
            try:
                weight = float(parts[2])
            except ValueError:
                raise MalformedRow(f"line {lineno}: weight {parts[2]!r} is not a number", line=lineno) from None
            if not math.isfinite(weight) or weight <= 0:
                raise NonPositiveWeight(f"line {lineno}: weight must be positive", weight=weight, line=lineno)
        nodes.setdefault(u, None)
        nodes.setdefault(v, None)
        key = (u, v) if u < v else (v, u)
        if key not in kept:
            kept[key] = (key[0], key[1], weight)

    members: dict[str, set[str]] = {}
    if membership is not None:
        for lineno, line in enumerate(_decode(membership).splitlines(), start=1):
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.rstrip("\r").split("\t")
            if len(parts) != 2 or not parts[0].strip() or not parts[1].strip():
                raise MalformedRow(f"membership line {lineno}: expected node<TAB>context", line=lineno)
            node, ctx = parts[0].strip(), parts[1].strip()
            if node not in nodes:
                raise UnknownNode(f"membership line {lineno}: unknown node {node}", node=node, line=lineno)
            members.setdefault(ctx, set()).add(node)
    return ContextGraph(tuple(nodes), tuple(kept.values()), {c: frozenset(m) for c, m in members.items()})


def serialize_graph(graph: ContextGraph) -> tuple[bytes, bytes]:
    # every node is declared up front so node order survives a round trip
    lines = list(graph.nodes)
    lines += [f"{u}\t{v}" if w is None else f"{u}\t{v}\t{format_score(w)}" for u, v, w in graph.edges]
    edge_bytes = "".join(line + "\n" for line in lines).encode("utf-8")
    member_lines = [f"{n}\t{c}" for c in sorted(graph.membership) for n in sorted(graph.membership[c])]
    return edge_bytes, "".join(line + "\n" for line in member_lines).encode("utf-8")


# ---------------------------------------------------------------------------
# trials and binding pairs

_TRIAL_COLUMNS = ("trial_id", "start_date", "completion_date", "phase", "label")
_BINDING_COLUMNS = ("receptor", "ligand", "label")


def parse_trials(data: bytes | str, format: str = "csv") -> list[TrialRecord]:
    out = []
    seen = set()
    for lineno, row in _records(data, format, _TRIAL_COLUMNS, extra="ignore"):
        attrs = {k: str(v) for k, v in row.items() if k not in _TRIAL_COLUMNS}
        try:
            rec = TrialRecord(
                _text(row["trial_id"], lineno, "trial_id"), str(row["start_date"]), str(row["completion_date"]),
                str(row["phase"]), _label(row["label"], lineno), attrs,
            )
        except MalformedRow as exc:
            raise MalformedRow(f"line {lineno}: {exc}", line=lineno) from None
        if rec.trial_id in seen:
            raise DuplicateKey(f"line {lineno}: duplicate trial {rec.trial_id}", entity=rec.trial_id, line=lineno)
        seen.add(rec.trial_id)
        out.append(rec)
    return out


def serialize_trials(records: Sequence[TrialRecord]) -> bytes:
    extra = sorted({k for r in records for k in r.attributes})
    return _write_csv(
        _TRIAL_COLUMNS + tuple(extra),
        ((r.trial_id, r.start_date, r.completion_date, r.phase, r.label, *(r.attributes.get(k, "") for k in extra))
         for r in records),
    )


def parse_binding_pairs(data: bytes | str, format: str = "csv", validate_alphabet: bool = True) -> list[BindingPair]:
    out = []
    seen = set()
    for lineno, row in _records(data, format, _BINDING_COLUMNS):
        pair = BindingPair(_text(row["receptor"], lineno, "receptor"), _text(row["ligand"], lineno, "ligand"),
                           _label(row["label"], lineno))
        if validate_alphabet:
            try:
                pair.check_alphabet()
            except MalformedRow as exc:
                raise MalformedRow(f"line {lineno}: {exc}", line=lineno) from None
        if pair.key in seen:
            raise DuplicateKey(f"line {lineno}: duplicate pair {pair.key}", entity=pair.receptor, context=pair.ligand, line=lineno)
        seen.add(pair.key)
        out.append(pair)
    return out


def serialize_binding_pairs(pairs: Iterable[BindingPair]) -> bytes:
    return _write_csv(_BINDING_COLUMNS, ((p.receptor, p.ligand, p.label) for p in pairs))


# ---------------------------------------------------------------------------
# expression


def normalize_counts(m: ExpressionMatrix, target: Optional[float] = None) -> ExpressionMatrix:
    """Scale each cell to a common total, then apply ``ln(1 + x)``.

    The default target is the median total over cells with non-zero counts.
    All-zero cells stay zero and are reported in ``warnings``.
    """
    counts = m.counts
    if counts.size == 0:
        raise EmptyMatrix("expression matrix has no cells or genes")
    totals = counts.sum(axis=1)
    nonzero = totals > 0
    if target is None:
        target = float(np.median(totals[nonzero])) if nonzero.any() else 0.0
    factors = np.zeros_like(totals)
    factors[nonzero] = target / totals[nonzero]
    warnings = list(m.warnings)
    for i in np.flatnonzero(~nonzero):
        msg = f"cell {m.cells[i]} has zero total count; left as zeros"
        log.warning(msg)
        warnings.append(msg)
    normalized = np.log1p(counts * factors[:, None])
    return replace(m, normalized=normalized, warnings=tuple(warnings))
