"""Declarative data views: an ordered list of table transforms plus column renames."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

from ..errors import ColumnMissing, UnknownTransform
from .fetchers import FetcherSpec, SequenceFetcher
from .filters import compile_filter
from .store import DatasetManifest, Registry
from .table import Table

SEQUENCE_COLUMN = "protein_or_rna_sequence"


def autofill_identifier(table: Table, autofill_column: str, key_column: str, step: str = "autofill_identifier",
                        **_) -> Table:
    """Fill empty ``autofill_column`` cells from another row sharing ``key_column``.

    The donor is the first row (in table order) with a non-empty value for that key.
    """
    a, k = table.index(autofill_column, step), table.index(key_column, step)
    donor: dict[str, str] = {}
    for r in table.rows:
        if r[a] and r[k] not in donor:
            donor[r[k]] = r[a]
    rows = [r if r[a] or r[k] not in donor else r[:a] + (donor[r[k]],) + r[a + 1:] for r in table.rows]
    return Table(table.columns, rows)


def create_range(table: Table, column: str, keys: Sequence[str], subs: Sequence, step: str = "create_range",
                 **_) -> Table:
    """Replace cells equal to ``keys[i]`` (ignoring surrounding spaces) by ``subs[i]``."""
    if len(keys) != len(subs):
        raise ValueError("create_range needs as many subs as keys")
    c = table.index(column, step)
    mapping = {str(key).strip(): str(sub) for key, sub in zip(keys, subs)}
    rows = [r[:c] + (mapping.get(r[c].strip(), r[c]),) + r[c + 1:] for r in table.rows]
    return Table(table.columns, rows)


def insert_sequence(table: Table, gene_column: str, fetcher: Optional[SequenceFetcher] = None,
                    step: str = "insert_sequence", **_) -> Table:
    """Add ``protein_or_rna_sequence`` looked up once per distinct key of ``gene_column``."""
    g = table.index(gene_column, step)
    fetcher = fetcher or SequenceFetcher(FetcherSpec.from_env())
    seqs = {key: fetcher.fetch(key) for key in dict.fromkeys(r[g] for r in table.rows) if key}
    values = [seqs.get(r[g], "") for r in table.rows]
    if SEQUENCE_COLUMN in table.columns:
        s = table.columns.index(SEQUENCE_COLUMN)
        return Table(table.columns, [r[:s] + (v,) + r[s + 1:] for r, v in zip(table.rows, values)])
    return Table(table.columns + (SEQUENCE_COLUMN,), [r + (v,) for r, v in zip(table.rows, values)])


def filter_rows(table: Table, expr: str, step: str = "filter_rows", **_) -> Table:
    keep = compile_filter(expr, table.columns)
    return Table(table.columns, [r for r in table.rows if keep(r)])


def select_columns(table: Table, columns: Sequence[str], step: str = "select_columns", **_) -> Table:
    idx = [table.index(c, step) for c in columns]
    return Table(tuple(columns), [tuple(r[i] for i in idx) for r in table.rows])


TRANSFORMS: dict[str, Callable[..., Table]] = {
    "autofill_identifier": autofill_identifier,
    "create_range": create_range,
    "insert_sequence": insert_sequence,
    "insert_protein_sequence": insert_sequence,
    "filter_rows": filter_rows,
    "select_columns": select_columns,
}


@dataclass(frozen=True)
class DataViewConfig:
    dataset_name: str
    steps: tuple[tuple[str, Mapping], ...] = ()
    var_map: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple((fn, dict(args)) for fn, args in self.steps))
        object.__setattr__(self, "var_map", dict(self.var_map))
        for fn, _ in self.steps:
            if fn not in TRANSFORMS:
                raise UnknownTransform(f"unknown view function {fn!r}", function=fn)
        if len(set(self.var_map.values())) != len(self.var_map):
            raise ValueError("var_map targets must be distinct")

    def to_dict(self) -> dict:
        return {
            "dataset_name": self.dataset_name,
            "functions_to_run": [fn for fn, _ in self.steps],
            "args_for_functions": [dict(args) for _, args in self.steps],
            "var_map": dict(self.var_map),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "DataViewConfig":
        fns = list(d.get("functions_to_run", []))
        args = list(d.get("args_for_functions", [{}] * len(fns)))
        if len(args) != len(fns):
            raise ValueError("functions_to_run and args_for_functions differ in length")
        return cls(d["dataset_name"], tuple(zip(fns, args)), d.get("var_map", {}))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "DataViewConfig":
        return cls.from_dict(json.loads(text))


def apply_var_map(table: Table, var_map: Mapping[str, str]) -> Table:
    """Rename columns pairwise.

    For each ``a: b`` the column present in the table is renamed to the other
    name: ``a`` becomes ``b`` when ``a`` exists, otherwise ``b`` becomes ``a``.
    """
    cols = list(table.columns)
    for a, b in var_map.items():
        if a in cols:
            cols[cols.index(a)] = b
        elif b in cols:
            cols[cols.index(b)] = a
        else:
            raise ColumnMissing(f"var_map entry {a!r}: {b!r} matches no column", step="var_map", column=a)
    return Table(tuple(cols), table.rows)


def run_view(cfg: DataViewConfig, table: Table, fetcher: Optional[SequenceFetcher] = None) -> Table:
    """Apply the steps in order, then the renames. Pure given the fetcher's answers."""
    for fn, args in cfg.steps:
        kwargs = dict(args)
        if TRANSFORMS[fn] is insert_sequence:
            kwargs["fetcher"] = fetcher
        try:
            table = TRANSFORMS[fn](table, step=fn, **kwargs)
        except TypeError as exc:
            raise ValueError(f"bad arguments for {fn}: {exc}") from None
    return apply_var_map(table, cfg.var_map)


@dataclass(frozen=True)
class ViewResult:
    table: Table
    manifest: DatasetManifest


def apply_view(cfg: DataViewConfig, registry: Registry, version="latest", fetcher: Optional[SequenceFetcher] = None,
               output_name: Optional[str] = None) -> ViewResult:
    """Run ``cfg`` on a registered dataset and register the result as its child."""
    source = registry.get(cfg.dataset_name, version)
    table = run_view(cfg, registry.read_table(source.name, source.version), fetcher)
    manifest = registry.register(output_name or f"{cfg.dataset_name}.view", table.to_csv(), None,
                                 (source.name, source.version), cfg.to_dict())
    return ViewResult(table, manifest)
