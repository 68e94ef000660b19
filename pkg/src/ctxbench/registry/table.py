"""Minimal string-valued table with exact CSV round-tripping."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Iterable, Sequence

from ..errors import ColumnMissing


@dataclass(frozen=True)
class Table:
    columns: tuple[str, ...]
    rows: tuple[tuple[str, ...], ...]

    def __post_init__(self):
        object.__setattr__(self, "columns", tuple(self.columns))
        object.__setattr__(self, "rows", tuple(tuple(r) for r in self.rows))
        if len(set(self.columns)) != len(self.columns):
            raise ValueError(f"duplicate column names in {self.columns}")
        for r in self.rows:
            if len(r) != len(self.columns):
                raise ValueError(f"row has {len(r)} fields, table has {len(self.columns)} columns")

    def __len__(self) -> int:
        return len(self.rows)

    def index(self, column: str, step: str = "") -> int:
        try:
            return self.columns.index(column)
        except ValueError:
            raise ColumnMissing(f"column {column!r} not found" + (f" in step {step}" if step else ""),
                                step=step, column=column) from None

    def column(self, name: str) -> list[str]:
        i = self.index(name)
        return [r[i] for r in self.rows]

    def records(self) -> list[dict[str, str]]:
        return [dict(zip(self.columns, r)) for r in self.rows]

    def to_csv(self) -> bytes:
        return csv_bytes(self.columns, self.rows)

    @classmethod
    def from_csv(cls, data: bytes | str) -> "Table":
        text = data.decode("utf-8") if isinstance(data, bytes) else data
        reader = csv.reader(io.StringIO(text, newline=""))
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError("table has no header row") from None
        return cls(tuple(header), tuple(tuple(r) for r in reader if r))


def csv_bytes(columns: Sequence[str], rows: Iterable[Sequence[str]], header: bool = True) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if header:
        w.writerow(columns)
    w.writerows(rows)
    return buf.getvalue().encode("utf-8")
