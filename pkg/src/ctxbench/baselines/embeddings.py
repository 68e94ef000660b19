"""Entity embedding tables and their CSV / npz storage."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from ..errors import CorruptFile, DimMismatch


@dataclass(frozen=True, eq=False)
class EmbeddingTable:
    dim: int
    ids: tuple[str, ...]
    matrix: np.ndarray
    provenance: str = ""

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be positive")
        m = np.array(self.matrix, dtype=np.float64, copy=True).reshape(len(self.ids), -1) if len(self.ids) \
            else np.zeros((0, self.dim))
        if m.shape[1] != self.dim:
            raise DimMismatch(f"vectors have width {m.shape[1]}, table dim is {self.dim}",
                              expected=self.dim, got=int(m.shape[1]))
        if not np.all(np.isfinite(m)):
            raise ValueError("embedding entries must be finite")
        if len(set(self.ids)) != len(self.ids):
            raise ValueError("duplicate entity ids in embedding table")
        m.setflags(write=False)
        object.__setattr__(self, "ids", tuple(self.ids))
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "_index", {e: i for i, e in enumerate(self.ids)})

    @classmethod
    def from_vectors(cls, vectors: Mapping[str, "np.ndarray | list[float]"], provenance: str = "",
                     dim: int | None = None) -> "EmbeddingTable":
        ids = tuple(vectors)
        widths = {len(v) for v in vectors.values()}
        if dim is None:
            if len(widths) != 1:
                raise DimMismatch(f"vectors have mixed widths {sorted(widths)}", widths=sorted(widths))
            dim = widths.pop()
        elif widths - {dim}:
            raise DimMismatch(f"vectors have widths {sorted(widths)}, expected {dim}", expected=dim)
        matrix = np.array([list(vectors[e]) for e in ids], dtype=np.float64).reshape(len(ids), dim)
        return cls(dim, ids, matrix, provenance)

    @property
    def vectors(self) -> dict[str, np.ndarray]:
        return {e: self.matrix[i] for i, e in enumerate(self.ids)}

    def __contains__(self, entity: str) -> bool:
        return entity in self._index

    def __len__(self) -> int:
        return len(self.ids)

    def vector(self, entity: str) -> np.ndarray:
        return self.matrix[self._index[entity]]

    def rows(self, entities) -> np.ndarray:
        return self.matrix[[self._index[e] for e in entities]]

    def __eq__(self, other) -> bool:
        return (isinstance(other, EmbeddingTable) and self.dim == other.dim and self.ids == other.ids
                and self.provenance == other.provenance and np.array_equal(self.matrix, other.matrix))


def store_embeddings(table: EmbeddingTable, path: str | Path) -> Path:
    """Write ``table``; ``.npz`` paths use the binary variant, anything else CSV.

    CSV layout: a ``#``-prefixed JSON header ``{"count", "dim", "provenance"}``
    followed by ``entity,v1,...,vd`` rows. Floats use ``repr`` so reloading is exact.
    """
    path = Path(path)
    if path.suffix == ".npz":
        np.savez(path, ids=np.array(table.ids, dtype=str), matrix=table.matrix,
                 header=json.dumps({"dim": table.dim, "count": len(table), "provenance": table.provenance}))
        return path
    buf = io.StringIO()
    header = {"count": len(table), "dim": table.dim, "provenance": table.provenance}
    buf.write("#" + json.dumps(header, sort_keys=True) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    for e, row in zip(table.ids, table.matrix):
        w.writerow([e, *(repr(float(x)) for x in row)])
    path.write_text(buf.getvalue(), encoding="utf-8")
    return path


def _header(line: str, path: Path) -> dict:
    if not line.startswith("#"):
        raise CorruptFile(f"{path}: missing header line", path=str(path))
    try:
        header = json.loads(line[1:])
        dim, count = int(header["dim"]), int(header["count"])
    except (ValueError, KeyError, TypeError) as exc:
        raise CorruptFile(f"{path}: unreadable header ({exc})", path=str(path)) from None
    if dim < 1 or count < 0:
        raise CorruptFile(f"{path}: invalid dim/count in header", path=str(path))
    return header


def load_embeddings(path: str | Path) -> EmbeddingTable:
    path = Path(path)
    if path.suffix == ".npz":
        try:
            with np.load(path, allow_pickle=False) as z:
                header = _header("#" + str(z["header"]), path)
                ids, matrix = tuple(str(x) for x in z["ids"]), z["matrix"]
        except (OSError, ValueError, KeyError) as exc:
            raise CorruptFile(f"{path}: {exc}", path=str(path)) from None
        if matrix.ndim != 2 or matrix.shape[1] != int(header["dim"]):
            raise DimMismatch(f"{path}: matrix width disagrees with header", expected=int(header["dim"]))
        return EmbeddingTable(int(header["dim"]), ids, matrix, header.get("provenance", ""))

    try:
        text = path.read_text(encoding="utf-8")
    except UnicodeDecodeError:
        raise CorruptFile(f"{path}: not UTF-8 text", path=str(path)) from None
    lines = text.splitlines()
    if not lines:
        raise CorruptFile(f"{path}: empty file", path=str(path))
    header = _header(lines[0], path)
    dim, count = int(header["dim"]), int(header["count"])
    ids, rows = [], []
    for lineno, rec in enumerate(csv.reader(lines[1:]), start=2):
        if not rec:
            continue
        if len(rec) - 1 != dim:
            raise DimMismatch(f"{path}:{lineno}: row has {len(rec) - 1} values, header says {dim}",
                              line=lineno, expected=dim, got=len(rec) - 1)
        try:
            vals = [float(x) for x in rec[1:]]
        except ValueError:
            raise CorruptFile(f"{path}:{lineno}: non-numeric value", path=str(path), line=lineno) from None
        if not all(math.isfinite(v) for v in vals):
            raise CorruptFile(f"{path}:{lineno}: non-finite value", path=str(path), line=lineno)
        ids.append(rec[0])
        rows.append(vals)
    if len(ids) != count:
        raise CorruptFile(f"{path}: header count {count}, found {len(ids)} rows", path=str(path))
    if len(set(ids)) != len(ids):
        raise CorruptFile(f"{path}: duplicate entity ids", path=str(path))
    return EmbeddingTable(dim, tuple(ids), np.array(rows, dtype=np.float64).reshape(len(ids), dim),
                          header.get("provenance", ""))
