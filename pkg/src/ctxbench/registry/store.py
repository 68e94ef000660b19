"""Content-addressed dataset store with a JSON manifest index.

Layout under the registry root::

    blobs/<sha256>.csv   immutable dataset bytes
    index.json           {"datasets": {name: [manifest, ...]}}
    .lock                writer lock

Writers serialize on the file lock; readers only touch immutable blobs and an
index that is replaced atomically.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import tempfile
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Iterator, Mapping, Optional, Union

from filelock import FileLock

from ..errors import (
    HashCollision,
    IntegrityError,
    SchemaMismatch,
    UnknownDataset,
    UnknownParent,
)
from .filters import compile_filter
from .table import Table

TYPES = ("str", "int", "float")
Version = Union[int, str]


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass(frozen=True)
class DatasetManifest:
    name: str
    version: int
    content_hash: str
    schema: Mapping[str, str]
    parent: Optional[tuple[str, int]] = None
    view_config: Optional[dict] = None
    created_at: str = ""
    n_rows: int = 0

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "version": self.version,
            "content_hash": self.content_hash,
            "schema": dict(self.schema),
            "parent": list(self.parent) if self.parent else None,
            "view_config": self.view_config,
            "created_at": self.created_at,
            "n_rows": self.n_rows,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "DatasetManifest":
        parent = d.get("parent")
        return cls(d["name"], int(d["version"]), d["content_hash"], dict(d["schema"]),
                   (parent[0], int(parent[1])) if parent else None, d.get("view_config"),
                   d.get("created_at", ""), int(d.get("n_rows", 0)))


def _parses(value: str, typ: str) -> bool:
    if value == "" or typ == "str":
        return True
    try:
        int(value) if typ == "int" else float(value)
    except ValueError:
        return False
    return True


def infer_schema(table: Table) -> dict[str, str]:
    schema = {}
    for i, col in enumerate(table.columns):
        values = [r[i] for r in table.rows if r[i] != ""]
        if values and all(_parses(v, "int") for v in values):
            schema[col] = "int"
        elif values and all(_parses(v, "float") for v in values):
            schema[col] = "float"
        else:
            schema[col] = "str"
    return schema


def validate_schema(table: Table, schema: Mapping[str, str]) -> None:
    if list(schema) != list(table.columns):
        raise SchemaMismatch(f"schema columns {list(schema)} do not match header {list(table.columns)}",
                             expected=list(schema), found=list(table.columns))
    for col, typ in schema.items():
        if typ not in TYPES:
            raise SchemaMismatch(f"column {col!r} has unsupported type {typ!r}", column=col)
    for lineno, row in enumerate(table.rows, start=2):
        for col, value in zip(table.columns, row):
            if not _parses(value, schema[col]):
                raise SchemaMismatch(f"line {lineno}: {col}={value!r} is not {schema[col]}", line=lineno,
                                     column=col)


class Registry:
    def __init__(self, root: Union[str, Path], clock: Callable[[], str] = _utc_now):
        self.root = Path(root)
        self.blobs = self.root / "blobs"
        self.blobs.mkdir(parents=True, exist_ok=True)
        self.index_path = self.root / "index.json"
        self.lock = FileLock(str(self.root / ".lock"))
        self.clock = clock

    # -- index ------------------------------------------------------------

    def _index(self) -> dict[str, list[dict]]:
        if not self.index_path.exists():
            return {}
        return json.loads(self.index_path.read_text(encoding="utf-8"))["datasets"]

    def _write_index(self, datasets: dict) -> None:
        fd, tmp = tempfile.mkstemp(dir=self.root, prefix=".index-")
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            json.dump({"datasets": datasets}, f, sort_keys=True, indent=1)
        os.replace(tmp, self.index_path)

    def names(self) -> list[str]:
        return sorted(self._index())

    def list_datasets(self) -> list[DatasetManifest]:
        return [DatasetManifest.from_dict(m) for name, ms in sorted(self._index().items()) for m in ms]

    def versions(self, name: str) -> list[DatasetManifest]:
        entries = self._index().get(name)
        if not entries:
            raise UnknownDataset(f"no dataset named {name!r}", name=name)
        return [DatasetManifest.from_dict(m) for m in entries]

    def get(self, name: str, version: Version = "latest") -> DatasetManifest:
        versions = self.versions(name)
        if version == "latest":
            return versions[-1]
        try:
            v = int(version)
        except (TypeError, ValueError):
            raise UnknownDataset(f"bad version {version!r} for {name}", name=name, version=version) from None
        for m in versions:
            if m.version == v:
                return m
        raise UnknownDataset(f"{name} has no version {v}", name=name, version=v)

    # -- writes -----------------------------------------------------------

    def _store_blob(self, data: bytes, digest: str) -> None:
        path = self.blobs / f"{digest}.csv"
        if path.exists():
            if path.read_bytes() != data:
                raise HashCollision(f"blob {digest} exists with different bytes", content_hash=digest)
            return
        fd, tmp = tempfile.mkstemp(dir=self.blobs, prefix=".blob-")
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)

    def register(self, name: str, data: bytes, schema: Optional[Mapping[str, str]] = None,
                 parent: Optional[tuple[str, int]] = None, view_config: Optional[dict] = None) -> DatasetManifest:
        """Store ``data`` as the next version of ``name``; ``schema=None`` infers column types."""
        if not name or "/" in name:
            raise ValueError(f"invalid dataset name {name!r}")
        table = Table.from_csv(data)
        schema = infer_schema(table) if schema is None else dict(schema)
        validate_schema(table, schema)
        digest = sha256_hex(data)
        with self.lock:
            index = self._index()
            if parent is not None:
                pname, pver = parent[0], int(parent[1])
                if not any(m["version"] == pver for m in index.get(pname, [])):
                    raise UnknownParent(f"parent {pname} v{pver} is not registered", name=pname, version=pver)
                parent = (pname, pver)
            self._store_blob(data, digest)
            entries = index.setdefault(name, [])
            manifest = DatasetManifest(name, len(entries) + 1, digest, schema, parent, view_config, self.clock(),
                                       len(table))
            entries.append(manifest.to_dict())
            self._write_index(index)
        return manifest

    # -- reads ------------------------------------------------------------

    def read_bytes(self, name: str, version: Version = "latest") -> bytes:
        m = self.get(name, version)
        data = (self.blobs / f"{m.content_hash}.csv").read_bytes()
        if sha256_hex(data) != m.content_hash:
            raise IntegrityError(f"stored bytes of {name} v{m.version} do not match their hash", name=name,
                                 version=m.version)
        return data

    def read_table(self, name: str, version: Version = "latest", filter: Optional[str] = None) -> Table:
        table = Table.from_csv(self.read_bytes(name, version))
        keep = compile_filter(filter, table.columns)
        return Table(table.columns, tuple(r for r in table.rows if keep(r)))

    def lineage(self, name: str, version: Version = "latest") -> list[DatasetManifest]:
        """Manifests from the root ancestor down to ``(name, version)``; verifies each blob."""
        chain = []
        seen = set()
        m: Optional[DatasetManifest] = self.get(name, version)
        while m is not None:
            if (m.name, m.version) in seen:
                raise IntegrityError(f"lineage cycle at {m.name} v{m.version}", name=m.name)
            seen.add((m.name, m.version))
            self.read_bytes(m.name, m.version)
            chain.append(m)
            m = self.get(*m.parent) if m.parent else None
        return chain[::-1]

    def stream(self, name: str, version: Version = "latest", filter: Optional[str] = None, chunk_size: int = 1000,
               probe: Optional[Callable[[int], None]] = None) -> Iterator[Table]:
        """Lazily yield filtered row batches of at most ``chunk_size`` rows.

        Only the current batch is held in memory. ``probe`` receives the number
        of buffered rows after each append. The blob hash is checked as bytes
        are consumed and a mismatch raises IntegrityError at the end of the file.
        """
        if chunk_size < 1:
            raise ValueError("chunk_size must be >= 1")
        m = self.get(name, version)
        with (self.blobs / f"{m.content_hash}.csv").open("rb") as f:
            header = next(csv.reader([f.readline().decode("utf-8")]), [])
        compile_filter(filter, header)  # surface BadFilter before iteration starts
        return self._stream(m, filter, chunk_size, probe)

    def _stream(self, m: DatasetManifest, filter, chunk_size, probe) -> Iterator[Table]:
        path = self.blobs / f"{m.content_hash}.csv"
        h = hashlib.sha256()
        with path.open("rb") as f:
            def lines():
                for raw in f:
                    h.update(raw)
                    yield raw.decode("utf-8")

            reader = csv.reader(lines())
            columns = tuple(next(reader))
            keep = compile_filter(filter, columns)
            batch: list[tuple[str, ...]] = []
            for row in reader:
                if not row or not keep(row):
                    continue
                batch.append(tuple(row))
                if probe is not None:
                    probe(len(batch))
                if len(batch) == chunk_size:
                    yield Table(columns, batch)
                    batch = []
            if h.hexdigest() != m.content_hash:
                raise IntegrityError(f"stored bytes of {m.name} v{m.version} do not match their hash",
                                     name=m.name, version=m.version)
            if batch:
                yield Table(columns, batch)


def register_dataset(registry: Registry, name: str, data: bytes, schema: Optional[Mapping[str, str]] = None,
                     parent: Optional[tuple[str, int]] = None) -> DatasetManifest:
    return registry.register(name, data, schema, parent)


def lineage(registry: Registry, name: str, version: Version = "latest") -> list[DatasetManifest]:
    return registry.lineage(name, version)


def stream_dataset(registry: Registry, name: str, version: Version = "latest", filter: Optional[str] = None,
                   chunk_size: int = 1000, probe: Optional[Callable[[int], None]] = None) -> Iterator[Table]:
    return registry.stream(name, version, filter, chunk_size, probe)
