"""Sequence fetchers for view augmentation: offline fixtures or a REST endpoint.

``CTXBENCH_FETCH_MODE`` selects the default mode (``fixture`` unless set to
``live``); ``CTXBENCH_FIXTURES`` points at the fixture JSON file.
"""

from __future__ import annotations

import hashlib
import json
import os
import urllib.error
import urllib.parse
import urllib.request
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Optional

from ..errors import FetchFailure, FixtureMissing

MODE_ENV = "CTXBENCH_FETCH_MODE"
FIXTURE_ENV = "CTXBENCH_FIXTURES"
UNIPROT_TEMPLATE = ("https://rest.uniprot.org/uniprotkb/search?query=gene_exact:{key}+AND+organism_id:9606"
                    "+AND+reviewed:true&format=fasta&size=1")

Transport = Callable[[str, float], bytes]


def urllib_transport(url: str, timeout: float) -> bytes:
    with urllib.request.urlopen(url, timeout=timeout) as resp:
        return resp.read()


@dataclass(frozen=True)
class FetcherSpec:
    kind: str = "fixture_file"
    endpoint_template: str = UNIPROT_TEMPLATE
    cache_dir: Optional[str] = None
    timeout: float = 10.0
    fixture_path: Optional[str] = None
    fixtures: Optional[Mapping[str, str]] = None

    def __post_init__(self):
        if self.kind not in ("fixture_file", "rest_get_sequence"):
            raise ValueError(f"unknown fetcher kind {self.kind!r}")
        if self.kind == "rest_get_sequence" and "{key}" not in self.endpoint_template:
            raise ValueError("endpoint_template must contain {key}")

    @classmethod
    def from_env(cls, **overrides) -> "FetcherSpec":
        kind = "rest_get_sequence" if os.environ.get(MODE_ENV, "fixture") == "live" else "fixture_file"
        fields = {"kind": kind, "fixture_path": os.environ.get(FIXTURE_ENV)}
        fields.update(overrides)
        return cls(**fields)


def parse_fasta(text: str) -> str:
    return "".join(line.strip() for line in text.splitlines() if line and not line.startswith(">"))


class SequenceFetcher:
    """Resolves keys to sequences with an in-memory and optional on-disk cache.

    ``network_calls`` counts transport invocations; ``cache_hits`` counts
    lookups served without one.
    """

    def __init__(self, spec: FetcherSpec, transport: Optional[Transport] = None):
        self.spec = spec
        self.transport = transport or urllib_transport
        self.cache: dict[str, str] = {}
        self.network_calls = 0
        self.fixture_reads = 0
        self.cache_hits = 0
        self._fixtures: Optional[dict[str, str]] = None

    def _fixture_table(self) -> dict[str, str]:
        if self._fixtures is None:
            table = dict(self.spec.fixtures or {})
            if self.spec.fixture_path:
                table.update(json.loads(Path(self.spec.fixture_path).read_text(encoding="utf-8")))
            self._fixtures = table
        return self._fixtures

    def _disk_path(self, key: str) -> Optional[Path]:
        if not self.spec.cache_dir:
            return None
        return Path(self.spec.cache_dir) / (hashlib.sha256(key.encode()).hexdigest()[:32] + ".seq")

    def fetch(self, key: str) -> str:
        if key in self.cache:
            self.cache_hits += 1
            return self.cache[key]
        disk = self._disk_path(key)
        if disk is not None and disk.exists():
            self.cache_hits += 1
            seq = disk.read_text(encoding="utf-8")
        elif self.spec.kind == "fixture_file":
            table = self._fixture_table()
            if key not in table:
                raise FixtureMissing(f"no fixture sequence for {key!r}", key=key)
            self.fixture_reads += 1
            seq = table[key]
        else:
            url = self.spec.endpoint_template.format(key=urllib.parse.quote(key))
            self.network_calls += 1
            try:
                seq = parse_fasta(self.transport(url, self.spec.timeout).decode("utf-8"))
            except (urllib.error.URLError, OSError, UnicodeDecodeError) as exc:
                raise FetchFailure(f"fetching {key!r} failed: {exc}", key=key) from None
            if not seq:
                raise FetchFailure(f"no sequence returned for {key!r}", key=key)
            if disk is not None:
                disk.parent.mkdir(parents=True, exist_ok=True)
                disk.write_text(seq, encoding="utf-8")
        self.cache[key] = seq
        return seq

    @property
    def fetches(self) -> int:
        """Lookups that went past the cache."""
        return self.network_calls + self.fixture_reads
