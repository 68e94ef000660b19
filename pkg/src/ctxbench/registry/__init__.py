"""Versioned dataset registry, streaming reads and declarative data views."""

from .fetchers import FetcherSpec, SequenceFetcher
from .filters import compile_filter, parse_filter
from .store import DatasetManifest, Registry, lineage, register_dataset, stream_dataset
from .table import Table
from .views import SEQUENCE_COLUMN, DataViewConfig, ViewResult, apply_view, insert_sequence, run_view

__all__ = [
    "DataViewConfig", "DatasetManifest", "FetcherSpec", "Registry", "SEQUENCE_COLUMN", "SequenceFetcher", "Table",
    "ViewResult", "apply_view", "compile_filter", "insert_sequence", "lineage", "parse_filter", "register_dataset",
    "run_view", "stream_dataset",
]
