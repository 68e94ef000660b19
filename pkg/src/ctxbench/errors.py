"""Exception hierarchy shared by every ctxbench module.

Each error carries the offending detail as keyword fields so callers (the CLI,
the HTTP service) can render structured messages without string parsing.
"""

from __future__ import annotations


class BenchError(Exception):
    """Base class for all domain errors."""

    def __init__(self, message: str = "", **detail):
        self.detail = detail
        super().__init__(message or type(self).__name__)

    @property
    def code(self) -> str:
        return type(self).__name__

    def to_dict(self) -> dict:
        return {"error": self.code, "message": str(self), **{k: _plain(v) for k, v in self.detail.items()}}


def _plain(value):
    if isinstance(value, (list, tuple, set, frozenset)):
        return [_plain(v) for v in value]
    return value


# datamodel
class MalformedRow(BenchError):
    """A record line could not be decoded or violates a field domain."""


class DuplicateKey(BenchError):
    """An (entity, context) key appears twice."""


class UnknownColumn(BenchError):
    """A header names a column the parser does not know, or misses a required one."""


class SelfLoop(BenchError):
    """An edge connects a node to itself."""


class UnknownNode(BenchError):
    """A membership or seed references a node absent from the graph."""


class NonPositiveWeight(BenchError):
    """An edge weight is zero or negative."""


class EmptyMatrix(BenchError):
    """An expression matrix has no cells or no genes."""


class InvalidScore(BenchError):
    """A prediction score is non-finite or outside [0, 1]."""


# metrics
class DegenerateSlice(BenchError):
    """A slice lacks the classes a rank metric needs."""


class NotEnoughContexts(BenchError):
    """Top-K selection asked for more eligible contexts than exist."""


class NotNormalized(BenchError):
    """An expression matrix was used before normalize_counts()."""


class TooFewCells(BenchError):
    """A condition has fewer than two cells."""


class MissingGene(BenchError):
    """A gene id is absent from the gene index."""


class ConstantActual(BenchError):
    """R^2 is undefined for a constant target vector."""


class KeyMismatch(BenchError):
    """Reports being aggregated carry different metric keys."""


# splits
class TooFewEntities(BenchError):
    """Not enough distinct entities to form three folds."""


class EmptyFold(BenchError):
    """A required fold ended up empty."""


class DegenerateClass(BenchError):
    """Stratification needs both classes present."""


class ExhaustedCandidates(BenchError):
    """The negative candidate space is too small for the requested count."""


class MissingExternalPool(BenchError):
    """ET negative sampling needs a non-empty external receptor pool."""


# graph baselines
class UnknownContext(BenchError):
    """A context id is not declared by the graph or head."""


class SeedNodeMissing(BenchError):
    """A seed node is not part of the context subgraph."""


class EmptyCorpus(BenchError):
    """Skip-gram training received no walks."""


class MissingEmbedding(BenchError):
    """An entity has no embedding vector."""


class DimMismatch(BenchError):
    """Embedding vectors disagree on dimension."""


class CorruptFile(BenchError):
    """A stored file could not be decoded."""


# registry
class SchemaMismatch(BenchError):
    """Dataset bytes do not match the declared schema."""


class HashCollision(BenchError):
    """Two different payloads share a content hash."""


class UnknownParent(BenchError):
    """A declared parent manifest does not exist."""


class UnknownDataset(BenchError):
    """No manifest with this name/version."""


class IntegrityError(BenchError):
    """Stored bytes no longer match the manifest content hash."""


class UnknownTransform(BenchError):
    """A view step names an unregistered transform."""


class ColumnMissing(BenchError):
    """A view step references a column that does not exist."""


class FetchFailure(BenchError):
    """A live sequence fetch failed."""


class FixtureMissing(BenchError):
    """Fixture mode has no entry for a key."""


class BadFilter(BenchError):
    """A row filter expression is malformed or references unknown columns."""


# service
class BadCursor(BenchError):
    """A pagination cursor is malformed or stale."""


class UnknownGroup(BenchError):
    """No benchmark group with this id."""


class MissingPredictions(BenchError):
    """Predictions do not cover the whole test fold."""


class UnknownKeys(BenchError):
    """Predictions contain keys outside the test fold."""
