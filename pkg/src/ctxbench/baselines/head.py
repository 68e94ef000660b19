"""Logistic head over ``[entity embedding || one-hot context]``."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from ..datamodel import ContextSample, Prediction, PredictionSet
from ..errors import DegenerateSlice, MissingEmbedding, UnknownContext
from ..metrics import auroc
from ..splits import SplitSpec
from .embeddings import EmbeddingTable


@dataclass(frozen=True)
class HeadConfig:
    learning_rate: float = 1.0
    epochs: int = 1000
    l2: float = 1e-4
    # epochs without a valid-AUROC improvement before stopping
    patience: int = 100


@dataclass(frozen=True, eq=False)
class LinearHead:
    weights: np.ndarray
    bias: float
    contexts: tuple[str, ...]
    dim: int
    trained_on: str = ""
    epochs_run: int = 0

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.shape != (self.dim + len(self.contexts),):
            raise ValueError(f"weights must have length dim + |contexts| = {self.dim + len(self.contexts)}")
        if not (np.all(np.isfinite(w)) and np.isfinite(self.bias)):
            raise ValueError("head weights must be finite")
        object.__setattr__(self, "weights", w)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))


def design_matrix(emb: EmbeddingTable, pairs: Sequence[tuple[str, str]], contexts: Sequence[str]) -> np.ndarray:
    col = {c: i for i, c in enumerate(contexts)}
    x = np.zeros((len(pairs), emb.dim + len(contexts)))
    for i, (entity, context) in enumerate(pairs):
        if entity not in emb:
            raise MissingEmbedding(f"no embedding for entity {entity!r}", entity=entity)
        if context not in col:
            raise UnknownContext(f"head has no context {context!r}", context=context)
        x[i, :emb.dim] = emb.vector(entity)
        x[i, emb.dim + col[context]] = 1.0
    return x


def logistic_loss(w: np.ndarray, b: float, x: np.ndarray, y: np.ndarray, l2: float = 0.0) -> float:
    z = x @ w + b
    return float(np.mean(np.logaddexp(0.0, z) - y * z) + 0.5 * l2 * (w @ w))


def logistic_grad(w: np.ndarray, b: float, x: np.ndarray, y: np.ndarray, l2: float = 0.0) -> tuple[np.ndarray, float]:
    r = (_sigmoid(x @ w + b) - y) / len(y)
    return x.T @ r + l2 * w, float(r.sum())


def train_linear_head(emb: EmbeddingTable, samples: Sequence[ContextSample], split: SplitSpec,
                      contexts: Sequence[str], hyper: HeadConfig = HeadConfig(),
                      key: Callable[[ContextSample], str] = lambda s: s.entity,
                      loss_history: Optional[list] = None) -> LinearHead:
    """Full-batch gradient descent on the mean logistic loss of the train fold.

    The returned weights are those with the best valid-fold AUROC seen so far;
    with an empty or single-class valid fold the last iterate is kept.
    """
    contexts = tuple(contexts)
    train = [s for s in samples if key(s) in split.train]
    valid = [s for s in samples if key(s) in split.valid]
    x = design_matrix(emb, [s.key for s in train], contexts)
    y = np.array([s.label for s in train], dtype=np.float64)
    try:
        xv = design_matrix(emb, [s.key for s in valid], contexts) if valid else None
    except (MissingEmbedding, UnknownContext):
        xv = None
    yv = np.array([s.label for s in valid])
    use_valid = xv is not None and 0 < yv.sum() < len(yv)

    w = np.zeros(x.shape[1])
    b = 0.0
    best = (-np.inf, w.copy(), b, 0)
    stale = 0
    epochs = 0
    for epoch in range(1, hyper.epochs + 1):
        if not len(y):
            break
        gw, gb = logistic_grad(w, b, x, y, hyper.l2)
        w = w - hyper.learning_rate * gw
        b = b - hyper.learning_rate * gb
        epochs = epoch
        if loss_history is not None:
            loss_history.append(logistic_loss(w, b, x, y, hyper.l2))
        if use_valid:
            try:
                score = auroc(xv @ w + b, yv)
            except DegenerateSlice:
                score = -np.inf
            if score > best[0]:
                best, stale = (score, w.copy(), b, epoch), 0
            else:
                stale += 1
                if stale >= hyper.patience:
                    break
    if use_valid and best[0] > -np.inf:
        _, w, b, epochs = best
    return LinearHead(w, float(b), contexts, emb.dim, split.to_json(), epochs)


def predict_scores(head: LinearHead, emb: EmbeddingTable, pairs: Sequence[tuple[str, str]],
                   dataset_ref: str = "") -> PredictionSet:
    """sigma(w . x + b) for each distinct (entity, context) pair."""
    if emb.dim != head.dim:
        raise ValueError(f"embedding dim {emb.dim} does not match head dim {head.dim}")
    unique = list(dict.fromkeys(tuple(p) for p in pairs))
    scores = _sigmoid(design_matrix(emb, unique, head.contexts) @ head.weights + head.bias)
    return PredictionSet(tuple(Prediction(e, c, float(s)) for (e, c), s in zip(unique, scores)), dataset_ref)
