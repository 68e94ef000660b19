"""Rank, classification and perturbation metrics, plus context-sliced Top-K views.

Every rank metric works on plain score/label sequences; the context-aware
functions join a :class:`PredictionSet` to its samples, slice by context and
aggregate over the best-performing slices.
"""

from __future__ import annotations

import json
import statistics
import zlib
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .datamodel import ContextSample, ExpressionMatrix, PredictionSet
from .errors import (
    ConstantActual,
    DegenerateSlice,
    KeyMismatch,
    MissingGene,
    MissingPredictions,
    NotEnoughContexts,
    NotNormalized,
    TooFewCells,
    UnknownKeys,
)

WELCH_VARIANCE_FLOOR = 1e-12


def _arrays(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels, dtype=int)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError(f"scores and labels must be 1-d and equal length, got {s.shape} and {y.shape}")
    return s, y


def average_ranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks with tied values sharing the mean of their positions."""
    order = np.argsort(x, kind="mergesort")
    sx = x[order]
    boundaries = np.flatnonzero(np.diff(sx)) + 1
    starts = np.concatenate(([0], boundaries))
    ends = np.concatenate((boundaries, [len(x)]))
    ranks = np.empty(len(x), dtype=float)
    for a, b in zip(starts, ends):
        ranks[order[a:b]] = (a + b + 1) / 2.0
    return ranks


def auroc(scores, labels) -> float:
    """Mann-Whitney AUROC; ties count one half."""
    s, y = _arrays(scores, labels)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateSlice("AUROC needs at least one positive and one negative", n_pos=n_pos, n_neg=n_neg)
    ranks = average_ranks(s)
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def average_precision(scores, labels) -> float:
    """Step-wise area under the precision-recall curve.

    Tied scores form a single threshold, so the value does not depend on the
    input order.
    """
    s, y = _arrays(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise DegenerateSlice("average precision needs at least one positive", n_pos=0)
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    tp = np.cumsum(y)
    fp = np.cumsum(1 - y)
    last = np.concatenate((np.flatnonzero(np.diff(s)), [len(s) - 1]))
    tp, fp = tp[last], fp[last]
    precision = tp / (tp + fp)
    recall = tp / n_pos
    steps = np.diff(np.concatenate(([0.0], recall)))
    return float(np.sum(steps * precision))


def tie_broken_order(scores, seed=0) -> np.ndarray:
    """Indices in descending score order; ties follow a seeded shuffle, never labels."""
    s = np.asarray(scores, dtype=float)
    perm = np.random.default_rng(seed).permutation(len(s))
    return perm[np.argsort(-s[perm], kind="stable")]


def ap_at_r(scores, labels, r: int, seed=0) -> float:
    """Average precision over the top ``r`` items of a ranked slice.

    The normalizer is the number of positives inside the top ``r``; a prefix
    without positives scores 0.
    """
    if r < 1:
        raise ValueError("R must be >= 1")
    s, y = _arrays(scores, labels)
    if len(s) == 0:
        raise DegenerateSlice("AP@R on an empty slice")
    top = y[tie_broken_order(s, seed)[:r]]
    hits = np.cumsum(top)
    precision = hits / np.arange(1, len(top) + 1)
    n_hit = int(top.sum())
    return float(precision[top == 1].sum() / max(1, n_hit))


def classification_suite(scores, labels, threshold: float = 0.5) -> dict[str, Optional[float]]:
    """Accuracy and F1 at ``threshold`` plus AUROC/AUPRC.

    The rank metrics come back as ``None`` when the labels hold a single class;
    accuracy and F1 are always defined.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must lie in [0, 1]")
    s, y = _arrays(scores, labels)
    pred = (s >= threshold).astype(int)
    tp = int(np.sum((pred == 1) & (y == 1)))
    fp = int(np.sum((pred == 1) & (y == 0)))
    fn = int(np.sum((pred == 0) & (y == 1)))
    acc = float(np.mean(pred == y)) if len(y) else 0.0
    f1 = 2 * tp / (2 * tp + fp + fn) if tp else 0.0
    out: dict[str, Optional[float]] = {"acc": acc, "f1": float(f1), "auroc": None, "auprc": None}
    try:
        out["auroc"] = auroc(s, y)
    except DegenerateSlice:
        pass
    try:
        out["auprc"] = average_precision(s, y)
    except DegenerateSlice:
        pass
    return out


# ---------------------------------------------------------------------------
# context slices


@dataclass(frozen=True)
class ContextSliceReport:
    context: str
    n_samples: int
    n_positives: int
    auroc: Optional[float]
    ap_at_r: Mapping[int, Optional[float]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "context": self.context,
            "n_samples": self.n_samples,
            "n_positives": self.n_positives,
            "auroc": self.auroc,
            "ap_at_r": {str(r): v for r, v in sorted(self.ap_at_r.items())},
        }


def join_predictions(preds: PredictionSet, samples: Sequence[ContextSample]) -> list[tuple[ContextSample, float]]:
    """Pair each sample with its score; predictions must cover exactly the samples."""
    scores = preds.scores()
    wanted = {s.key for s in samples}
    missing = [s.key for s in samples if s.key not in scores]
    if missing:
        raise MissingPredictions(f"missing: {len(missing)}", count=len(missing), examples=missing[:5])
    unknown = [k for k in scores if k not in wanted]
    if unknown:
        raise UnknownKeys(f"unknown: {len(unknown)}", count=len(unknown), examples=unknown[:5])
    return [(s, scores[s.key]) for s in samples]


def _slice_seed(seed: int, context: str) -> list[int]:
    return [seed, zlib.crc32(context.encode("utf-8"))]


def _group(joined: Iterable[tuple[ContextSample, float]]) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    buckets: dict[str, tuple[list[float], list[int]]] = {}
    for sample, score in joined:
        s, y = buckets.setdefault(sample.context, ([], []))
        s.append(score)
        y.append(sample.label)
    return {c: (np.asarray(s, dtype=float), np.asarray(y, dtype=int)) for c, (s, y) in sorted(buckets.items())}


def context_slices(preds: PredictionSet, samples: Sequence[ContextSample], rs: Sequence[int] = (),
                   seed: int = 0) -> list[ContextSliceReport]:
    reports = []
    for ctx, (s, y) in _group(join_predictions(preds, samples)).items():
        n_pos = int(y.sum())
        a = auroc(s, y) if 0 < n_pos < len(y) else None
        aps = {r: (ap_at_r(s, y, r, _slice_seed(seed, ctx)) if n_pos else None) for r in rs}
        reports.append(ContextSliceReport(ctx, len(y), n_pos, a, aps))
    return reports


def _select_top(values: list[tuple[str, int, float]], k: int) -> list[tuple[str, int, float]]:
    """Top ``k`` of (context, n, value): value desc, then larger n, then context id."""
    if k < 1:
        raise ValueError("K must be >= 1")
    if k > len(values):
        raise NotEnoughContexts(f"K={k} but only {len(values)} eligible contexts", k=k, available=len(values))
    return sorted(values, key=lambda t: (-t[2], -t[1], t[0]))[:k]


def topk_auroc_from_slices(slices: Sequence[ContextSliceReport], k: int) -> float:
    eligible = [(r.context, r.n_samples, r.auroc) for r in slices if r.auroc is not None]
    chosen = _select_top(eligible, k)
    total = sum(n for _, n, _ in chosen)
    return float(sum(v * n for _, n, v in chosen) / total)


def topk_ap_from_slices(slices: Sequence[ContextSliceReport], r: int, k: int) -> float:
    eligible = [(s.context, s.n_samples, s.ap_at_r[r]) for s in slices if s.ap_at_r.get(r) is not None]
    chosen = _select_top(eligible, k)
    return float(sum(v for _, _, v in chosen) / len(chosen))


def context_auroc_topk(preds: PredictionSet, samples: Sequence[ContextSample], k: int,
                       seed: int = 0) -> tuple[float, list[ContextSliceReport]]:
    """Sample-weighted mean AUROC over the ``k`` best contexts.

    Single-class contexts have no AUROC and are dropped before selection.
    """
    slices = context_slices(preds, samples, (), seed)
    return topk_auroc_from_slices(slices, k), slices


def context_ap_at_r_topk(preds: PredictionSet, samples: Sequence[ContextSample], r: int, k: int,
                         seed: int = 0) -> float:
    slices = context_slices(preds, samples, (r,), seed)
    return topk_ap_from_slices(slices, r, k)


def context_free_suite(preds: PredictionSet, samples: Sequence[ContextSample], r: int | Sequence[int] = 5,
                       seed: int = 0, threshold: float = 0.5) -> dict:
    """Metrics over the pooled samples of every context."""
    joined = join_predictions(preds, samples)
    s = np.asarray([score for _, score in joined], dtype=float)
    y = np.asarray([sample.label for sample, _ in joined], dtype=int)
    rs = [r] if isinstance(r, int) else list(r)
    out = classification_suite(s, y, threshold)
    if out["auroc"] is None:
        raise DegenerateSlice("pooled predictions hold a single class", n_pos=int(y.sum()), n=len(y))
    out["ap_at_r"] = {rr: ap_at_r(s, y, rr, seed) for rr in rs}
    return out


# ---------------------------------------------------------------------------
# reports


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


@dataclass(frozen=True)
class MetricSuite:
    """Which metrics a benchmark group reports."""

    ap_ranks: tuple[int, ...] = (5, 20)
    ap_topk: tuple[int, ...] = (1,)
    auroc_topk: tuple[int, ...] = (1,)
    threshold: float = 0.5
    primary: str = "cf_auroc"

    def to_dict(self) -> dict:
        return {"ap_ranks": list(self.ap_ranks), "ap_topk": list(self.ap_topk), "auroc_topk": list(self.auroc_topk),
                "threshold": self.threshold, "primary": self.primary}

    @classmethod
    def from_dict(cls, d: Mapping) -> "MetricSuite":
        return cls(tuple(d.get("ap_ranks", (5, 20))), tuple(d.get("ap_topk", (1,))),
                   tuple(d.get("auroc_topk", (1,))), float(d.get("threshold", 0.5)), d.get("primary", "cf_auroc"))


@dataclass(frozen=True)
class MetricReport:
    per_context: tuple[ContextSliceReport, ...]
    topk_auroc: Mapping[int, float]
    topk_ap_at_r: Mapping[tuple[int, int], float]
    context_free: Mapping[str, object]
    seed: int

    def flat(self) -> dict[str, float]:
        """Scalar view keyed by stable metric names, used for seed aggregation."""
        out: dict[str, float] = {}
        for k, v in self.topk_auroc.items():
            out[f"auroc_top{k}"] = v
        for (r, k), v in self.topk_ap_at_r.items():
            out[f"ap@{r}_top{k}"] = v
        for name in ("auroc", "auprc", "acc", "f1"):
            if self.context_free.get(name) is not None:
                out[f"cf_{name}"] = self.context_free[name]
        for r, v in self.context_free.get("ap_at_r", {}).items():
            out[f"cf_ap@{r}"] = v
        return dict(sorted(out.items()))

    def to_dict(self) -> dict:
        cf = dict(self.context_free)
        cf["ap_at_r"] = {str(r): v for r, v in sorted(cf.get("ap_at_r", {}).items())}
        return {
            "per_context": [s.to_dict() for s in self.per_context],
            "topk_auroc": {str(k): v for k, v in sorted(self.topk_auroc.items())},
            "topk_ap_at_r": {f"{r}@{k}": v for (r, k), v in sorted(self.topk_ap_at_r.items())},
            "context_free": cf,
            "seed": self.seed,
        }

    def to_json(self) -> str:
        return canonical_json(self.to_dict())


def evaluate_predictions(preds: PredictionSet, samples: Sequence[ContextSample], suite: MetricSuite,
                         seed: int = 0) -> MetricReport:
    """Run a full suite: per-context slices, Top-K aggregates and pooled metrics."""
    slices = context_slices(preds, samples, suite.ap_ranks, seed)
    topk_auroc = {k: topk_auroc_from_slices(slices, k) for k in suite.auroc_topk}
    topk_ap = {(r, k): topk_ap_from_slices(slices, r, k) for r in suite.ap_ranks for k in suite.ap_topk}
    cf = context_free_suite(preds, samples, suite.ap_ranks, seed, suite.threshold)
    return MetricReport(tuple(slices), topk_auroc, topk_ap, cf, seed)


@dataclass(frozen=True)
class SeedAggregate:
    metric: str
    mean: float
    std: float
    n_seeds: int

    def to_dict(self) -> dict:
        return {"metric": self.metric, "mean": self.mean, "std": self.std, "n_seeds": self.n_seeds}

    def __str__(self) -> str:
        return f"{self.mean:.3f} ± {self.std:.3f}"


def aggregate_seeds(reports: Sequence[MetricReport | Mapping[str, float]]) -> list[SeedAggregate]:
    """Mean and population standard deviation of every metric across seeds."""
    if not reports:
        raise ValueError("need at least one report")
    flats = [r.flat() if isinstance(r, MetricReport) else dict(r) for r in reports]
    keys = sorted(flats[0])
    for f in flats[1:]:
        if sorted(f) != keys:
            raise KeyMismatch("reports carry different metric keys",
                              expected=keys, got=sorted(f))
    out = []
    for key in keys:
        # exact rational arithmetic, so identical values give a std of exactly 0
        values = [float(f[key]) for f in flats]
        out.append(SeedAggregate(key, statistics.mean(values), statistics.pstdev(values), len(values)))
    return out


# ---------------------------------------------------------------------------
# perturbation response


def welch_t(perturbed: np.ndarray, control: np.ndarray) -> np.ndarray:
    """Per-column Welch t statistic of ``perturbed`` against ``control``."""
    n1, n0 = perturbed.shape[0], control.shape[0]
    se2 = perturbed.var(axis=0, ddof=1) / n1 + control.var(axis=0, ddof=1) / n0
    return (perturbed.mean(axis=0) - control.mean(axis=0)) / np.sqrt(np.maximum(se2, WELCH_VARIANCE_FLOOR))


def select_deg(control: ExpressionMatrix, perturbed: ExpressionMatrix, k: int) -> list[str]:
    """The ``k`` genes with the largest absolute Welch t, ties by gene id."""
    if k < 1:
        raise ValueError("k must be >= 1")
    for m in (control, perturbed):
        if m.normalized is None:
            raise NotNormalized("select_deg needs normalized matrices; call normalize_counts first")
        if len(m.cells) < 2:
            raise TooFewCells(f"{len(m.cells)} cells; Welch t needs >= 2 per condition", n=len(m.cells))
    if set(control.genes) != set(perturbed.genes):
        raise MissingGene("control and perturbed matrices hold different genes")
    genes = sorted(control.genes)
    ci = [control.gene_index[g] for g in genes]
    pi = [perturbed.gene_index[g] for g in genes]
    t = welch_t(perturbed.normalized[:, pi], control.normalized[:, ci])
    order = sorted(range(len(genes)), key=lambda i: (-abs(t[i]), genes[i]))
    return [genes[i] for i in order[:k]]


def mse_at_deg(pred, actual, deg: Sequence[str], gene_index: Mapping[str, int]) -> float:
    if not deg:
        raise ValueError("deg list is empty")
    p = np.asarray(pred, dtype=float)
    a = np.asarray(actual, dtype=float)
    idx = []
    for g in deg:
        if g not in gene_index:
            raise MissingGene(f"gene {g} not in index", gene=g)
        idx.append(gene_index[g])
    diff = p[idx] - a[idx]
    return float(np.mean(diff * diff))


def r_squared(pred, actual) -> float:
    p = np.asarray(pred, dtype=float)
    a = np.asarray(actual, dtype=float)
    if p.shape != a.shape or a.ndim != 1 or len(a) < 2:
        raise ValueError("pred and actual must be equal-length vectors of length >= 2")
    ss_tot = float(np.sum((a - a.mean()) ** 2))
    if ss_tot == 0.0:
        raise ConstantActual("actual values are constant; R^2 undefined")
    return 1.0 - float(np.sum((a - p) ** 2)) / ss_tot


def no_perturb_mse(control: ExpressionMatrix, perturbed: ExpressionMatrix, k: int = 20) -> float:
    """MSE over the top-``k`` DEGs when the control mean is used as the prediction."""
    deg = select_deg(control, perturbed, k)
    pidx = perturbed.gene_index
    pred = np.empty(len(perturbed.genes))
    for g, i in pidx.items():
        pred[i] = control.normalized[:, control.gene_index[g]].mean()
    return mse_at_deg(pred, perturbed.normalized.mean(axis=0), deg, pidx)
