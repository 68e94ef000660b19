"""Brute-force reference implementations, deliberately independent of ctxbench code paths."""

import math


def pairwise_auroc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                total += 1.0
            elif p == n:
                total += 0.5
    return total / (len(pos) * len(neg))


def stepwise_ap(scores, labels):
    """Sum of (recall step) x precision over every distinct threshold, by direct counting."""
    n_pos = sum(labels)
    prev_recall = 0.0
    total = 0.0
    for t in sorted(set(scores), reverse=True):
        tp = sum(1 for s, y in zip(scores, labels) if s >= t and y == 1)
        fp = sum(1 for s, y in zip(scores, labels) if s >= t and y == 0)
        recall = tp / n_pos
        total += (recall - prev_recall) * (tp / (tp + fp))
        prev_recall = recall
    return total


def ap_of_ranked_prefix(ranked_labels):
    hits = 0
    acc = 0.0
    for i, y in enumerate(ranked_labels, start=1):
        if y:
            hits += 1
            acc += hits / i
    return acc / max(1, hits)


def welch_t(a, b, floor=1e-12):
    """Welch t of list ``a`` against list ``b`` with sample variances."""
    ma = sum(a) / len(a)
    mb = sum(b) / len(b)
    va = sum((x - ma) ** 2 for x in a) / (len(a) - 1)
    vb = sum((x - mb) ** 2 for x in b) / (len(b) - 1)
    return (ma - mb) / math.sqrt(max(va / len(a) + vb / len(b), floor))


def top_deg(control_rows, perturbed_rows, genes, k):
    scored = []
    for j, g in enumerate(genes):
        t = welch_t([r[j] for r in perturbed_rows], [r[j] for r in control_rows])
        scored.append((-abs(t), g))
    scored.sort()
    return [g for _, g in scored[:k]]
