"""node2vec: biased second-order random walks and skip-gram with negative sampling.

Walks draw each candidate step from a per-node alias table over edge weights
and accept it with probability proportional to the return / in-out bias, which
samples the exact second-order transition while keeping preprocessing linear
in the graph size. Training is a numba kernel; with ``workers=1`` it is
bit-reproducible for a given seed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np
from numba import njit, prange

from ..datamodel import ContextGraph
from ..errors import EmptyCorpus, UnknownContext
from .embeddings import EmbeddingTable

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)


@dataclass(frozen=True)
class Node2VecConfig:
    dim: int = 128
    walks_per_node: int = 10
    walk_length: int = 80
    window: int = 10
    p: float = 1.0
    q: float = 1.0
    negatives: int = 5
    epochs: int = 1
    lr_start: float = 0.025
    lr_end: float = 0.0001
    seed: int = 0
    # one negative draw per centre token, reused across its window
    shared_negatives: bool = True
    workers: int = 1
    per_context: bool = False

    def __post_init__(self):
        for name in ("dim", "walks_per_node", "walk_length", "window", "negatives", "workers"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if not (self.p > 0 and self.q > 0):
            raise ValueError("p and q must be positive")
        if not self.lr_start > 0 or self.lr_end < 0:
            raise ValueError("learning rates must be positive")


# ---------------------------------------------------------------------------
# CSR graph and alias tables


@dataclass(frozen=True)
class CSRGraph:
    nodes: tuple[str, ...]
    indptr: np.ndarray
    indices: np.ndarray
    weights: np.ndarray

    @classmethod
    def from_graph(cls, g: ContextGraph) -> "CSRGraph":
        index = {n: i for i, n in enumerate(g.nodes)}
        m = len(g.edges)
        src = np.empty(2 * m, dtype=np.int64)
        dst = np.empty(2 * m, dtype=np.int64)
        w = np.empty(2 * m, dtype=np.float64)
        for k, (u, v, weight) in enumerate(g.edges):
            a, b = index[u], index[v]
            src[2 * k], dst[2 * k] = a, b
            src[2 * k + 1], dst[2 * k + 1] = b, a
            w[2 * k] = w[2 * k + 1] = 1.0 if weight is None else weight
        order = np.lexsort((dst, src))
        src, dst, w = src[order], dst[order], w[order]
        indptr = np.zeros(len(g.nodes) + 1, dtype=np.int64)
        np.add.at(indptr, src + 1, 1)
        return cls(tuple(g.nodes), np.cumsum(indptr), dst, w)


@njit(cache=True)
def _build_alias(indptr, weights):
    """Vose alias tables for every CSR row; ``alias`` stores row-local offsets."""
    n = indptr.shape[0] - 1
    prob = np.ones(weights.shape[0], np.float64)
    alias = np.zeros(weights.shape[0], np.int64)
    small = np.empty(weights.shape[0], np.int64)
    large = np.empty(weights.shape[0], np.int64)
    for v in range(n):
        a = indptr[v]
        k = indptr[v + 1] - a
        if k == 0:
            continue
        total = 0.0
        for i in range(k):
            total += weights[a + i]
        ns = 0
        nl = 0
        for i in range(k):
            prob[a + i] = weights[a + i] * k / total
            if prob[a + i] < 1.0:
                small[a + ns] = i
                ns += 1
            else:
                large[a + nl] = i
                nl += 1
        while ns > 0 and nl > 0:
            ns -= 1
            s = small[a + ns]
            nl -= 1
            l = large[a + nl]
            alias[a + s] = l
            prob[a + l] = prob[a + l] + prob[a + s] - 1.0
            if prob[a + l] < 1.0:
                small[a + ns] = l
                ns += 1
            else:
                large[a + nl] = l
                nl += 1
        while nl > 0:
            nl -= 1
            prob[a + large[a + nl]] = 1.0
        while ns > 0:
            ns -= 1
            prob[a + small[a + ns]] = 1.0
    return prob, alias


def build_alias_tables(csr: CSRGraph) -> tuple[np.ndarray, np.ndarray]:
    return _build_alias(csr.indptr, csr.weights)


@njit(inline="always")
def _splitmix(state):
    state[0] += _GOLDEN
    z = state[0]
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@njit(inline="always")
def _uniform(state):
    return (_splitmix(state) >> np.uint64(11)) * (1.0 / 9007199254740992.0)


@njit(inline="always")
def _seed_state(state, seed, stream):
    state[0] = np.uint64(seed) * _GOLDEN + np.uint64(stream)
    _splitmix(state)


@njit(inline="always")
def _alias_draw(state, a, k, prob, alias):
    i = np.int64(_uniform(state) * k)
    if i >= k:
        i = k - 1
    if _uniform(state) < prob[a + i]:
        return i
    return alias[a + i]


@njit(inline="always")
def _has_edge(indptr, indices, u, x):
    lo = indptr[u]
    hi = indptr[u + 1]
    while lo < hi:
        mid = (lo + hi) >> 1
        if indices[mid] < x:
            lo = mid + 1
        else:
            hi = mid
    return lo < indptr[u + 1] and indices[lo] == x


@njit(inline="always")
def _step(state, indptr, indices, prob, alias, prev, cur, inv_p, inv_q, max_bias):
    a = indptr[cur]
    k = indptr[cur + 1] - a
    while True:
        x = indices[a + _alias_draw(state, a, k, prob, alias)]
        if x == prev:
            b = inv_p
        elif _has_edge(indptr, indices, prev, x):
            b = 1.0
        else:
            b = inv_q
        if _uniform(state) * max_bias < b:
            return x


@njit(cache=True)
def _simulate(indptr, indices, prob, alias, starts, walk_length, inv_p, inv_q, seed, out, lengths):
    max_bias = max(inv_p, 1.0, inv_q)
    state = np.empty(1, np.uint64)
    for w in range(starts.shape[0]):
        _seed_state(state, seed, w)
        v = starts[w]
        out[w, 0] = v
        n = 1
        a = indptr[v]
        k = indptr[v + 1] - a
        if k > 0 and walk_length > 1:
            prev = v
            cur = indices[a + _alias_draw(state, a, k, prob, alias)]
            out[w, 1] = cur
            n = 2
            while n < walk_length:
                nxt = _step(state, indptr, indices, prob, alias, prev, cur, inv_p, inv_q, max_bias)
                out[w, n] = nxt
                prev = cur
                cur = nxt
                n += 1
        lengths[w] = n


@njit(cache=True)
def _sample_transitions(indptr, indices, prob, alias, prev, cur, inv_p, inv_q, n, seed):
    state = np.empty(1, np.uint64)
    _seed_state(state, seed, 0)
    out = np.empty(n, np.int64)
    max_bias = max(inv_p, 1.0, inv_q)
    for i in range(n):
        if prev < 0:
            a = indptr[cur]
            out[i] = indices[a + _alias_draw(state, a, indptr[cur + 1] - a, prob, alias)]
        else:
            out[i] = _step(state, indptr, indices, prob, alias, prev, cur, inv_p, inv_q, max_bias)
    return out


def sample_transitions(csr: CSRGraph, prev: Optional[str], cur: str, n: int, p: float = 1.0, q: float = 1.0,
                       seed: int = 0) -> np.ndarray:
    """Draw ``n`` next-node indices from ``cur`` having arrived from ``prev``.

    ``prev=None`` samples the first-order (weight-proportional) step.
    """
    index = {v: i for i, v in enumerate(csr.nodes)}
    prob, alias = build_alias_tables(csr)
    return _sample_transitions(csr.indptr, csr.indices, prob, alias, -1 if prev is None else index[prev],
                               index[cur], 1.0 / p, 1.0 / q, n, seed)


# ---------------------------------------------------------------------------
# walks


@dataclass(frozen=True)
class WalkCorpus:
    """Walks stored as flat node-index tokens with per-walk offsets."""

    nodes: tuple[str, ...]
    tokens: np.ndarray
    offsets: np.ndarray

    def __len__(self) -> int:
        return len(self.offsets) - 1

    def __getitem__(self, i: int) -> list[str]:
        a, b = self.offsets[i], self.offsets[i + 1]
        return [self.nodes[t] for t in self.tokens[a:b]]

    def __iter__(self) -> Iterator[list[str]]:
        for i in range(len(self)):
            yield self[i]

    @classmethod
    def from_sequences(cls, walks: Iterable[Sequence[str]]) -> "WalkCorpus":
        walks = [list(w) for w in walks if len(w)]
        nodes = tuple(sorted({n for w in walks for n in w}))
        index = {n: i for i, n in enumerate(nodes)}
        tokens = np.fromiter((index[n] for w in walks for n in w), dtype=np.int32)
        offsets = np.concatenate(([0], np.cumsum([len(w) for w in walks]))).astype(np.int64)
        return cls(nodes, tokens, offsets)


def _graph_for(g: ContextGraph, context: Optional[str]) -> ContextGraph:
    if context is None:
        return g
    if context not in g.membership:
        raise UnknownContext(f"graph has no context {context!r}", context=context)
    return g.subgraph(context)


def node2vec_walks(g: ContextGraph | CSRGraph, cfg: Node2VecConfig, context: Optional[str] = None) -> WalkCorpus:
    """``walks_per_node`` biased walks of ``walk_length`` from every node.

    Start nodes are visited in a fresh seeded order each round; isolated nodes
    yield singleton walks.
    """
    csr = g if isinstance(g, CSRGraph) else CSRGraph.from_graph(_graph_for(g, context))
    n = len(csr.nodes)
    prob, alias = build_alias_tables(csr)
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    starts = np.concatenate([rng.permutation(n) for _ in range(cfg.walks_per_node)]).astype(np.int64)
    out = np.empty((len(starts), cfg.walk_length), dtype=np.int32)
    lengths = np.empty(len(starts), dtype=np.int64)
    _simulate(csr.indptr, csr.indices, prob, alias, starts, cfg.walk_length, 1.0 / cfg.p, 1.0 / cfg.q,
              cfg.seed, out, lengths)
    if np.all(lengths == cfg.walk_length):
        tokens = out.reshape(-1)
    else:
        tokens = np.concatenate([out[i, :lengths[i]] for i in range(len(starts))]) if len(starts) else out.reshape(-1)
    offsets = np.concatenate(([0], np.cumsum(lengths))).astype(np.int64)
    return WalkCorpus(csr.nodes, tokens, offsets)


# ---------------------------------------------------------------------------
# skip-gram with negative sampling


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def pair_loss(center_in: np.ndarray, outputs: np.ndarray, labels: np.ndarray) -> float:
    """Negative-sampling loss of one input vector against target/noise output vectors."""
    f = outputs @ center_in
    signs = np.where(labels == 1, 1.0, -1.0)
    return float(np.sum(np.logaddexp(0.0, -signs * f)))


def pair_loss_grad(center_in: np.ndarray, outputs: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of :func:`pair_loss` with respect to the input and each output vector."""
    f = outputs @ center_in
    coeff = sigmoid(f) - labels
    return coeff @ outputs, np.outer(coeff, center_in)


@njit(inline="always")
def _sgns_update(w_in, w_out, h, targets, labels, m, lr, grad):
    """One SGD step of the negative-sampling loss for input row ``h``.

    ``targets[:m]`` are output rows; ``labels`` mark the true context (1) and
    noise (0).
    """
    d = w_in.shape[1]
    for j in range(d):
        grad[0, j] = 0.0
    for s in range(m):
        t = targets[s]
        f = np.float32(0.0)
        for j in range(d):
            f += w_in[h, j] * w_out[t, j]
        # sigma is saturated in float32 beyond |f| = 30; also keeps exp finite under fastmath
        if f > 30.0:
            g = (labels[s] - np.float32(1.0)) * lr
        elif f < -30.0:
            g = labels[s] * lr
        else:
            g = (labels[s] - np.float32(1.0) / (np.float32(1.0) + np.exp(-f))) * lr
        for j in range(d):
            grad[0, j] += g * w_out[t, j]
        for j in range(d):
            w_out[t, j] += g * w_in[h, j]
    for j in range(d):
        w_in[h, j] += grad[0, j]


@njit(inline="always")
def _sgns_loss(w_in, w_out, h, targets, labels, m):
    loss = 0.0
    for s in range(m):
        t = targets[s]
        f = 0.0
        for j in range(w_in.shape[1]):
            f += w_in[h, j] * w_out[t, j]
        z = -f if labels[s] > 0 else f
        loss += max(z, 0.0) + np.log1p(np.exp(-abs(z)))
    return loss


@njit(cache=True, fastmath=True)
def sgns_step(w_in, w_out, h, targets, labels, lr):
    """Apply one kernel update in place and return the loss before it."""
    grad = np.empty((1, w_in.shape[1]), np.float32)
    loss = _sgns_loss(w_in, w_out, h, targets, labels, targets.shape[0])
    _sgns_update(w_in, w_out, h, targets, labels, targets.shape[0], np.float32(lr), grad)
    return loss


@njit(inline="always")
def _draw_negatives(state, center, targets, nprob, nalias, neg):
    targets[0] = center
    m = 1
    v = np.uint64(nprob.shape[0])
    for _ in range(neg):
        r = _splitmix(state)
        k = np.int64(((r >> np.uint64(32)) * v) >> np.uint64(32))
        u = np.float32((r & np.uint64(0xFFFFFFFF)) * (1.0 / 4294967296.0))
        t = k if u < nprob[k] else nalias[k]
        if t != center:
            targets[m] = t
            m += 1
    return m


@njit(cache=True, fastmath=True)
def _sgns_epoch(tokens, offsets, w_in, w_out, nprob, nalias, window, neg, lr_start, lr_end, done0, total,
                seed, shared, track):
    state = np.empty(1, np.uint64)
    _seed_state(state, seed, 0)
    d = w_in.shape[1]
    grad = np.empty((1, d), np.float32)
    targets = np.empty(neg + 1, np.int64)
    labels = np.zeros(neg + 1, np.float32)
    labels[0] = 1.0
    done = done0
    loss = 0.0
    pairs = 0
    for wi in range(offsets.shape[0] - 1):
        a = offsets[wi]
        b = offsets[wi + 1]
        for pos in range(a, b):
            lr = np.float32(lr_start - (lr_start - lr_end) * done / total)
            done += 1
            center = tokens[pos]
            m = _draw_negatives(state, center, targets, nprob, nalias, neg)
            shrink = np.int64(((_splitmix(state) >> np.uint64(32)) * np.uint64(window)) >> np.uint64(32))
            lo = max(a, pos - window + shrink)
            hi = min(b, pos + window - shrink + 1)
            if shared and not track:
                for cpos in range(lo, hi):
                    if cpos != pos:
                        _sgns_update(w_in, w_out, tokens[cpos], targets, labels, m, lr, grad)
                continue
            for cpos in range(lo, hi):
                if cpos == pos:
                    continue
                if not shared:
                    m = _draw_negatives(state, center, targets, nprob, nalias, neg)
                if track:
                    loss += _sgns_loss(w_in, w_out, tokens[cpos], targets, labels, m)
                _sgns_update(w_in, w_out, tokens[cpos], targets, labels, m, lr, grad)
                pairs += 1
    return loss, pairs


@njit(cache=True, parallel=True, fastmath=True)
def _sgns_epoch_parallel(tokens, offsets, w_in, w_out, nprob, nalias, window, neg, lr_start, lr_end, done0,
                         total, seed):
    # lock-free updates shared between threads; not reproducible
    d = w_in.shape[1]
    n_walks = offsets.shape[0] - 1
    for wi in prange(n_walks):
        state = np.empty(1, np.uint64)
        _seed_state(state, seed, wi)
        grad = np.empty((1, d), np.float32)
        targets = np.empty(neg + 1, np.int64)
        labels = np.zeros(neg + 1, np.float32)
        labels[0] = 1.0
        a = offsets[wi]
        b = offsets[wi + 1]
        for pos in range(a, b):
            lr = np.float32(lr_start - (lr_start - lr_end) * (done0 + pos) / total)
            center = tokens[pos]
            m = _draw_negatives(state, center, targets, nprob, nalias, neg)
            shrink = np.int64(((_splitmix(state) >> np.uint64(32)) * np.uint64(window)) >> np.uint64(32))
            lo = max(a, pos - window + shrink)
            hi = min(b, pos + window - shrink + 1)
            for cpos in range(lo, hi):
                if cpos != pos:
                    _sgns_update(w_in, w_out, tokens[cpos], targets, labels, m, lr, grad)


def noise_alias(tokens: np.ndarray, vocab_size: int, power: float = 0.75) -> tuple[np.ndarray, np.ndarray]:
    counts = np.bincount(tokens, minlength=vocab_size).astype(np.float64) ** power
    prob, alias = _build_alias(np.array([0, vocab_size], dtype=np.int64), counts)
    return prob.astype(np.float32), alias


def train_skipgram(walks: WalkCorpus | Iterable[Sequence[str]], cfg: Node2VecConfig,
                   loss_history: Optional[list] = None) -> EmbeddingTable:
    """Skip-gram with negative sampling over a walk corpus.

    Negatives follow the unigram distribution raised to 0.75; the learning rate
    decays linearly from ``lr_start`` to ``lr_end`` across all epochs. When
    ``loss_history`` is given, the mean pair loss of every epoch is appended.
    """
    corpus = walks if isinstance(walks, WalkCorpus) else WalkCorpus.from_sequences(walks)
    if len(corpus.tokens) == 0:
        raise EmptyCorpus("skip-gram needs at least one non-empty walk")
    tokens = corpus.tokens.astype(np.int32, copy=False)
    v = len(corpus.nodes)
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    w_in = ((rng.random((v, cfg.dim)) - 0.5) / cfg.dim).astype(np.float32)
    w_out = np.zeros((v, cfg.dim), dtype=np.float32)
    nprob, nalias = noise_alias(tokens, v)
    total = float(len(tokens) * max(cfg.epochs, 1))
    for epoch in range(cfg.epochs):
        seed = cfg.seed * 1_000_003 + epoch
        done0 = float(epoch * len(tokens))
        if cfg.workers > 1:
            import numba
            numba.set_num_threads(min(cfg.workers, numba.config.NUMBA_NUM_THREADS))
            _sgns_epoch_parallel(tokens, corpus.offsets, w_in, w_out, nprob, nalias, cfg.window, cfg.negatives,
                                 cfg.lr_start, cfg.lr_end, done0, total, seed)
            continue
        loss, pairs = _sgns_epoch(tokens, corpus.offsets, w_in, w_out, nprob, nalias, cfg.window, cfg.negatives,
                                  cfg.lr_start, cfg.lr_end, done0, total, seed, cfg.shared_negatives,
                                  loss_history is not None)
        if loss_history is not None:
            loss_history.append(loss / max(pairs, 1))
    return EmbeddingTable(cfg.dim, corpus.nodes, w_in.astype(np.float64),
                          f"node2vec d={cfg.dim} p={cfg.p} q={cfg.q} seed={cfg.seed}")


def corpus_loss(corpus: WalkCorpus, table: EmbeddingTable, out_vectors: np.ndarray, window: int) -> float:
    """Mean positive-pair loss over a corpus; used to compare training states."""
    index = {n: i for i, n in enumerate(table.ids)}
    emb = table.matrix
    total, count = 0.0, 0
    for walk in corpus:
        idx = [index[n] for n in walk]
        for i, c in enumerate(idx):
            for j in range(max(0, i - window), min(len(idx), i + window + 1)):
                if j != i:
                    total += float(np.logaddexp(0.0, -emb[idx[j]] @ out_vectors[c]))
                    count += 1
    return total / max(count, 1)


def node2vec_embed(g: ContextGraph, cfg: Node2VecConfig = Node2VecConfig()) -> EmbeddingTable:
    """Walks plus skip-gram. ``cfg.per_context`` trains one model per context subgraph
    and averages an entity's vectors over the contexts it belongs to."""
    if not cfg.per_context:
        return train_skipgram(node2vec_walks(g, cfg), cfg)
    sums: dict[str, np.ndarray] = {}
    counts: dict[str, int] = {}
    for ctx in g.contexts:
        table = train_skipgram(node2vec_walks(g, cfg, ctx), cfg)
        for node, vec in zip(table.ids, table.matrix):
            sums[node] = sums.get(node, 0.0) + vec
            counts[node] = counts.get(node, 0) + 1
    ids = tuple(n for n in g.nodes if n in sums)
    matrix = np.vstack([sums[n] / counts[n] for n in ids])
    return EmbeddingTable(cfg.dim, ids, matrix, f"node2vec per-context d={cfg.dim} seed={cfg.seed}")
