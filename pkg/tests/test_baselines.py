import math

import numpy as np
import pytest
from scipy.stats import chisquare

from ctxbench.baselines import (
    CSRGraph,
    EmbeddingTable,
    HeadConfig,
    LinearHead,
    Node2VecConfig,
    label_propagation,
    load_embeddings,
    node2vec_walks,
    predict_scores,
    store_embeddings,
    train_linear_head,
    train_skipgram,
)
from ctxbench.baselines.head import design_matrix, logistic_grad, logistic_loss
from ctxbench.baselines.node2vec import WalkCorpus, pair_loss, pair_loss_grad, sample_transitions, sgns_step
from ctxbench.datamodel import ContextGraph, ContextSample
from ctxbench.errors import (
    CorruptFile,
    DimMismatch,
    EmptyCorpus,
    MissingEmbedding,
    SeedNodeMissing,
    UnknownContext,
)
from ctxbench.splits import SplitSpec


def graph(edges, nodes=None, membership=None):
    if nodes is None:
        nodes = sorted({n for e in edges for n in e[:2]})
    es = tuple((min(u, v), max(u, v), e[2] if len(e) > 2 else None) for e in edges for u, v in [e[:2]])
    return ContextGraph(tuple(nodes), es, membership or {})


# ---------------------------------------------------------------- label propagation


def test_path_middle_node_adopts_unanimous_label():
    g = graph([("a", "b"), ("b", "c")], membership={"ctx": frozenset("abc")})
    st = label_propagation(g, "ctx", {"a": 1, "c": 1})
    assert st.inferred == {"b": 1}
    assert st.scores["b"] == 1.0


def test_isolated_node_stays_unlabeled():
    g = graph([("a", "b")], nodes=["a", "b", "z"])
    st = label_propagation(g, None, {"a": 1})
    assert "z" in st.unlabeled
    assert st.scores["z"] == 0.5


def test_star_center_majority():
    g = graph([("c", "x"), ("c", "y"), ("c", "z")])
    st = label_propagation(g, None, {"x": 1, "y": 1, "z": 0})
    assert st.inferred["c"] == 1
    assert st.scores["c"] == pytest.approx(2 / 3, abs=1e-15)


def test_tie_leaves_node_unlabeled():
    g = graph([("a", "b"), ("b", "c")])
    st = label_propagation(g, None, {"a": 1, "c": 0})
    assert st.unlabeled == ["b"]
    assert st.scores["b"] == 0.5


def test_propagation_spreads_along_chain_and_terminates():
    nodes = [f"n{i}" for i in range(30)]
    g = graph(list(zip(nodes, nodes[1:])), nodes=nodes)
    st = label_propagation(g, None, {"n0": 1})
    assert st.rounds == 29 and st.rounds <= len(nodes)
    assert set(st.inferred) == set(nodes[1:])
    assert not set(st.fixed) & set(st.inferred)
    assert all(0.0 <= s <= 1.0 for s in st.scores.values())


def test_max_rounds_caps_iterations():
    nodes = [f"n{i}" for i in range(10)]
    g = graph(list(zip(nodes, nodes[1:])), nodes=nodes)
    st = label_propagation(g, None, {"n0": 1}, max_rounds=2)
    assert st.rounds == 2 and set(st.inferred) == {"n1", "n2"}


def test_labelprop_context_restricts_graph():
    g = graph([("a", "b"), ("b", "c")], membership={"ctx": frozenset({"a", "c"})})
    st = label_propagation(g, "ctx", {"a": 1})
    assert set(st.scores) == {"a", "c"}
    assert st.scores["c"] == 0.5


def test_labelprop_errors():
    g = graph([("a", "b")], membership={"ctx": frozenset({"a"})})
    with pytest.raises(UnknownContext):
        label_propagation(g, "nope", {"a": 1})
    with pytest.raises(SeedNodeMissing):
        label_propagation(g, "ctx", {"b": 1})


# ---------------------------------------------------------------- walks and alias tables


def five_node_graph():
    return graph([("a", "b", 1.0), ("a", "c", 2.0), ("a", "d", 3.0), ("b", "c", 1.5), ("c", "d", 0.5),
                  ("d", "e", 4.0)])


def test_first_order_alias_matches_edge_weights():
    g = five_node_graph()
    csr = CSRGraph.from_graph(g)
    draws = sample_transitions(csr, None, "a", 100_000, seed=3)
    nbrs = sorted(g.adjacency["a"])
    idx = [csr.nodes.index(n) for n in nbrs]
    counts = np.array([(draws == i).sum() for i in idx])
    w = np.array([g.adjacency["a"][n] for n in nbrs])
    assert counts.sum() == 100_000
    assert chisquare(counts, w / w.sum() * 100_000).pvalue > 0.01


@pytest.mark.parametrize("p,q", [(1.0, 1.0), (0.5, 2.0), (4.0, 0.25)])
def test_second_order_transitions_match_exact_distribution(p, q):
    g = five_node_graph()
    adj = g.adjacency
    csr = CSRGraph.from_graph(g)
    prev, cur = "b", "a"
    nbrs = sorted(adj[cur])
    bias = [1 / p if x == prev else (1.0 if x in adj[prev] else 1 / q) for x in nbrs]
    target = np.array([adj[cur][x] * b for x, b in zip(nbrs, bias)])
    draws = sample_transitions(csr, prev, cur, 100_000, p=p, q=q, seed=11)
    counts = np.array([(draws == csr.nodes.index(x)).sum() for x in nbrs])
    assert counts.sum() == 100_000
    assert chisquare(counts, target / target.sum() * 100_000).pvalue > 0.01


def test_unbiased_walk_on_path_is_uniform():
    nodes = [f"v{i}" for i in range(5)]
    csr = CSRGraph.from_graph(graph(list(zip(nodes, nodes[1:])), nodes=nodes))
    draws = sample_transitions(csr, "v1", "v2", 100_000, seed=5)
    counts = np.array([(draws == 1).sum(), (draws == 3).sum()])
    assert counts.sum() == 100_000
    assert chisquare(counts).pvalue > 0.01


def test_walks_follow_edges_and_have_full_length():
    rng = np.random.default_rng(0)
    nodes = [f"n{i}" for i in range(40)]
    edges = {tuple(sorted(rng.choice(40, 2, replace=False))) for _ in range(120)}
    g = graph([(nodes[a], nodes[b]) for a, b in edges], nodes=nodes + ["lonely"])
    cfg = Node2VecConfig(walks_per_node=3, walk_length=15, p=0.7, q=1.8, seed=2)
    walks = node2vec_walks(g, cfg)
    assert len(walks) == 3 * len(g.nodes)
    adj = g.adjacency
    for walk in walks:
        if walk[0] == "lonely":
            assert walk == ["lonely"]
            continue
        if adj[walk[0]]:
            assert len(walk) == 15
        assert all(b in adj[a] for a, b in zip(walk, walk[1:]))
    starts = sorted(w[0] for w in walks)
    assert starts == sorted(list(g.nodes) * 3)


def test_walks_are_seeded():
    g = five_node_graph()
    cfg = Node2VecConfig(walks_per_node=4, walk_length=10, seed=9)
    assert list(node2vec_walks(g, cfg)) == list(node2vec_walks(g, cfg))
    other = Node2VecConfig(walks_per_node=4, walk_length=10, seed=10)
    assert list(node2vec_walks(g, cfg)) != list(node2vec_walks(g, other))


def test_walks_on_context_subgraph_stay_inside():
    g = graph([("a", "b"), ("b", "c"), ("c", "d")], membership={"x": frozenset("abc")})
    walks = node2vec_walks(g, Node2VecConfig(walks_per_node=5, walk_length=8), context="x")
    assert {n for w in walks for n in w} <= {"a", "b", "c"}
    with pytest.raises(UnknownContext):
        node2vec_walks(g, Node2VecConfig(), context="y")


def test_config_validation():
    with pytest.raises(ValueError):
        Node2VecConfig(p=0)
    with pytest.raises(ValueError):
        Node2VecConfig(dim=0)


# ---------------------------------------------------------------- skip-gram


def rel_err(a, b):
    return np.max(np.abs(a - b) / np.maximum(1e-8, np.maximum(np.abs(a), np.abs(b))))


def test_pair_loss_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    eps = 1e-6
    for _ in range(100):
        d, k = rng.integers(2, 9), rng.integers(1, 6)
        h = rng.normal(size=d)
        out = rng.normal(size=(k + 1, d))
        labels = np.zeros(k + 1)
        labels[0] = 1
        g_in, g_out = pair_loss_grad(h, out, labels)
        num_in = np.array([(pair_loss(h + eps * e, out, labels) - pair_loss(h - eps * e, out, labels)) / (2 * eps)
                           for e in np.eye(d)])
        num_out = np.zeros_like(out)
        for i in range(k + 1):
            for j in range(d):
                delta = np.zeros_like(out)
                delta[i, j] = eps
                num_out[i, j] = (pair_loss(h, out + delta, labels) - pair_loss(h, out - delta, labels)) / (2 * eps)
        assert rel_err(g_in, num_in) < 1e-5
        assert rel_err(g_out, num_out) < 1e-5


def test_kernel_step_is_sgd_on_reference_gradient():
    rng = np.random.default_rng(1)
    for _ in range(20):
        d = 8
        w_in = rng.normal(size=(6, d)).astype(np.float32)
        w_out = rng.normal(size=(6, d)).astype(np.float32)
        targets = rng.choice(6, size=4, replace=False).astype(np.int64)
        labels = np.array([1, 0, 0, 0], dtype=np.float32)
        lr = 0.05
        h = 2
        g_in, g_out = pair_loss_grad(w_in[h].astype(float), w_out[targets].astype(float), labels.astype(float))
        expect_in = w_in[h] - lr * g_in
        expect_out = w_out[targets] - lr * g_out
        ref_loss = pair_loss(w_in[h].astype(float), w_out[targets].astype(float), labels.astype(float))
        loss = sgns_step(w_in, w_out, h, targets, labels, lr)
        assert loss == pytest.approx(ref_loss, rel=1e-5)
        np.testing.assert_allclose(w_in[h], expect_in, rtol=1e-4, atol=1e-5)
        np.testing.assert_allclose(w_out[targets], expect_out, rtol=1e-4, atol=1e-5)


def barbell_walks(seed=0):
    left = [f"L{i}" for i in range(6)]
    right = [f"R{i}" for i in range(6)]
    edges = [(a, b) for grp in (left, right) for i, a in enumerate(grp) for b in grp[i + 1:]]
    g = graph(edges, nodes=left + right)
    cfg = Node2VecConfig(dim=16, walks_per_node=20, walk_length=20, window=4, epochs=3, seed=seed)
    return g, cfg, left, right


def cosine(u, v):
    return float(u @ v / (np.linalg.norm(u) * np.linalg.norm(v)))


def test_disjoint_cliques_separate_in_embedding_space():
    g, cfg, left, right = barbell_walks()
    table = train_skipgram(node2vec_walks(g, cfg), cfg)
    assert table.matrix.shape == (12, 16)
    intra = [cosine(table.vector(a), table.vector(b)) for grp in (left, right)
             for i, a in enumerate(grp) for b in grp[i + 1:]]
    inter = [cosine(table.vector(a), table.vector(b)) for a in left for b in right]
    assert np.mean(intra) > np.mean(inter)


def test_skipgram_bit_reproducible_and_loss_decreases():
    g, cfg, *_ = barbell_walks(seed=4)
    walks = node2vec_walks(g, cfg)
    hist = []
    a = train_skipgram(walks, cfg, loss_history=hist)
    b = train_skipgram(walks, cfg)
    assert np.array_equal(a.matrix, b.matrix)
    assert len(hist) == 3 and hist[-1] < hist[0]


def test_per_pair_negatives_mode_trains():
    g, cfg, left, right = barbell_walks()
    cfg = Node2VecConfig(**{**cfg.__dict__, "shared_negatives": False})
    hist = []
    table = train_skipgram(node2vec_walks(g, cfg), cfg, loss_history=hist)
    assert np.all(np.isfinite(table.matrix)) and hist[-1] < hist[0]


def test_skipgram_accepts_plain_sequences_and_rejects_empty():
    cfg = Node2VecConfig(dim=4, window=2)
    table = train_skipgram([["a", "b", "c"], ["c", "b"]], cfg)
    assert table.ids == ("a", "b", "c") and table.dim == 4
    with pytest.raises(EmptyCorpus):
        train_skipgram([], cfg)
    with pytest.raises(EmptyCorpus):
        train_skipgram(WalkCorpus.from_sequences([[]]), cfg)


# ---------------------------------------------------------------- logistic head


def test_head_gradient_matches_finite_differences():
    rng = np.random.default_rng(2)
    eps = 1e-6
    for _ in range(100):
        n, d = rng.integers(3, 12), rng.integers(2, 8)
        x = rng.normal(size=(n, d))
        y = rng.integers(0, 2, size=n).astype(float)
        w, b, l2 = rng.normal(size=d), float(rng.normal()), float(rng.uniform(0, 0.1))
        gw, gb = logistic_grad(w, b, x, y, l2)
        num_w = np.array([(logistic_loss(w + eps * e, b, x, y, l2) - logistic_loss(w - eps * e, b, x, y, l2))
                          / (2 * eps) for e in np.eye(d)])
        num_b = (logistic_loss(w, b + eps, x, y, l2) - logistic_loss(w, b - eps, x, y, l2)) / (2 * eps)
        assert rel_err(gw, num_w) < 1e-5
        assert rel_err(np.array([gb]), np.array([num_b])) < 1e-5


def separable_problem():
    rng = np.random.default_rng(3)
    ents = [f"e{i}" for i in range(40)]
    labels = {e: int(i % 2) for i, e in enumerate(ents)}
    vecs = {e: np.array([1.0 if labels[e] else -1.0, *rng.normal(scale=0.1, size=3)]) for e in ents}
    emb = EmbeddingTable.from_vectors(vecs, provenance="toy")
    samples = [ContextSample(e, c, labels[e]) for e in ents for c in ("c1", "c2")]
    split = SplitSpec("cold", 0, frozenset(ents[:30]), frozenset(ents[30:35]), frozenset(ents[35:]))
    return emb, samples, split


def test_head_fits_separable_data():
    emb, samples, split = separable_problem()
    hist = []
    head = train_linear_head(emb, samples, split, ["c1", "c2"], loss_history=hist)
    train = [s for s in samples if s.entity in split.train]
    preds = predict_scores(head, emb, [s.key for s in train]).scores()
    acc = np.mean([(preds[s.key] >= 0.5) == bool(s.label) for s in train])
    assert acc == 1.0
    assert hist[-1] < hist[0]
    assert head.weights.shape == (4 + 2,)


def test_zero_epoch_head_predicts_sigmoid_of_bias():
    emb, samples, split = separable_problem()
    head = train_linear_head(emb, samples, split, ["c1", "c2"], HeadConfig(epochs=0))
    scores = predict_scores(head, emb, [s.key for s in samples]).scores()
    assert set(scores.values()) == {1 / (1 + math.exp(-head.bias))}


def test_hand_built_head_closed_form():
    emb = EmbeddingTable.from_vectors({"p": [2.0, 0.0]})
    head = LinearHead(np.array([1.0, 0.0, 0.0]), 0.0, ("ctx",), 2)
    preds = predict_scores(head, emb, [("p", "ctx"), ("p", "ctx")])
    assert len(preds.rows) == 1
    assert preds.rows[0].score == pytest.approx(0.8807970779778823, abs=1e-12)
    zero = LinearHead(np.zeros(3), 0.0, ("ctx",), 2)
    assert predict_scores(zero, emb, [("p", "ctx")]).rows[0].score == 0.5


def test_head_errors():
    emb, samples, split = separable_problem()
    head = train_linear_head(emb, samples, split, ["c1", "c2"], HeadConfig(epochs=5))
    with pytest.raises(MissingEmbedding):
        predict_scores(head, emb, [("ghost", "c1")])
    with pytest.raises(UnknownContext):
        predict_scores(head, emb, [("e0", "c9")])
    with pytest.raises(MissingEmbedding):
        train_linear_head(EmbeddingTable.from_vectors({"e0": [0, 0, 0, 0]}), samples, split, ["c1", "c2"])


def test_design_matrix_one_hot_block():
    emb = EmbeddingTable.from_vectors({"a": [1.0, 2.0]})
    x = design_matrix(emb, [("a", "k2")], ["k1", "k2", "k3"])
    assert x.tolist() == [[1.0, 2.0, 0.0, 1.0, 0.0]]


# ---------------------------------------------------------------- embedding store


@pytest.mark.parametrize("suffix", [".csv", ".npz"])
def test_embedding_round_trip(tmp_path, suffix):
    rng = np.random.default_rng(0)
    table = EmbeddingTable(5, tuple(f"g{i}" for i in range(7)), rng.normal(size=(7, 5)), "node2vec v1")
    back = load_embeddings(store_embeddings(table, tmp_path / f"emb{suffix}"))
    assert back == table
    assert back.provenance == "node2vec v1"


def test_mixed_dims_rejected(tmp_path):
    with pytest.raises(DimMismatch):
        EmbeddingTable.from_vectors({"a": [1.0, 2.0], "b": [1.0]})
    path = tmp_path / "bad.csv"
    path.write_text('#{"count": 2, "dim": 2, "provenance": ""}\na,1,2\nb,1\n')
    with pytest.raises(DimMismatch):
        load_embeddings(path)


def test_corrupt_files(tmp_path):
    path = tmp_path / "x.csv"
    for text in ["", "a,1,2\n", '#{"dim": 2}\n', '#{"count": 1, "dim": 2}\na,1,zz\n',
                 '#{"count": 3, "dim": 1}\na,1\n', '#{"count": 1, "dim": 1}\na,nan\n']:
        path.write_text(text)
        with pytest.raises(CorruptFile):
            load_embeddings(path)


def test_external_table_feeds_head(tmp_path):
    path = tmp_path / "foundation.csv"
    ents = [f"e{i}" for i in range(40)]
    rows = "\n".join(f"{e},{1.0 if i % 2 else -1.0},0.5" for i, e in enumerate(ents))
    path.write_text('#{"count": 40, "dim": 2, "provenance": "external-fm"}\n' + rows + "\n")
    emb = load_embeddings(path)
    samples = [ContextSample(e, "c1", i % 2) for i, e in enumerate(ents)]
    split = SplitSpec("cold", 0, frozenset(ents[:30]), frozenset(ents[30:35]), frozenset(ents[35:]))
    head = train_linear_head(emb, samples, split, ["c1"])
    preds = predict_scores(head, emb, [s.key for s in samples[35:]]).scores()
    assert all((preds[s.key] > 0.5) == bool(s.label) for s in samples[35:])
