import math

import numpy as np
import pytest

from graphrel.docgraph import ADJ, EdgeType, build_graph, partition
from graphrel.graph_lstm import (DirectionParams, GraphLstmParams, MissingCacheError, NodeState,
                                 backprop, encode, forward, unit_embed, unit_full)
from graphrel.gradcheck import random_document
from graphrel.numeric import finite_diff_grad, make_rng, relative_error

from conftest import make_doc
from oracles import bilstm, fine_to_coarse, lstm_cell, onehot_embed_params


def zero_full(l=2, e_w=3):
    U = {k: np.zeros((4 * l, l)) for k in EdgeType}
    return DirectionParams(np.zeros((4 * l, e_w)), np.zeros(4 * l), U)


def state(l, value=0.0):
    return NodeState(np.full(l, value), np.full(l, value))


def test_zero_weights_give_zero_state():
    s = unit_full(np.ones(3), [], zero_full())
    assert s.h.tolist() == [0.0, 0.0] and s.c.tolist() == [0.0, 0.0]


def test_scalar_unit_hand_value():
    # l = 1, all pre-activations 1: c = sig(1) tanh(1), h = sig(1) tanh(c)
    p = DirectionParams(np.zeros((4, 1)), np.ones(4), {k: np.zeros((4, 1)) for k in EdgeType})
    s = unit_full(np.zeros(1), [], p)
    sig1 = 1 / (1 + math.exp(-1))
    c = sig1 * math.tanh(1)
    assert s.c[0] == pytest.approx(c, abs=1e-15)
    assert s.h[0] == pytest.approx(sig1 * math.tanh(c), abs=1e-15)


def test_half_gates_value():
    # zero weights, predecessor cell 1: every gate is 0.5 and the candidate is 0
    p = DirectionParams(np.zeros((4, 1)), np.zeros(4), {k: np.zeros((4, 1)) for k in EdgeType})
    s = unit_full(np.zeros(1), [(NodeState(np.zeros(1), np.ones(1)), EdgeType.ADJACENCY)], p)
    assert s.c[0] == 0.5
    assert s.h[0] == pytest.approx(0.5 * math.tanh(0.5), abs=1e-15)
    assert s.h[0] == pytest.approx(0.231059, abs=1e-6)


def test_single_adjacency_pred_is_lstm_cell(rng):
    params = GraphLstmParams.initialize("full", 2, rng, word_dim=3, hidden_dim=4)
    p = params.direction("fwd")
    x, h0, c0 = rng.normal(size=3), rng.normal(size=4), rng.normal(size=4)
    s = unit_full(x, [(NodeState(h0, c0), EdgeType.ADJACENCY)], p)
    h, c = lstm_cell(x, h0, c0, p.W, p.U[EdgeType.ADJACENCY], p.b)
    assert np.allclose(s.h, h, atol=1e-14) and np.allclose(s.c, c, atol=1e-14)


def test_embed_unit_with_zero_edge_vector(rng):
    params = GraphLstmParams.initialize("embed", 2, rng, word_dim=3, hidden_dim=2, edge_dim=2,
                                        edge_labels=["nsubj"])
    p = params.direction("fwd")
    p.edge_emb[:] = 0.0
    x = rng.normal(size=3)
    prev = NodeState(rng.normal(size=2), rng.normal(size=2))
    s = unit_embed(x, [(prev, "nsubj")], p)
    a = p.W @ x + p.b
    sg = lambda v: 1 / (1 + np.exp(-v))  # noqa: E731
    c = sg(a[:2]) * np.tanh(a[4:6]) + sg(a[6:]) * prev.c
    assert np.allclose(s.c, c, atol=1e-15)
    assert np.allclose(s.h, sg(a[2:4]) * np.tanh(c), atol=1e-15)


def test_embed_unknown_label_uses_unk_row(rng):
    params = GraphLstmParams.initialize("embed", 2, rng, word_dim=2, hidden_dim=2, edge_dim=2,
                                        edge_labels=["nsubj"])
    p = params.direction("fwd")
    prev = NodeState(rng.normal(size=2), rng.normal(size=2))
    a = unit_embed(np.ones(2), [(prev, "never-seen")], p)
    b = unit_embed(np.ones(2), [(prev, "<unk>")], p)
    assert np.array_equal(a.h, b.h)


def test_onehot_embed_unit_matches_full(rng):
    full = GraphLstmParams.initialize("full", 2, rng, word_dim=3, hidden_dim=3)
    emb = onehot_embed_params(full, {"nsubj": EdgeType.SYNDEP, "adj": EdgeType.ADJACENCY})
    preds_f = [(NodeState(rng.normal(size=3), rng.normal(size=3)), EdgeType.SYNDEP),
               (NodeState(rng.normal(size=3), rng.normal(size=3)), EdgeType.ADJACENCY)]
    preds_e = [(s, f) for (s, _), f in zip(preds_f, ["nsubj", "adj"])]
    x = rng.normal(size=3)
    a = unit_full(x, preds_f, full.direction("bwd"))
    b = unit_embed(x, preds_e, emb.direction("bwd"))
    assert np.allclose(a.h, b.h, atol=1e-12, rtol=0)


def test_unknown_coarse_type_raises(rng):
    p = zero_full()
    del p.U[EdgeType.COREF]
    with pytest.raises(KeyError, match="coarse"):
        unit_full(np.ones(3), [(state(2), EdgeType.COREF)], p)
    with pytest.raises(ValueError):
        unit_full(np.ones(3), [(state(2), "no-such-type")], zero_full())


def test_predecessor_order_does_not_matter(rng):
    params = GraphLstmParams.initialize("full", 2, rng, word_dim=3, hidden_dim=4)
    p = params.direction("fwd")
    preds = [(NodeState(rng.normal(size=4), rng.normal(size=4)), k)
             for k in (EdgeType.SYNDEP, EdgeType.ADJACENCY, EdgeType.COREF)]
    x = rng.normal(size=3)
    a = unit_full(x, preds, p)
    b = unit_full(x, preds[::-1], p)
    assert np.allclose(a.h, b.h, atol=1e-14) and np.allclose(a.c, b.c, atol=1e-14)


def test_chain_graph_equals_bilstm():
    r = make_rng(9)
    doc = make_doc([f"w{k}" for k in range(6)])
    dags = partition(build_graph(doc, "chain"))
    params = GraphLstmParams.initialize("full", 6, r, word_dim=4, hidden_dim=5)
    ids = np.arange(6)
    enc = encode(dags, ids, params)
    ref = bilstm(params.tensors["word_emb"][ids], params)
    assert np.max(np.abs(enc - ref)) <= 1e-12


def test_single_token_encoding(rng):
    dags = partition(build_graph(make_doc(["x"]), "full"))
    params = GraphLstmParams.initialize("full", 1, rng, word_dim=2, hidden_dim=3)
    enc = encode(dags, [0], params)
    assert enc.shape == (1, 6)
    for d, sl in (("fwd", slice(0, 3)), ("bwd", slice(3, 6))):
        p = params.direction(d)
        h, _ = lstm_cell(params.tensors["word_emb"][0], np.zeros(3), np.zeros(3), p.W,
                         np.zeros((12, 3)), p.b)
        assert np.allclose(enc[0, sl], h, atol=1e-15)


@pytest.mark.parametrize("variant", ["full", "embed"])
def test_encodings_bounded_and_deterministic(variant):
    doc = random_document(make_rng(4), 8)
    dags = partition(build_graph(doc, "full"))
    runs = []
    for _ in range(2):
        params = GraphLstmParams.initialize(variant, 9, make_rng(5), word_dim=3, hidden_dim=4,
                                            edge_dim=2, edge_labels=["nsubj", "adj"])
        runs.append(encode(dags, np.arange(8) % 9, params))
    assert np.array_equal(runs[0], runs[1])
    assert np.all(np.abs(runs[0]) < 1)


def test_onehot_graph_encoding_matches_full(rng):
    doc = random_document(rng, 8)
    g = build_graph(doc, "full")
    dags = partition(g)
    full = GraphLstmParams.initialize("full", 9, rng, word_dim=3, hidden_dim=4)
    emb = onehot_embed_params(full, fine_to_coarse(g))
    ids = rng.integers(0, 9, size=8)
    assert np.max(np.abs(encode(dags, ids, full) - encode(dags, ids, emb))) <= 1e-12


def test_token_count_mismatch(rng):
    dags = partition(build_graph(make_doc(["a", "b"]), "chain"))
    params = GraphLstmParams.initialize("full", 2, rng, word_dim=2, hidden_dim=2)
    with pytest.raises(ValueError):
        encode(dags, [0], params)


def test_backprop_requires_cache(rng):
    params = GraphLstmParams.initialize("full", 2, rng, word_dim=2, hidden_dim=2)
    with pytest.raises(MissingCacheError):
        backprop(None, params, np.zeros((1, 4)))


@pytest.mark.parametrize("variant", ["full", "embed"])
def test_zero_upstream_gives_zero_gradients(variant, rng):
    doc = random_document(rng, 6)
    dags = partition(build_graph(doc, "full"))
    params = GraphLstmParams.initialize(variant, 9, rng, word_dim=3, hidden_dim=3, edge_dim=2,
                                        edge_labels=["nsubj", "adj", "dobj"])
    enc, cache = forward(dags, np.arange(6), params)
    g = backprop(cache, params, np.zeros_like(enc))
    assert all(not np.any(v) for v in g.dense.values())
    assert all(not np.any(v) for v in g.words.values())


@pytest.mark.parametrize("variant", ["full", "embed"])
def test_backprop_matches_finite_differences(variant):
    r = make_rng(21)
    doc = random_document(r, 7)
    g = build_graph(doc, "full")
    dags = partition(g)
    labels = sorted(fine_to_coarse(g))
    params = GraphLstmParams.initialize(variant, 7, r, word_dim=3, hidden_dim=3, edge_dim=2,
                                        edge_labels=labels)
    ids = np.arange(7)
    upstream = r.normal(size=(7, 6))
    _, cache = forward(dags, ids, params)
    grads = backprop(cache, params, upstream)
    for name, arr in params.tensors.items():
        def f(theta, name=name, arr=arr):
            saved = arr.copy()
            arr[...] = theta
            try:
                return float(np.sum(upstream * encode(dags, ids, params)))
            finally:
                arr[...] = saved
        numeric = finite_diff_grad(f, arr.copy())
        analytic = (grads.dense_word_grad(arr.shape) if name == "word_emb"
                    else grads.dense[name])
        assert np.max(relative_error(analytic, numeric)) < 1e-5, name


def test_unused_edge_embedding_row_has_zero_gradient(rng):
    doc = make_doc(["a", "b", "c"], [(1, 0, "nsubj"), (-1, 1, "root"), (1, 2, "dobj")])
    dags = partition(build_graph(doc, "full"))
    params = GraphLstmParams.initialize("embed", 3, rng, word_dim=2, hidden_dim=2, edge_dim=2,
                                        edge_labels=["nsubj", "dobj", "amod", "adj"])
    enc, cache = forward(dags, [0, 1, 2], params)
    grads = backprop(cache, params, np.ones_like(enc))
    idx = params.edge_index
    dE = grads.dense["edge_emb"]
    assert not np.any(dE[idx["amod"]]) and not np.any(dE[0])
    assert np.any(dE[idx["nsubj"]]) and np.any(dE[idx["adj"]])


def test_adjacency_label_constant():
    assert ADJ.coarse is EdgeType.ADJACENCY and ADJ.fine == "adj"
