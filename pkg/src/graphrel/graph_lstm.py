"""Bidirectional graph LSTM over a :class:`~graphrel.docgraph.DagPair`.

Two recurrent parametrizations are supported:

``full``
    one recurrent matrix per coarse edge type;
``embed``
    a single ``4l x l x d`` tensor per direction, contracted with the outer
    product of the predecessor state and a learned edge-label embedding.

Gate blocks are stacked in the order input, output, candidate, forget, so
``W`` is ``(4l, word_dim)``, ``b`` is ``(4l,)`` and each recurrent map
produces a ``4l`` vector.  Gradients are computed analytically by walking
each DAG in reverse processing order.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Hashable, Sequence

import numpy as np

from .docgraph import COARSE_TYPES, DagPair, EdgeLabel, EdgeType
from .numeric import init_uniform, sigmoid

UNK_EDGE = "<unk>"
DIRECTIONS = ("fwd", "bwd")


class Variant(str, enum.Enum):
    FULL = "full"
    EMBED = "embed"


class MissingCacheError(RuntimeError):
    pass


@dataclass
class NodeState:
    h: np.ndarray
    c: np.ndarray


@dataclass
class DirectionParams:
    """Read-only view of one direction's weights."""

    W: np.ndarray
    b: np.ndarray
    U: dict[EdgeType, np.ndarray] | np.ndarray
    edge_emb: np.ndarray | None = None
    edge_index: dict[str, int] = field(default_factory=dict)

    @property
    def hidden_dim(self) -> int:
        return self.b.shape[0] // 4


@dataclass
class GraphLstmParams:
    variant: Variant
    hidden_dim: int
    word_dim: int
    edge_dim: int
    edge_labels: list[str]
    tensors: dict[str, np.ndarray]

    @classmethod
    def initialize(cls, variant: Variant | str, vocab_size: int, rng: np.random.Generator, *,
                   word_dim: int = 100, hidden_dim: int = 150, edge_dim: int = 3,
                   edge_labels: Sequence[str] = (), lo: float = -1.0, hi: float = 1.0,
                   ) -> "GraphLstmParams":
        variant = Variant(variant)
        labels = [UNK_EDGE] + sorted(set(edge_labels) - {UNK_EDGE})
        l4 = 4 * hidden_dim
        t: dict[str, np.ndarray] = {"word_emb": init_uniform((vocab_size, word_dim), lo, hi, rng)}
        if variant is Variant.EMBED:
            t["edge_emb"] = init_uniform((len(labels), edge_dim), lo, hi, rng)
        for d in DIRECTIONS:
            t[f"{d}.W"] = init_uniform((l4, word_dim), lo, hi, rng)
            t[f"{d}.b"] = init_uniform(l4, lo, hi, rng)
            if variant is Variant.FULL:
                for k in COARSE_TYPES:
                    t[f"{d}.U.{k.value}"] = init_uniform((l4, hidden_dim), lo, hi, rng)
            else:
                t[f"{d}.U"] = init_uniform((l4, hidden_dim, edge_dim), lo, hi, rng)
        return cls(variant, hidden_dim, word_dim, edge_dim, labels, t)

    @property
    def edge_index(self) -> dict[str, int]:
        return {lab: k for k, lab in enumerate(self.edge_labels)}

    def direction(self, d: str) -> DirectionParams:
        t = self.tensors
        if self.variant is Variant.FULL:
            U = {k: t[f"{d}.U.{k.value}"] for k in COARSE_TYPES}
            return DirectionParams(t[f"{d}.W"], t[f"{d}.b"], U)
        return DirectionParams(t[f"{d}.W"], t[f"{d}.b"], t[f"{d}.U"],
                               t["edge_emb"], self.edge_index)


# --------------------------------------------------------------------------
# single unit


def _unit(z: np.ndarray, H: np.ndarray, C: np.ndarray, R: np.ndarray):
    """Core cell: ``z = W x + b``, predecessor states ``H``/``C`` and their
    recurrent terms ``R`` (one ``4l`` row per predecessor)."""
    l = z.shape[0] // 4
    s = R.sum(axis=0) if len(R) else 0.0
    a = z[: 3 * l] + (s[: 3 * l] if len(R) else 0.0)
    i = sigmoid(a[:l])
    o = sigmoid(a[l: 2 * l])
    g = np.tanh(a[2 * l:])
    c = i * g
    if len(R):
        F = sigmoid(z[3 * l:] + R[:, 3 * l:])
        c = c + (F * C).sum(axis=0)
    else:
        F = np.zeros((0, l))
    h = o * np.tanh(c)
    return h, c, i, o, g, F


def _embed_key(p: DirectionParams, fine: str) -> int:
    return p.edge_index.get(fine, 0)


def _recurrent_map(p: DirectionParams, key: Hashable) -> np.ndarray:
    """Effective ``4l x l`` matrix applied to a predecessor's hidden state."""
    if isinstance(p.U, dict):
        try:
            return p.U[key]
        except KeyError:
            raise KeyError(f"unknown coarse edge type {key!r}") from None
    e = p.edge_emb[key]
    return p.U @ e


def _stack_states(preds, l: int) -> tuple[np.ndarray, np.ndarray]:
    H = np.array([s.h for s, _ in preds], dtype=float).reshape(len(preds), l)
    C = np.array([s.c for s, _ in preds], dtype=float).reshape(len(preds), l)
    return H, C


def unit_full(x, preds: Sequence[tuple[NodeState, EdgeType | str]],
              p: DirectionParams) -> NodeState:
    if not isinstance(p.U, dict):
        raise TypeError("unit_full needs full-parametrization weights")
    z = p.W @ np.asarray(x, dtype=float) + p.b
    keys = [EdgeType(k) for _, k in preds]
    H, C = _stack_states(preds, p.hidden_dim)
    R = np.array([_recurrent_map(p, k) @ s.h for (s, _), k in zip(preds, keys)])
    h, c, *_ = _unit(z, H, C, R.reshape(len(preds), 4 * p.hidden_dim))
    return NodeState(h, c)


def unit_embed(x, preds: Sequence[tuple[NodeState, str]], p: DirectionParams) -> NodeState:
    if isinstance(p.U, dict) or p.edge_emb is None:
        raise TypeError("unit_embed needs edge-embedding weights")
    z = p.W @ np.asarray(x, dtype=float) + p.b
    H, C = _stack_states(preds, p.hidden_dim)
    Rs = []
    for s, fine in preds:
        e = p.edge_emb[_embed_key(p, fine)]
        # U x_T (h outer e)
        Rs.append(p.U.reshape(p.U.shape[0], -1) @ np.outer(s.h, e).reshape(-1))
    h, c, *_ = _unit(z, H, C, np.array(Rs).reshape(len(preds), 4 * p.hidden_dim))
    return NodeState(h, c)


# --------------------------------------------------------------------------
# whole-graph encoding


@dataclass
class _DirCache:
    order: list[int]
    preds: list[list[tuple[int, Hashable]]]
    maps: dict[Hashable, np.ndarray]
    h: np.ndarray
    c: np.ndarray
    gates: list[tuple] = field(default_factory=list)


@dataclass
class EncodeCache:
    token_ids: np.ndarray
    X: np.ndarray
    dirs: dict[str, _DirCache]


def _edge_key(params: GraphLstmParams, label: EdgeLabel, index: dict[str, int]) -> Hashable:
    if params.variant is Variant.FULL:
        return label.coarse
    return index.get(label.fine, 0)


def _run_direction(params: GraphLstmParams, d: str, side, X: np.ndarray,
                   reverse: bool) -> _DirCache:
    p = params.direction(d)
    n, l = X.shape[0], params.hidden_dim
    index = p.edge_index
    preds = [[(j, _edge_key(params, lab, index)) for j, lab in side[t]] for t in range(n)]
    maps = {}
    for ps in preds:
        for _, k in ps:
            if k not in maps:
                maps[k] = _recurrent_map(p, k)
    Z = X @ p.W.T + p.b
    h = np.zeros((n, l))
    c = np.zeros((n, l))
    order = list(range(n - 1, -1, -1)) if reverse else list(range(n))
    cache = _DirCache(order, preds, maps, h, c)
    gates: list = [None] * n
    for t in order:
        ps = preds[t]
        js = [j for j, _ in ps]
        R = np.array([maps[k] @ h[j] for j, k in ps]).reshape(len(ps), 4 * l)
        h[t], c[t], i, o, g, F = _unit(Z[t], h[js], c[js], R)
        gates[t] = (i, o, g, F)
    cache.gates = gates
    return cache


def forward(dags: DagPair, token_ids, params: GraphLstmParams) -> tuple[np.ndarray, EncodeCache]:
    """Encode every token; returns ``(N, 2l)`` encodings plus the activation cache."""
    ids = np.asarray(token_ids, dtype=np.int64)
    if len(ids) != len(dags):
        raise ValueError(f"{len(ids)} token ids for a graph of {len(dags)} nodes")
    X = params.tensors["word_emb"][ids]
    fwd = _run_direction(params, "fwd", dags.forward, X, reverse=False)
    bwd = _run_direction(params, "bwd", dags.backward, X, reverse=True)
    enc = np.concatenate([fwd.h, bwd.h], axis=1)
    return enc, EncodeCache(ids, X, {"fwd": fwd, "bwd": bwd})


def encode(dags: DagPair, token_ids, params: GraphLstmParams) -> np.ndarray:
    return forward(dags, token_ids, params)[0]


# --------------------------------------------------------------------------
# gradients


@dataclass
class Gradients:
    """Dense parameter gradients plus sparse word-embedding rows."""

    dense: dict[str, np.ndarray] = field(default_factory=dict)
    words: dict[int, np.ndarray] = field(default_factory=dict)

    def add(self, other: "Gradients", scale: float = 1.0) -> "Gradients":
        for k, v in other.dense.items():
            if k in self.dense:
                self.dense[k] = self.dense[k] + scale * v
            else:
                self.dense[k] = scale * v
        for k, v in other.words.items():
            self.words[k] = self.words[k] + scale * v if k in self.words else scale * v
        return self

    def scaled(self, k: float) -> "Gradients":
        return Gradients({n: k * v for n, v in self.dense.items()},
                         {n: k * v for n, v in self.words.items()})

    def dense_word_grad(self, shape) -> np.ndarray:
        out = np.zeros(shape)
        for k, v in self.words.items():
            out[k] += v
        return out

    def clip(self, bound: float) -> "Gradients":
        return Gradients({n: np.clip(v, -bound, bound) for n, v in self.dense.items()},
                         {n: np.clip(v, -bound, bound) for n, v in self.words.items()})


def _backprop_direction(params: GraphLstmParams, d: str, cache: _DirCache, X: np.ndarray,
                        dh: np.ndarray, grads: Gradients) -> np.ndarray:
    p = params.direction(d)
    n, l = dh.shape
    h, c = cache.h, cache.c
    dh = dh.copy()
    dc = np.zeros_like(c)
    dZ = np.zeros((n, 4 * l))
    G = {k: np.zeros((4 * l, l)) for k in cache.maps}
    for t in reversed(cache.order):
        i, o, g, F = cache.gates[t]
        ps = cache.preds[t]
        tc = np.tanh(c[t])
        do = dh[t] * tc
        dct = dc[t] + dh[t] * o * (1.0 - tc * tc)
        dz = dZ[t]
        dz[:l] = dct * g * i * (1.0 - i)
        dz[l: 2 * l] = do * o * (1.0 - o)
        dz[2 * l: 3 * l] = dct * i * (1.0 - g * g)
        if ps:
            js = [j for j, _ in ps]
            daF = dct * c[js] * F * (1.0 - F)
            dz[3 * l:] = daF.sum(axis=0)
            for (j, k), daf in zip(ps, daF):
                dr = np.concatenate([dz[: 3 * l], daf])
                G[k] += np.outer(dr, h[j])
                dh[j] += cache.maps[k].T @ dr
            np.add.at(dc, js, dct * F)
    W = p.W
    grads.dense[f"{d}.W"] = dZ.T @ X
    grads.dense[f"{d}.b"] = dZ.sum(axis=0)
    if params.variant is Variant.FULL:
        for k in COARSE_TYPES:
            grads.dense[f"{d}.U.{k.value}"] = G.get(k, np.zeros((4 * l, l)))
    else:
        E = params.tensors["edge_emb"]
        dU = np.zeros_like(p.U)
        dE = grads.dense.setdefault("edge_emb", np.zeros_like(E))
        for k, Gk in G.items():
            dU += Gk[:, :, None] * E[k][None, None, :]
            dE[k] += np.tensordot(p.U, Gk, axes=([0, 1], [0, 1]))
        grads.dense[f"{d}.U"] = dU
    return dZ @ W


def backprop(cache: EncodeCache | None, params: GraphLstmParams,
             d_enc: np.ndarray) -> Gradients:
    """Gradients of ``sum(d_enc * encodings)`` w.r.t. every parameter.

    The backward pass is unwound first, then the forward pass.
    """
    if cache is None:
        raise MissingCacheError("backprop needs the cache returned by forward()")
    l = params.hidden_dim
    d_enc = np.asarray(d_enc, dtype=float)
    grads = Gradients()
    if params.variant is Variant.EMBED:
        grads.dense["edge_emb"] = np.zeros_like(params.tensors["edge_emb"])
    dX = _backprop_direction(params, "bwd", cache.dirs["bwd"], cache.X, d_enc[:, l:], grads)
    dX += _backprop_direction(params, "fwd", cache.dirs["fwd"], cache.X, d_enc[:, :l], grads)
    for tok, row in zip(cache.token_ids.tolist(), dX):
        grads.words[tok] = grads.words[tok] + row if tok in grads.words else row.copy()
    return grads
