"""Entity-tuple classification on top of the graph LSTM encoder."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import graph_lstm
from .docgraph import DagPair, DocumentGraph, EntityMention, partition
from .graph_lstm import GraphLstmParams, Gradients
from .numeric import init_uniform, sigmoid

UNK_TOKEN = "<unk>"


class DivergenceError(FloatingPointError):
    pass


@dataclass(frozen=True)
class RelationInstance:
    doc_id: str
    graph: DocumentGraph
    mentions: tuple[EntityMention, ...]
    task: str
    label: bool
    first_sentence: int = 0
    last_sentence: int = 0

    @property
    def arity(self) -> int:
        return len(self.mentions)

    @property
    def canonical(self) -> tuple[str, ...]:
        return tuple(m.canonical.casefold() for m in self.mentions)


@dataclass
class TaskHead:
    name: str
    roles: tuple[str, ...]  # entity type of each argument, in order
    w: np.ndarray
    b: np.ndarray  # shape (1,) so it can be updated in place

    @property
    def arity(self) -> int:
        return len(self.roles)

    @classmethod
    def initialize(cls, name: str, roles: Sequence[str], enc_dim: int,
                   rng: np.random.Generator, lo: float = -1.0, hi: float = 1.0) -> "TaskHead":
        roles = tuple(roles)
        return cls(name, roles, init_uniform(len(roles) * enc_dim, lo, hi, rng),
                   init_uniform(1, lo, hi, rng))


@dataclass
class RelationModel:
    encoder: GraphLstmParams
    heads: dict[str, TaskHead]
    vocab: dict[str, int]

    def parameters(self) -> dict[str, np.ndarray]:
        out = dict(self.encoder.tensors)
        for name, head in self.heads.items():
            out[f"head.{name}.w"] = head.w
            out[f"head.{name}.b"] = head.b
        return out

    def token_ids(self, graph: DocumentGraph) -> np.ndarray:
        unk = self.vocab[UNK_TOKEN]
        return np.array([self.vocab.get(t.text.lower(), unk) for t in graph.tokens],
                        dtype=np.int64)

    def head(self, task: str) -> TaskHead:
        try:
            return self.heads[task]
        except KeyError:
            raise KeyError(f"model has no head for task {task!r}") from None


def build_vocab(graphs: Iterable[DocumentGraph]) -> dict[str, int]:
    words = sorted({t.text.lower() for g in graphs for t in g.tokens} - {UNK_TOKEN})
    return {UNK_TOKEN: 0, **{w: k + 1 for k, w in enumerate(words)}}


def entity_repr(enc: np.ndarray, m: EntityMention) -> np.ndarray:
    if m.end < m.start:
        raise ValueError(f"mention {m.id} has an empty span")
    if m.start < 0 or m.end >= len(enc):
        raise IndexError(f"mention {m.id} span outside the encoded text")
    return enc[m.start: m.end + 1].mean(axis=0)


def _features(instance: RelationInstance, enc: np.ndarray, head: TaskHead) -> np.ndarray:
    if head.arity != instance.arity:
        raise ValueError(f"head {head.name!r} takes {head.arity} entities, "
                         f"instance has {instance.arity}")
    return np.concatenate([entity_repr(enc, m) for m in instance.mentions])


def score(instance: RelationInstance, enc: np.ndarray, head: TaskHead) -> float:
    x = _features(instance, enc, head)
    return float(sigmoid(np.array([head.w @ x + head.b[0]]))[0])


def _prepare(instance: RelationInstance, model: RelationModel) -> tuple[DagPair, np.ndarray]:
    return partition(instance.graph), model.token_ids(instance.graph)


def predict_proba(model: RelationModel, instances: Sequence[RelationInstance]) -> list[float]:
    out = []
    for inst in instances:
        dags, ids = _prepare(inst, model)
        enc = graph_lstm.encode(dags, ids, model.encoder)
        out.append(score(inst, enc, model.head(inst.task)))
    return out


def _bce(z: float, y: float) -> float:
    # log(1 + exp(-|z|)) + max(z, 0) - y z
    return float(np.log1p(np.exp(-abs(z))) + max(z, 0.0) - y * z)


def loss_and_grad(batch: Sequence[RelationInstance], model: RelationModel,
                  ) -> tuple[float, Gradients]:
    """Mean binary cross-entropy of a single-task batch and its gradient."""
    if not batch:
        raise ValueError("empty batch")
    tasks = {inst.task for inst in batch}
    if len(tasks) != 1:
        raise ValueError(f"batch mixes tasks {sorted(tasks)}")
    head = model.head(batch[0].task)
    total = 0.0
    grads = Gradients()
    dw = np.zeros_like(head.w)
    db = np.zeros_like(head.b)
    for inst in batch:
        dags, ids = _prepare(inst, model)
        enc, cache = graph_lstm.forward(dags, ids, model.encoder)
        x = _features(inst, enc, head)
        z = float(head.w @ x + head.b[0])
        y = 1.0 if inst.label else 0.0
        total += _bce(z, y)
        dz = float(sigmoid(np.array([z]))[0]) - y
        dw += dz * x
        db += dz
        dx = dz * head.w
        d_enc = np.zeros_like(enc)
        width = enc.shape[1]
        for k, m in enumerate(inst.mentions):
            d_enc[m.start: m.end + 1] += dx[k * width: (k + 1) * width] / (m.end - m.start + 1)
        grads.add(graph_lstm.backprop(cache, model.encoder, d_enc))
    n = len(batch)
    loss = total / n
    if not np.isfinite(loss):
        raise DivergenceError(f"non-finite loss on task {head.name!r}")
    grads = grads.scaled(1.0 / n)
    grads.dense[f"head.{head.name}.w"] = dw / n
    grads.dense[f"head.{head.name}.b"] = db / n
    return loss, grads
