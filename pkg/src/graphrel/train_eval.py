"""SGD training with early stopping, multi-task alternation, cross-validation
and McNemar's test."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy import stats

from .docgraph import EdgePolicy
from .graph_lstm import GraphLstmParams, Gradients, Variant
from .numeric import make_rng
from .relation_model import (RelationInstance, RelationModel, TaskHead, build_vocab,
                             loss_and_grad, predict_proba)

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    batch_size: int = 8
    learning_rate: float = 0.02
    max_epochs: int = 30
    hidden_dim: int = 150
    edge_embed_dim: int = 3
    word_embed_dim: int = 100
    patience: int = 3
    dev_fraction: float = 0.1
    seed: int = 0
    variant: str = Variant.FULL.value
    edge_policy: str = EdgePolicy.FULL_GRAPH.value
    k_sentences: int = 3
    init_range: float = 1.0
    freeze_embeddings: bool = False
    grad_clip: float | None = None

    def __post_init__(self):
        self.variant = Variant(self.variant).value
        self.edge_policy = EdgePolicy(self.edge_policy).value
        for name in ("batch_size", "learning_rate", "max_epochs", "hidden_dim",
                     "edge_embed_dim", "word_embed_dim", "patience", "k_sentences",
                     "init_range"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0 <= self.dev_fraction < 1:
            raise ValueError("dev_fraction must be in [0, 1)")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ValueError("grad_clip must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass
class Metrics:
    accuracy: float
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    tn: int
    fn: int

    @classmethod
    def from_predictions(cls, probs: Sequence[float], gold: Sequence[bool],
                         threshold: float = 0.5) -> "Metrics":
        if len(probs) == 0:
            raise ValueError("cannot evaluate an empty instance set")
        pred = np.asarray(probs) >= threshold
        gold = np.asarray(gold, dtype=bool)
        tp = int(np.sum(pred & gold))
        fp = int(np.sum(pred & ~gold))
        tn = int(np.sum(~pred & ~gold))
        fn = int(np.sum(~pred & gold))
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        return cls((tp + tn) / len(pred), precision, recall, f1, tp, fp, tn, fn)

    def as_row(self) -> dict:
        return asdict(self)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    dev_accuracy: float | None


@dataclass
class TrainResult:
    model: RelationModel
    config: TrainConfig
    history: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False
    dev_docs: frozenset[str] = frozenset()


def derive_seed(seed: int, *salt: int) -> int:
    return int(np.random.SeedSequence([seed, *salt]).generate_state(1)[0])


def _task_roles(name: str, insts: Sequence[RelationInstance]) -> tuple[str, ...]:
    roles = {tuple(m.entity_type for m in i.mentions) for i in insts}
    if len(roles) != 1:
        raise ValueError(f"task {name!r} mixes argument signatures {sorted(roles)}")
    return roles.pop()


def init_model(train_insts: Sequence[RelationInstance], tasks: Mapping[str, tuple[str, ...]],
               cfg: TrainConfig, rng: np.random.Generator,
               embeddings_path: str | Path | None = None) -> RelationModel:
    vocab = build_vocab(i.graph for i in train_insts)
    labels = sorted({e.label.fine for i in train_insts for e in i.graph.edges})
    r = cfg.init_range
    encoder = GraphLstmParams.initialize(
        cfg.variant, len(vocab), rng, word_dim=cfg.word_embed_dim, hidden_dim=cfg.hidden_dim,
        edge_dim=cfg.edge_embed_dim, edge_labels=labels, lo=-r, hi=r)
    heads = {name: TaskHead.initialize(name, roles, 2 * cfg.hidden_dim, rng, -r, r)
             for name, roles in tasks.items()}
    if embeddings_path is not None:
        from .formats import load_embeddings
        encoder.tensors["word_emb"] = load_embeddings(
            embeddings_path, vocab, cfg.word_embed_dim, rng, base=encoder.tensors["word_emb"])
    return RelationModel(encoder, heads, vocab)


def sgd_step(model: RelationModel, grads: Gradients, lr: float,
             freeze_embeddings: bool = False, clip: float | None = None) -> None:
    if clip is not None:
        grads = grads.clip(clip)
    params = model.parameters()
    for name, g in grads.dense.items():
        params[name] -= lr * g
    if not freeze_embeddings:
        emb = params["word_emb"]
        for k, row in grads.words.items():
            emb[k] -= lr * row


def evaluate(model: RelationModel, instances: Sequence[RelationInstance],
             threshold: float = 0.5) -> Metrics:
    if not instances:
        raise ValueError("cannot evaluate an empty instance set")
    probs = predict_proba(model, instances)
    return Metrics.from_predictions(probs, [i.label for i in instances], threshold)


def split_dev(instances: Sequence[RelationInstance], fraction: float,
              rng: np.random.Generator) -> frozenset[str]:
    """Hold out about ``fraction`` of the documents (at least one when possible)."""
    docs = sorted({i.doc_id for i in instances})
    if fraction <= 0 or len(docs) < 2:
        return frozenset()
    n_dev = min(len(docs) - 1, max(1, int(round(fraction * len(docs)))))
    perm = rng.permutation(len(docs))
    return frozenset(docs[k] for k in perm[:n_dev])


def train(tasks: Mapping[str, Sequence[RelationInstance]], cfg: TrainConfig | None = None,
          embeddings_path: str | Path | None = None) -> TrainResult:
    """Train a shared encoder with one logistic head per task.

    The first task in ``tasks`` is the main task: its held-out documents drive
    early stopping, and auxiliary tasks are subsampled down to its size.
    Each epoch visits the tasks in order, one full shuffled pass apiece.
    """
    cfg = cfg or TrainConfig()
    if not tasks:
        raise ValueError("no tasks to train")
    for name, insts in tasks.items():
        if not insts:
            raise ValueError(f"task {name!r} has no instances")
    rng = make_rng(cfg.seed)
    order = list(tasks)
    main = order[0]
    dev_docs = split_dev(tasks[main], cfg.dev_fraction, rng)
    train_sets = {t: [i for i in tasks[t] if i.doc_id not in dev_docs] for t in order}
    dev = [i for i in tasks[main] if i.doc_id in dev_docs]
    for t in order[1:]:
        if len(train_sets[t]) > len(train_sets[main]):
            keep = np.sort(rng.choice(len(train_sets[t]), len(train_sets[main]), replace=False))
            train_sets[t] = [train_sets[t][k] for k in keep]
    roles = {t: _task_roles(t, tasks[t]) for t in order}
    all_train = [i for t in order for i in train_sets[t]]
    model = init_model(all_train, roles, cfg, rng, embeddings_path)
    result = TrainResult(model, cfg, dev_docs=dev_docs)

    params = model.parameters()
    best_acc, best_state, since_best = -1.0, None, 0
    for epoch in range(1, cfg.max_epochs + 1):
        total, count = 0.0, 0
        for t in order:
            data = train_sets[t]
            perm = rng.permutation(len(data))
            for s in range(0, len(data), cfg.batch_size):
                batch = [data[k] for k in perm[s: s + cfg.batch_size]]
                loss, grads = loss_and_grad(batch, model)
                sgd_step(model, grads, cfg.learning_rate, cfg.freeze_embeddings, cfg.grad_clip)
                total += loss * len(batch)
                count += len(batch)
        dev_acc = evaluate(model, dev).accuracy if dev else None
        result.history.append(EpochRecord(epoch, total / count, dev_acc))
        logger.info("epoch %d loss %.4f dev %s", epoch, total / count, dev_acc)
        if dev_acc is None:
            result.best_epoch = epoch
            continue
        if dev_acc > best_acc:
            best_acc, since_best, result.best_epoch = dev_acc, 0, epoch
            best_state = {k: v.copy() for k, v in params.items()}
        else:
            since_best += 1
            if since_best >= cfg.patience:
                result.stopped_early = epoch < cfg.max_epochs
                break
    if best_state is not None:
        for k, v in best_state.items():
            params[k][...] = v
    return result


@dataclass
class FoldResult:
    fold: int
    metrics: Metrics
    train_docs: frozenset[str]
    test_docs: frozenset[str]
    probs: list[float]
    gold: list[bool]


@dataclass
class CrossvalResult:
    folds: list[FoldResult]
    mean: Metrics


def mean_metrics(ms: Sequence[Metrics]) -> Metrics:
    avg = lambda name: float(np.mean([getattr(m, name) for m in ms]))  # noqa: E731
    total = lambda name: int(sum(getattr(m, name) for m in ms))  # noqa: E731
    return Metrics(avg("accuracy"), avg("precision"), avg("recall"), avg("f1"),
                   total("tp"), total("fp"), total("tn"), total("fn"))


def crossval(instances: Sequence[RelationInstance], folds: Sequence[int],
             cfg: TrainConfig | None = None, task_order: Sequence[str] | None = None,
             embeddings_path: str | Path | None = None,
             threshold: float = 0.5) -> CrossvalResult:
    """Train one model per fold and test it on that fold's main-task instances.

    A document's instances never straddle train and test: everything from a
    test document is withheld from training, whatever task it belongs to.
    """
    cfg = cfg or TrainConfig()
    if len(folds) != len(instances):
        raise ValueError("one fold id per instance is required")
    order = list(task_order) if task_order else sorted({i.task for i in instances})
    main = order[0]
    results = []
    for f in sorted(set(folds)):
        test = [i for i, k in zip(instances, folds) if k == f and i.task == main]
        if not test:
            continue
        test_docs = frozenset(i.doc_id for i in test)
        train_part = [i for i in instances if i.doc_id not in test_docs]
        train_docs = frozenset(i.doc_id for i in train_part)
        assert not (train_docs & test_docs), "test documents leaked into training"
        tasks = {t: [i for i in train_part if i.task == t] for t in order}
        tasks = {t: v for t, v in tasks.items() if v}
        if main not in tasks:
            raise ValueError(f"fold {f}: no training instances for {main!r}")
        fold_cfg = TrainConfig.from_dict({**cfg.to_dict(), "seed": derive_seed(cfg.seed, f)})
        model = train(tasks, fold_cfg, embeddings_path).model
        if len({i.label for i in test}) < 2:
            logger.warning("fold %d test set contains a single class", f)
        probs = predict_proba(model, test)
        gold = [i.label for i in test]
        results.append(FoldResult(f, Metrics.from_predictions(probs, gold, threshold),
                                  train_docs, test_docs, probs, gold))
    if not results:
        raise ValueError("no fold has test instances")
    return CrossvalResult(results, mean_metrics([r.metrics for r in results]))


def mcnemar(preds_a: Sequence[bool], preds_b: Sequence[bool],
            gold: Sequence[bool]) -> tuple[float, float]:
    """Continuity-corrected McNemar chi-square statistic and its p-value (1 df)."""
    a, b_, y = (np.asarray(v, dtype=bool) for v in (preds_a, preds_b, gold))
    if not (a.shape == b_.shape == y.shape):
        raise ValueError("prediction vectors must be aligned")
    ok_a, ok_b = a == y, b_ == y
    b = int(np.sum(ok_a & ~ok_b))
    c = int(np.sum(~ok_a & ok_b))
    if b + c == 0:
        return 0.0, 1.0
    stat = (abs(b - c) - 1) ** 2 / (b + c)
    return float(stat), float(stats.chi2.sf(stat, df=1))
