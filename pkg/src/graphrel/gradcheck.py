"""Finite-difference verification of the analytic gradients on random instances."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .docgraph import Document, build_graph
from .graph_lstm import GraphLstmParams, Variant
from .numeric import make_rng, relative_error
from .relation_model import RelationInstance, RelationModel, TaskHead, loss_and_grad

FINE_DEPS = ("nsubj", "dobj", "amod", "prep_of", "det")


def random_document(rng: np.random.Generator, n_tokens: int, vocab_size: int = 8,
                    doc_id: str = "rand") -> Document:
    """Random 1-2 sentence document with a random tree per sentence, a coref
    link and three single-token mentions."""
    n_sent = 2 if n_tokens >= 4 and rng.random() < 0.6 else 1
    cut = int(rng.integers(2, n_tokens - 1)) if n_sent == 2 else n_tokens
    sent = [0 if i < cut else 1 for i in range(n_tokens)]
    tokens = [{"text": f"w{int(rng.integers(vocab_size))}", "sentence": s} for s in sent]
    deps = []
    for lo, hi in ((0, cut), (cut, n_tokens)):
        if lo >= hi:
            continue
        idx = list(range(lo, hi))
        root = int(rng.choice(idx))
        deps.append({"head": -1, "mod": root, "label": "root"})
        placed = [root]
        for i in rng.permutation([i for i in idx if i != root]).tolist():
            deps.append({"head": int(rng.choice(placed)), "mod": i,
                         "label": str(rng.choice(FINE_DEPS))})
            placed.append(i)
    coref = []
    if n_tokens >= 3:
        a, b = rng.choice(n_tokens, size=2, replace=False).tolist()
        coref.append({"src": a, "dst": b, "label": "coref"})
    pos = sorted(rng.choice(n_tokens, size=min(3, n_tokens), replace=False).tolist())
    ents = [{"id": f"T{k}", "type": f"t{k}", "start": p, "end": p, "canonical": f"e{k}"}
            for k, p in enumerate(pos)]
    return Document.from_dict({"doc_id": doc_id, "tokens": tokens, "deps": deps,
                               "entities": ents, "coref": coref})


def random_model(variant: Variant | str, rng: np.random.Generator, roles, *, vocab_size=9,
                 word_dim=3, hidden_dim=4, edge_dim=2) -> RelationModel:
    labels = list(FINE_DEPS) + ["adj", "nextsent", "coref"]
    enc = GraphLstmParams.initialize(variant, vocab_size, rng, word_dim=word_dim,
                                     hidden_dim=hidden_dim, edge_dim=edge_dim,
                                     edge_labels=labels)
    head = TaskHead.initialize("task", roles, 2 * hidden_dim, rng)
    vocab = {"<unk>": 0, **{f"w{k}": k + 1 for k in range(vocab_size - 1)}}
    return RelationModel(enc, {"task": head}, vocab)


@dataclass
class GradcheckReport:
    max_rel_error: float = 0.0
    coordinates: int = 0
    instances: int = 0
    per_tensor: dict[str, float] = field(default_factory=dict)
    errors: list[float] = field(default_factory=list)

    def passed(self, tol: float = 1e-4) -> bool:
        return self.coordinates > 0 and self.max_rel_error < tol


def check_instance(model: RelationModel, instances: list[RelationInstance],
                   rng: np.random.Generator, coords_per_tensor: int = 6, eps: float = 1e-5,
                   report: GradcheckReport | None = None) -> GradcheckReport:
    """Compare analytic and central-difference gradients of the batch loss on
    randomly sampled coordinates of every parameter tensor."""
    report = report or GradcheckReport()
    _, grads = loss_and_grad(instances, model)
    params = model.parameters()
    for name in sorted(params):
        arr = params[name]
        if name == "word_emb":
            analytic = grads.dense_word_grad(arr.shape)
        else:
            analytic = grads.dense.get(name, np.zeros_like(arr))
        flat = arr.reshape(-1)
        picks = rng.choice(flat.size, size=min(coords_per_tensor, flat.size), replace=False)
        for k in picks.tolist():
            old = flat[k]
            flat[k] = old + eps
            fp = loss_and_grad(instances, model)[0]
            flat[k] = old - eps
            fm = loss_and_grad(instances, model)[0]
            flat[k] = old
            numeric = (fp - fm) / (2 * eps)
            err = float(relative_error(analytic.reshape(-1)[k], numeric))
            report.errors.append(err)
            report.per_tensor[name] = max(report.per_tensor.get(name, 0.0), err)
            report.max_rel_error = max(report.max_rel_error, err)
            report.coordinates += 1
    report.instances += len(instances)
    return report


def run_gradcheck(seed: int = 0, n_instances: int = 20,
                  variants=(Variant.FULL, Variant.EMBED), coords_per_tensor: int = 6,
                  ) -> dict[str, GradcheckReport]:
    """Random 3-8 token instances, both parametrizations, all edge kinds."""
    rng = make_rng(seed)
    out = {}
    for variant in variants:
        variant = Variant(variant)
        report = GradcheckReport()
        for k in range(n_instances):
            doc = random_document(rng, int(rng.integers(3, 9)), doc_id=f"rand{k}")
            graph = build_graph(doc, "full")
            roles = [m.entity_type for m in graph.entities]
            model = random_model(variant, rng, roles)
            inst = RelationInstance(doc.doc_id, graph, graph.entities, "task",
                                    bool(rng.random() < 0.5))
            check_instance(model, [inst], rng, coords_per_tensor, report=report)
        out[variant.value] = report
    return out
