"""Toy two-sentence corpora with a planted lexical trigger.

Each document mentions one drug and one gene in its first sentence and one
mutation in its second.  Positive documents use a trigger verb in the first
sentence and a knowledge-base triple; negatives use a neutral verb and a
triple outside the knowledge base.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .docgraph import Document

FILLERS = ("the", "patients", "in", "study", "cells", "with", "and", "of", "a", "tumor",
           "cohort", "results", "after", "treatment", "clinical", "data", "trial", "samples")
TRIGGERS = ("sensitizes", "inhibits", "targets")
NEUTRAL = ("mentions", "describes", "lists")
SECOND_VERBS = ("was", "observed", "detected")
DRUGS = tuple(f"drug{k}" for k in range(6))
GENES = tuple(f"gene{k}" for k in range(6))
MUTATIONS = tuple(f"mut{k}" for k in range(6))


@dataclass
class SyntheticCorpus:
    docs: list[Document]
    labels: list[bool]
    kb: list[tuple[str, str, str]]


def _kb_split(rng: np.random.Generator):
    triples = [(d, g, m) for d in DRUGS for g in GENES for m in MUTATIONS]
    perm = rng.permutation(len(triples))
    half = len(triples) // 2
    return [triples[k] for k in perm[:half]], [triples[k] for k in perm[half:]]


def make_document(doc_id: str, triple: tuple[str, str, str], verb: str,
                  rng: np.random.Generator) -> Document:
    fill = lambda: [str(w) for w in rng.choice(FILLERS, size=rng.integers(0, 4))]  # noqa: E731
    drug, gene, mut = triple
    s0 = fill() + [drug, verb, gene] + fill()
    s1 = fill() + [mut] + fill() + [str(rng.choice(SECOND_VERBS))]
    tokens = [{"text": w, "sentence": 0} for w in s0] + [{"text": w, "sentence": 1} for w in s1]
    n0 = len(s0)
    v0 = s0.index(verb)
    v1 = n0 + len(s1) - 1
    deps = []
    for i in range(n0):
        deps.append({"head": -1 if i == v0 else v0, "mod": i,
                     "label": "root" if i == v0 else ("nsubj" if i < v0 else "dobj")})
    for i in range(n0, n0 + len(s1)):
        deps.append({"head": -1 if i == v1 else v1, "mod": i,
                     "label": "root" if i == v1 else ("nsubjpass" if tokens[i]["text"] == mut
                                                     else "dep")})
    ents = [
        {"id": "T1", "type": "drug", "start": s0.index(drug), "end": s0.index(drug),
         "canonical": drug.upper()},
        {"id": "T2", "type": "gene", "start": s0.index(gene), "end": s0.index(gene),
         "canonical": gene.upper()},
        {"id": "T3", "type": "mutation", "start": n0 + s1.index(mut), "end": n0 + s1.index(mut),
         "canonical": mut.upper()},
    ]
    return Document.from_dict({"doc_id": doc_id, "tokens": tokens, "deps": deps,
                               "entities": ents})


def synthetic_corpus(n_docs: int, rng: np.random.Generator,
                     positive_rate: float = 0.5) -> SyntheticCorpus:
    kb, outside = _kb_split(rng)
    docs, labels = [], []
    for k in range(n_docs):
        pos = bool(rng.random() < positive_rate)
        pool = kb if pos else outside
        triple = pool[int(rng.integers(len(pool)))]
        verb = str(rng.choice(TRIGGERS if pos else NEUTRAL))
        docs.append(make_document(f"doc{k:04d}", triple, verb, rng))
        labels.append(pos)
    return SyntheticCorpus(docs, labels, [tuple(c.upper() for c in t) for t in kb])
