"""Distantly supervised dataset construction.

Candidates are role-consistent entity-mention tuples that fit inside ``K``
consecutive sentences and survive the minimal-span filter.  A knowledge base
of canonical tuples labels them; negatives are subsampled to a ratio of the
positives and whole documents are dealt into cross-validation folds.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from itertools import product
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .docgraph import Document, DocumentGraph, EntityMention

logger = logging.getLogger(__name__)


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class Role:
    name: str
    entity_type: str

    @classmethod
    def parse(cls, spec: str) -> "Role":
        # "name:type" or just "type"
        name, _, etype = spec.partition(":")
        return cls(name, etype or name)


@dataclass(frozen=True)
class KnowledgeBase:
    relation: str
    roles: tuple[Role, ...]
    tuples: frozenset[tuple[str, ...]]

    @property
    def arity(self) -> int:
        return len(self.roles)

    @property
    def entity_types(self) -> tuple[str, ...]:
        return tuple(r.entity_type for r in self.roles)

    def __contains__(self, canonical: Sequence[str]) -> bool:
        return tuple(c.casefold() for c in canonical) in self.tuples

    @classmethod
    def from_rows(cls, relation: str, roles: Sequence[str | Role],
                  rows: Iterable[Sequence[str]]) -> "KnowledgeBase":
        roles = tuple(r if isinstance(r, Role) else Role.parse(r) for r in roles)
        if len({r.name for r in roles}) != len(roles):
            raise DatasetError(f"duplicate role names in {[r.name for r in roles]}")
        tuples = set()
        for row in rows:
            if len(row) != len(roles):
                raise DatasetError(f"KB row {tuple(row)} does not have arity {len(roles)}")
            tuples.add(tuple(c.strip().casefold() for c in row))
        return cls(relation, roles, frozenset(tuples))

    @classmethod
    def load(cls, path: str | Path) -> "KnowledgeBase":
        """Read a tab-separated KB: header ``relation<TAB>role...``, then one tuple per line."""
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if not lines:
            raise DatasetError(f"{path}: empty knowledge base file")
        header = lines[0].split("\t")
        if len(header) < 2:
            raise DatasetError(f"{path}:1: header needs a relation name and at least one role")
        rows = []
        for lineno, line in enumerate(lines[1:], start=2):
            if not line.strip():
                continue
            row = line.split("\t")
            if len(row) != len(header) - 1:
                raise DatasetError(f"{path}:{lineno}: expected {len(header) - 1} fields")
            rows.append(row)
        return cls.from_rows(header[0], header[1:], rows)


@dataclass(frozen=True)
class Candidate:
    doc_id: str
    mentions: tuple[EntityMention, ...]
    mention_index: tuple[int, ...]  # positions in the document's entity list
    first: int
    last: int
    label: bool | None = None

    @property
    def width(self) -> int:
        return self.last - self.first + 1

    @property
    def canonical(self) -> tuple[str, ...]:
        return tuple(m.canonical.casefold() for m in self.mentions)

    def overlaps(self, other: "Candidate") -> bool:
        return self.first <= other.last and other.first <= self.last


def _sentence_of(doc: Document | DocumentGraph, m: EntityMention) -> int:
    return doc.tokens[m.start].sentence


def generate_candidates(doc: Document | DocumentGraph, roles: Sequence[str],
                        K: int) -> list[Candidate]:
    """Enumerate minimal-span candidates for the entity types in ``roles``.

    A tuple is kept when its sentence window is at most ``K`` wide and no
    other tuple with the same canonical entities sits in an overlapping
    window of strictly fewer sentences.
    """
    if K < 1:
        raise ValueError("K must be at least 1")
    if not roles:
        raise ValueError("need at least one role")
    by_type = [[(k, m) for k, m in enumerate(doc.entities) if m.entity_type == r] for r in roles]
    pool = []
    for combo in product(*by_type):
        idx = tuple(k for k, _ in combo)
        if len(set(idx)) != len(idx):
            continue
        sents = [_sentence_of(doc, m) for _, m in combo]
        first, last = min(sents), max(sents)
        if last - first + 1 > K:
            continue
        pool.append(Candidate(doc.doc_id, tuple(m for _, m in combo), idx, first, last))
    groups: dict[tuple[str, ...], list[Candidate]] = {}
    for c in pool:
        groups.setdefault(c.canonical, []).append(c)
    kept = [c for c in pool
            if not any(o.width < c.width and o.overlaps(c) for o in groups[c.canonical])]
    kept.sort(key=lambda c: (c.first, c.mention_index))
    return kept


def label_positives(cands: Sequence[Candidate], kb: KnowledgeBase) -> list[Candidate]:
    out = []
    for c in cands:
        if len(c.mentions) != kb.arity:
            raise DatasetError(f"candidate of arity {len(c.mentions)} vs KB arity {kb.arity}")
        out.append(replace(c, label=c.canonical in kb))
    return out


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def sample_negatives(cands: Sequence[Candidate], positives: Sequence[Candidate],
                     ratio: float, rng: np.random.Generator) -> list[Candidate]:
    """Uniformly sample ``round(ratio * len(positives))`` negatives without replacement."""
    if ratio <= 0:
        raise ValueError("ratio must be positive")
    taken = {p.canonical for p in positives}
    pool = [c for c in cands if not c.label and c.canonical not in taken]
    want = _round_half_up(ratio * len(positives))
    if want == 0:
        return []
    if not pool:
        raise DatasetError("no negative candidates available")
    if want > len(pool):
        logger.warning("only %d negatives available, %d requested", len(pool), want)
        want = len(pool)
    pick = np.sort(rng.choice(len(pool), size=want, replace=False))
    return [replace(pool[k], label=False) for k in pick]


def assign_folds(instances: Sequence, k: int, rng: np.random.Generator) -> list[int]:
    """Deal shuffled documents round-robin into ``k`` folds; instances inherit them."""
    if k < 2:
        raise ValueError("need at least two folds")
    docs = sorted({inst.doc_id for inst in instances})
    if len(docs) < k:
        raise DatasetError(f"{len(docs)} documents cannot fill {k} folds")
    order = rng.permutation(len(docs))
    fold_of = {docs[d]: r % k for r, d in enumerate(order)}
    return [fold_of[inst.doc_id] for inst in instances]


@dataclass
class DatasetStats:
    candidates: int = 0
    positives: int = 0
    negatives: int = 0


def build_distant_dataset(docs: Iterable[Document], kb: KnowledgeBase, K: int,
                          ratio: float, rng: np.random.Generator, folds: int = 5,
                          ) -> tuple[list[Candidate], list[int], DatasetStats]:
    """Candidates -> KB labels -> negative sampling -> fold assignment.

    Returns the selected examples (positives and sampled negatives, in
    document order), their folds and the candidate accounting.
    """
    cands: list[Candidate] = []
    for doc in docs:
        cands.extend(generate_candidates(doc, kb.entity_types, K))
    labeled = label_positives(cands, kb)
    positives = [c for c in labeled if c.label]
    negatives = sample_negatives(labeled, positives, ratio, rng)
    neg_keys = {(c.doc_id, c.mention_index) for c in negatives}
    examples = [c for c in labeled if c.label or (c.doc_id, c.mention_index) in neg_keys]
    fold_ids = assign_folds(examples, folds, rng) if examples else []
    return examples, fold_ids, DatasetStats(len(cands), len(positives), len(negatives))
