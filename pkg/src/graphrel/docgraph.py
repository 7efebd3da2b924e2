"""Typed document graphs over pre-parsed text and their split into two DAGs.

A document arrives already tokenized, parsed and entity-tagged (see
:class:`Document`).  :func:`build_graph` turns it into a :class:`DocumentGraph`
whose nodes are tokens and whose edges carry a coarse and a fine label;
:func:`partition` splits that graph into a left-to-right and a right-to-left
acyclic half.
"""
from __future__ import annotations

import enum
import logging
from collections import deque
from dataclasses import dataclass
from itertools import combinations
from typing import Iterable, Sequence

logger = logging.getLogger(__name__)


class GraphError(ValueError):
    pass


class NoPathError(GraphError):
    pass


class EdgeType(str, enum.Enum):
    ADJACENCY = "adjacency"
    SYNDEP = "syndep"
    NEXTSENT = "nextsent"
    COREF = "coref"
    DISCOURSE = "discourse"


COARSE_TYPES: tuple[EdgeType, ...] = tuple(EdgeType)


class EdgePolicy(str, enum.Enum):
    CHAIN_ONLY = "chain"
    TREE_ONLY = "tree"
    SHORTEST_PATH = "shortest-path"
    FULL_GRAPH = "full"


@dataclass(frozen=True, order=True)
class EdgeLabel:
    coarse: EdgeType
    fine: str

    def __post_init__(self):
        if not self.fine:
            raise GraphError("edge label needs a non-empty fine label")
        if (self.coarse is EdgeType.ADJACENCY) != (self.fine == "adj"):
            raise GraphError(f"adjacency edges and only those use fine label 'adj': {self}")
        if (self.coarse is EdgeType.NEXTSENT) != (self.fine == "nextsent"):
            raise GraphError(f"nextsent edges and only those use fine label 'nextsent': {self}")


ADJ = EdgeLabel(EdgeType.ADJACENCY, "adj")
NEXTSENT = EdgeLabel(EdgeType.NEXTSENT, "nextsent")


@dataclass(frozen=True)
class Token:
    index: int
    text: str
    sentence: int


@dataclass(frozen=True, order=True)
class Edge:
    source: int
    target: int
    label: EdgeLabel


@dataclass(frozen=True)
class EntityMention:
    id: str
    entity_type: str
    start: int
    end: int  # inclusive
    canonical: str

    @property
    def span(self) -> range:
        return range(self.start, self.end + 1)


@dataclass(frozen=True)
class Dependency:
    head: int  # -1 marks the root
    mod: int
    label: str


@dataclass(frozen=True)
class Link:
    src: int
    dst: int
    label: str


@dataclass(frozen=True)
class Document:
    """A parsed, tagged document as read from one corpus line."""

    doc_id: str
    tokens: tuple[Token, ...]
    deps: tuple[Dependency, ...] = ()
    entities: tuple[EntityMention, ...] = ()
    coref: tuple[Link, ...] = ()
    discourse: tuple[Link, ...] = ()

    @property
    def n_sentences(self) -> int:
        return self.tokens[-1].sentence + 1 if self.tokens else 0

    @classmethod
    def from_dict(cls, rec: dict) -> "Document":
        tokens = tuple(Token(i, str(t["text"]), int(t["sentence"]))
                       for i, t in enumerate(rec["tokens"]))
        deps = tuple(Dependency(int(d["head"]), int(d["mod"]), str(d["label"]))
                     for d in rec.get("deps", ()))
        ents = tuple(EntityMention(str(e["id"]), str(e["type"]), int(e["start"]),
                                   int(e["end"]), str(e.get("canonical", "")))
                     for e in rec.get("entities", ()))
        links = {k: tuple(Link(int(x["src"]), int(x["dst"]), str(x["label"]))
                          for x in rec.get(k, ()))
                 for k in ("coref", "discourse")}
        return cls(str(rec["doc_id"]), tokens, deps, ents, links["coref"], links["discourse"])

    def to_dict(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "tokens": [{"text": t.text, "sentence": t.sentence} for t in self.tokens],
            "deps": [{"head": d.head, "mod": d.mod, "label": d.label} for d in self.deps],
            "entities": [{"id": e.id, "type": e.entity_type, "start": e.start,
                          "end": e.end, "canonical": e.canonical} for e in self.entities],
            "coref": [{"src": x.src, "dst": x.dst, "label": x.label} for x in self.coref],
            "discourse": [{"src": x.src, "dst": x.dst, "label": x.label}
                          for x in self.discourse],
        }

    def entity(self, mention_id: str) -> EntityMention:
        for e in self.entities:
            if e.id == mention_id:
                return e
        raise KeyError(f"{self.doc_id}: no entity mention {mention_id!r}")


def slice_document(doc: Document, first: int, last: int) -> Document:
    """Restrict a document to sentences ``first..last`` and re-index tokens.

    Arcs, links and mentions that leave the window are dropped.
    """
    keep = [t for t in doc.tokens if first <= t.sentence <= last]
    if not keep:
        raise GraphError(f"{doc.doc_id}: empty sentence window [{first}, {last}]")
    lo, hi = keep[0].index, keep[-1].index
    shift = lambda i: i - lo  # noqa: E731
    inside = lambda i: lo <= i <= hi  # noqa: E731
    tokens = tuple(Token(shift(t.index), t.text, t.sentence - first) for t in keep)
    deps = tuple(Dependency(shift(d.head) if d.head >= 0 else -1, shift(d.mod), d.label)
                 for d in doc.deps
                 if inside(d.mod) and (d.head < 0 or inside(d.head)))
    ents = tuple(EntityMention(e.id, e.entity_type, shift(e.start), shift(e.end), e.canonical)
                 for e in doc.entities if inside(e.start) and inside(e.end))
    coref = tuple(Link(shift(x.src), shift(x.dst), x.label)
                  for x in doc.coref if inside(x.src) and inside(x.dst))
    disc = tuple(Link(shift(x.src), shift(x.dst), x.label)
                 for x in doc.discourse if inside(x.src) and inside(x.dst))
    return Document(doc.doc_id, tokens, deps, ents, coref, disc)


@dataclass(frozen=True)
class DocumentGraph:
    doc_id: str
    tokens: tuple[Token, ...]
    edges: tuple[Edge, ...]
    entities: tuple[EntityMention, ...] = ()

    def __len__(self) -> int:
        return len(self.tokens)

    def to_dict(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "tokens": [[t.text, t.sentence] for t in self.tokens],
            "edges": [[e.source, e.target, e.label.coarse.value, e.label.fine]
                      for e in self.edges],
            "entities": [[e.id, e.entity_type, e.start, e.end, e.canonical]
                         for e in self.entities],
        }


@dataclass(frozen=True)
class DagPair:
    """Per-node predecessor lists of the forward and backward DAGs."""

    forward: tuple[tuple[tuple[int, EdgeLabel], ...], ...]
    backward: tuple[tuple[tuple[int, EdgeLabel], ...], ...]

    def __len__(self) -> int:
        return len(self.forward)

    def n_edges(self) -> tuple[int, int]:
        return sum(map(len, self.forward)), sum(map(len, self.backward))

    def to_dict(self) -> dict:
        enc = lambda side: [[[j, lab.coarse.value, lab.fine] for j, lab in preds]  # noqa: E731
                            for preds in side]
        return {"forward": enc(self.forward), "backward": enc(self.backward)}


def validate_document(doc: Document) -> None:
    n = len(doc.tokens)
    prev = 0
    for t in doc.tokens:
        if t.sentence < prev:
            raise GraphError(f"{doc.doc_id}: sentence indices decrease at token {t.index}")
        prev = t.sentence
    for d in doc.deps:
        if not (0 <= d.mod < n) or not (-1 <= d.head < n):
            raise GraphError(f"{doc.doc_id}: dependency {d} references a token out of range")
    for e in doc.entities:
        if not (0 <= e.start <= e.end < n):
            raise GraphError(f"{doc.doc_id}: mention {e.id} span out of range")
        if doc.tokens[e.start].sentence != doc.tokens[e.end].sentence:
            raise GraphError(f"{doc.doc_id}: mention {e.id} crosses a sentence boundary")
    for x in doc.coref + doc.discourse:
        if not (0 <= x.src < n and 0 <= x.dst < n):
            raise GraphError(f"{doc.doc_id}: link {x} references a token out of range")


def sentence_roots(doc: Document) -> list[int]:
    """Syntactic root token of each sentence.

    The root is the first token whose arc has head -1 (or points at itself).
    Sentences without such an arc fall back to the first token lacking a head
    arc, and failing that to the first token.
    """
    by_sent: dict[int, list[int]] = {}
    for t in doc.tokens:
        by_sent.setdefault(t.sentence, []).append(t.index)
    marked = {d.mod for d in doc.deps if d.head < 0 or d.head == d.mod}
    has_head = {d.mod for d in doc.deps if d.head >= 0 and d.head != d.mod}
    roots = []
    for s in sorted(by_sent):
        idx = by_sent[s]
        root = next((i for i in idx if i in marked), None)
        if root is None:
            root = next((i for i in idx if i not in has_head), idx[0])
        roots.append(root)
    return roots


def _dependency_edges(doc: Document) -> set[Edge]:
    out = set()
    for d in doc.deps:
        if d.head < 0 or d.head == d.mod:
            continue
        out.add(Edge(d.mod, d.head, EdgeLabel(EdgeType.SYNDEP, d.label)))
    return out


def _nextsent_edges(doc: Document) -> set[Edge]:
    roots = sentence_roots(doc)
    return {Edge(a, b, NEXTSENT) for a, b in zip(roots, roots[1:])}


def _link_edges(links: Iterable[Link], coarse: EdgeType) -> set[Edge]:
    out = set()
    for x in links:
        if x.src == x.dst:
            continue
        a, b = sorted((x.src, x.dst))
        out.add(Edge(a, b, EdgeLabel(coarse, x.label)))
    return out


def build_graph(doc: Document, policy: EdgePolicy | str = EdgePolicy.FULL_GRAPH,
                coref: bool = True, discourse: bool = True) -> DocumentGraph:
    """Build the typed document graph of ``doc`` under an edge policy.

    Dependency edges point from child to parent.  Coreference and discourse
    links are taken from the record (oriented earlier -> later) and only used
    by the full-graph policy.
    """
    policy = EdgePolicy(policy)
    validate_document(doc)
    n = len(doc.tokens)
    adjacency = {Edge(i, i + 1, ADJ) for i in range(n - 1)}
    edges: set[Edge]
    if policy is EdgePolicy.CHAIN_ONLY:
        edges = adjacency
    elif policy is EdgePolicy.TREE_ONLY:
        edges = _dependency_edges(doc)
    elif policy is EdgePolicy.SHORTEST_PATH:
        backbone = DocumentGraph(doc.doc_id, doc.tokens,
                                 tuple(sorted(_dependency_edges(doc) | _nextsent_edges(doc))),
                                 doc.entities)
        edges = set()
        for a, b in combinations(doc.entities, 2):
            try:
                path = shortest_dependency_path(backbone, a, b)
            except NoPathError:
                logger.warning("%s: no dependency path between %s and %s", doc.doc_id, a.id, b.id)
                continue
            steps = {frozenset(p) for p in zip(path, path[1:])}
            edges.update(e for e in backbone.edges if frozenset((e.source, e.target)) in steps)
    else:
        edges = adjacency | _dependency_edges(doc) | _nextsent_edges(doc)
        if coref:
            edges |= _link_edges(doc.coref, EdgeType.COREF)
        if discourse:
            edges |= _link_edges(doc.discourse, EdgeType.DISCOURSE)
    return DocumentGraph(doc.doc_id, doc.tokens, tuple(sorted(edges)), doc.entities)


def partition(g: DocumentGraph) -> DagPair:
    """Split ``g`` into forward (pred < node) and backward (pred > node) DAGs.

    Adjacency edges appear in both halves, once per direction.
    """
    n = len(g.tokens)
    fwd: list[list[tuple[int, EdgeLabel]]] = [[] for _ in range(n)]
    bwd: list[list[tuple[int, EdgeLabel]]] = [[] for _ in range(n)]
    for e in g.edges:
        if e.label.coarse is EdgeType.ADJACENCY:
            lo, hi = sorted((e.source, e.target))
            fwd[hi].append((lo, e.label))
            bwd[lo].append((hi, e.label))
        elif e.source < e.target:
            fwd[e.target].append((e.source, e.label))
        else:
            bwd[e.target].append((e.source, e.label))
    freeze = lambda side: tuple(tuple(sorted(p)) for p in side)  # noqa: E731
    return DagPair(freeze(fwd), freeze(bwd))


def mention_head(g: DocumentGraph, m: EntityMention) -> int:
    """Syntactic head of a mention: the first span token whose parent is outside it."""
    parent: dict[int, list[int]] = {}
    for e in g.edges:
        if e.label.coarse is EdgeType.SYNDEP:
            parent.setdefault(e.source, []).append(e.target)
    for i in m.span:
        if not any(p in m.span for p in parent.get(i, ())):
            return i
    return m.start


def _undirected(g: DocumentGraph, coarse: Sequence[EdgeType]) -> list[set[int]]:
    nbrs: list[set[int]] = [set() for _ in g.tokens]
    for e in g.edges:
        if e.label.coarse in coarse:
            nbrs[e.source].add(e.target)
            nbrs[e.target].add(e.source)
    return nbrs


def _bfs(nbrs: list[set[int]], start: int) -> list[int]:
    dist = [-1] * len(nbrs)
    dist[start] = 0
    q = deque([start])
    while q:
        u = q.popleft()
        for v in nbrs[u]:
            if dist[v] < 0:
                dist[v] = dist[u] + 1
                q.append(v)
    return dist


def shortest_dependency_path(g: DocumentGraph, a: EntityMention, b: EntityMention) -> list[int]:
    """Lexicographically smallest shortest path between the mentions' head tokens.

    Walks the undirected dependency + next-sentence edges.
    """
    nbrs = _undirected(g, (EdgeType.SYNDEP, EdgeType.NEXTSENT))
    src, dst = mention_head(g, a), mention_head(g, b)
    dist = _bfs(nbrs, dst)
    if dist[src] < 0:
        raise NoPathError(f"{g.doc_id}: mentions {a.id} and {b.id} are not connected")
    path = [src]
    u = src
    while u != dst:
        u = min(v for v in nbrs[u] if dist[v] == dist[u] - 1)
        path.append(u)
    return path


def dag_violations(g: DocumentGraph, dags: DagPair) -> list[str]:
    """Return human-readable invariant violations of a partition (empty if sound)."""
    problems = []
    for t, preds in enumerate(dags.forward):
        problems += [f"forward {j}->{t}" for j, _ in preds if j >= t]
    for t, preds in enumerate(dags.backward):
        problems += [f"backward {j}->{t}" for j, _ in preds if j <= t]
    n_adj = sum(e.label.coarse is EdgeType.ADJACENCY for e in g.edges)
    nf, nb = dags.n_edges()
    if nf + nb != len(g.edges) + n_adj:
        problems.append(f"edge count {nf}+{nb} != {len(g.edges)}+{n_adj}")
    expected: dict[tuple, int] = {}
    for e in g.edges:
        keys = [(e.source, e.target, e.label)]
        if e.label.coarse is EdgeType.ADJACENCY:
            keys.append((e.target, e.source, e.label))
        for k in keys:
            expected[k] = expected.get(k, 0) + 1
    seen: dict[tuple, int] = {}
    for side in (dags.forward, dags.backward):
        for t, preds in enumerate(side):
            for j, lab in preds:
                seen[(j, t, lab)] = seen.get((j, t, lab), 0) + 1
    if seen != expected:
        problems.append("edge multiset differs from the graph")
    return problems


__all__ = [
    "ADJ", "COARSE_TYPES", "DagPair", "Dependency", "Document", "DocumentGraph", "Edge",
    "EdgeLabel", "EdgePolicy", "EdgeType", "EntityMention", "GraphError", "Link",
    "NEXTSENT", "NoPathError", "Token", "build_graph", "dag_violations", "mention_head",
    "partition", "sentence_roots", "shortest_dependency_path", "slice_document",
]
