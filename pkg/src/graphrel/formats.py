"""On-disk formats: corpus and instance files, word vectors, checkpoints.

Corpus files hold one JSON document per line::

    {"doc_id": "d1",
     "tokens": [{"text": "Gefitinib", "sentence": 0}, ...],
     "deps": [{"head": 2, "mod": 0, "label": "nsubj"}, ...],   # head -1 = root
     "entities": [{"id": "T1", "type": "drug", "start": 0, "end": 0,
                   "canonical": "gefitinib"}, ...],
     "coref": [{"src": 4, "dst": 12, "label": "coref"}],        # optional
     "discourse": [{"src": 9, "dst": 20, "label": "elab"}]}     # optional

Token indices are document-wide.  Instance files hold one JSON record per
line::

    {"doc_id": "d1", "task": "drug-gene-mutation",
     "roles": {"drug": "T1", "gene": "T2", "mutation": "T3"},
     "label": true, "fold": 3, "sentences": [0, 1]}

Checkpoints are binary: the magic bytes ``GLSTMCKP``, a little-endian uint32
format version, a uint64 length plus a UTF-8 JSON header (config,
vocabulary, edge labels, task heads), a uint32 tensor count and then, per
tensor in name order, ``uint32 name length, name, uint32 ndim, ndim x uint64
dims, float64 little-endian data``.
"""
from __future__ import annotations

import io
import json
import struct
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from .dataset import Candidate, Role
from .docgraph import (Document, EdgePolicy, GraphError, build_graph, slice_document,
                       validate_document)
from .graph_lstm import DIRECTIONS, GraphLstmParams, Variant
from .numeric import init_uniform
from .relation_model import RelationInstance, RelationModel, TaskHead
from .train_eval import TrainConfig

MAGIC = b"GLSTMCKP"
CHECKPOINT_VERSION = 1


class FormatError(ValueError):
    pass


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=False, ensure_ascii=False, separators=(",", ":"))


def _read_jsonl(path: str | Path) -> Iterator[tuple[int, dict]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: malformed record ({exc.msg})") from None
            if not isinstance(rec, dict):
                raise FormatError(f"{path}:{lineno}: expected a JSON object")
            yield lineno, rec


# --------------------------------------------------------------------------
# corpus


def read_corpus(path: str | Path) -> list[Document]:
    docs = []
    for lineno, rec in _read_jsonl(path):
        try:
            doc = Document.from_dict(rec)
            validate_document(doc)
        except GraphError as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from None
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"{path}:{lineno}: malformed document ({exc!r})") from None
        docs.append(doc)
    return docs


def write_corpus(path: str | Path, docs: Iterable[Document]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for d in docs:
            fh.write(_dumps(d.to_dict()) + "\n")


# --------------------------------------------------------------------------
# instances


def instance_record(c: Candidate, task: str, roles: Sequence[Role], fold: int | None) -> dict:
    rec = {"doc_id": c.doc_id, "task": task,
           "roles": {r.name: m.id for r, m in zip(roles, c.mentions)},
           "label": bool(c.label), "sentences": [c.first, c.last]}
    if fold is not None:
        rec["fold"] = int(fold)
    return rec


def write_records(path: str | Path, records: Iterable[Mapping]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(_dumps(rec) + "\n")


def read_instance_records(path: str | Path) -> list[dict]:
    out = []
    for lineno, rec in _read_jsonl(path):
        missing = {"doc_id", "task", "roles", "label", "sentences"} - rec.keys()
        if missing:
            raise FormatError(f"{path}:{lineno}: missing fields {sorted(missing)}")
        rec["_line"] = lineno
        out.append(rec)
    return out


def make_instance(doc: Document, mention_ids: Sequence[str], task: str, label: bool,
                  first: int, last: int, policy: EdgePolicy | str) -> RelationInstance:
    window = slice_document(doc, first, last)
    graph = build_graph(window, policy)
    mentions = tuple(window.entity(m) for m in mention_ids)
    return RelationInstance(doc.doc_id, graph, mentions, task, bool(label), first, last)


def instances_from_records(records: Sequence[dict], docs: Mapping[str, Document],
                           policy: EdgePolicy | str) -> tuple[list[RelationInstance], list[int]]:
    instances, folds = [], []
    for rec in records:
        where = f"instance line {rec.get('_line', '?')}"
        doc = docs.get(rec["doc_id"])
        if doc is None:
            raise FormatError(f"{where}: unknown document {rec['doc_id']!r}")
        first, last = rec["sentences"]
        try:
            inst = make_instance(doc, list(rec["roles"].values()), rec["task"], rec["label"],
                                 int(first), int(last), policy)
        except (KeyError, GraphError) as exc:
            raise FormatError(f"{where}: {exc}") from None
        instances.append(inst)
        folds.append(int(rec.get("fold", -1)))
    return instances, folds


# --------------------------------------------------------------------------
# word vectors


def load_embeddings(path: str | Path, vocab: Mapping[str, int], dim: int | None,
                    rng: np.random.Generator, base: np.ndarray | None = None) -> np.ndarray:
    """Embedding table for ``vocab``: file vectors where available, uniform
    [-1, 1] draws elsewhere.  Each line is a token followed by its values."""
    path = Path(path)
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise FormatError(f"cannot read embedding file {path}: {exc.strerror}") from None
    found: dict[int, np.ndarray] = {}
    with fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split()
            if not parts:
                continue
            values = parts[1:]
            if dim is None:
                dim = len(values)
            if len(values) != dim:
                raise FormatError(f"{path}:{lineno}: expected {dim} values, found {len(values)}")
            k = vocab.get(parts[0].lower())
            if k is None or k in found:
                continue
            try:
                found[k] = np.array([float(v) for v in values])
            except ValueError:
                raise FormatError(f"{path}:{lineno}: non-numeric vector value") from None
    if dim is None:
        raise FormatError(f"{path}: no vectors found")
    if base is not None and base.shape == (len(vocab), dim):
        table = base.copy()
    else:
        table = init_uniform((len(vocab), dim), -1.0, 1.0, rng)
    for k, v in found.items():
        table[k] = v
    return table


# --------------------------------------------------------------------------
# checkpoints


def _checkpoint_header(model: RelationModel, cfg: TrainConfig) -> dict:
    enc = model.encoder
    words = [None] * len(model.vocab)
    for w, k in model.vocab.items():
        words[k] = w
    return {
        "version": CHECKPOINT_VERSION,
        "config": cfg.to_dict(),
        "variant": enc.variant.value,
        "hidden_dim": enc.hidden_dim,
        "word_dim": enc.word_dim,
        "edge_dim": enc.edge_dim,
        "vocab": words,
        "edge_labels": list(enc.edge_labels),
        "tasks": [{"name": h.name, "roles": list(h.roles)} for h in model.heads.values()],
    }


def dump_checkpoint(model: RelationModel, cfg: TrainConfig) -> bytes:
    header = json.dumps(_checkpoint_header(model, cfg), sort_keys=True,
                        ensure_ascii=False, separators=(",", ":")).encode("utf-8")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<IQ", CHECKPOINT_VERSION, len(header)))
    buf.write(header)
    params = model.parameters()
    buf.write(struct.pack("<I", len(params)))
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name], dtype="<f8")
        raw = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(arr.tobytes())
    return buf.getvalue()


def save_checkpoint(path: str | Path, model: RelationModel, cfg: TrainConfig) -> None:
    Path(path).write_bytes(dump_checkpoint(model, cfg))


def parse_checkpoint(data: bytes) -> tuple[RelationModel, TrainConfig]:
    try:
        return _parse_checkpoint(data)
    except (struct.error, ValueError, KeyError, UnicodeDecodeError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"corrupt checkpoint ({exc})") from None


def _parse_checkpoint(data: bytes) -> tuple[RelationModel, TrainConfig]:
    if data[:8] != MAGIC:
        raise FormatError("not a graph LSTM checkpoint")
    version, hlen = struct.unpack_from("<IQ", data, 8)
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    pos = 20
    header = json.loads(data[pos: pos + hlen].decode("utf-8"))
    pos += hlen
    (count,) = struct.unpack_from("<I", data, pos)
    pos += 4
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", data, pos)
        pos += 4
        name = data[pos: pos + nlen].decode("utf-8")
        pos += nlen
        (ndim,) = struct.unpack_from("<I", data, pos)
        pos += 4
        shape = struct.unpack_from(f"<{ndim}Q", data, pos)
        pos += 8 * ndim
        size = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(data, dtype="<f8", count=size, offset=pos).reshape(shape)
        tensors[name] = arr.astype(np.float64, copy=True)
        pos += 8 * size
    if pos != len(data):
        raise FormatError("trailing bytes in checkpoint")
    cfg = TrainConfig.from_dict(header["config"])
    variant = Variant(header["variant"])
    enc_names = {"word_emb"} | ({"edge_emb"} if variant is Variant.EMBED else set())
    enc_t = {k: v for k, v in tensors.items()
             if k in enc_names or k.split(".")[0] in DIRECTIONS}
    encoder = GraphLstmParams(variant, header["hidden_dim"], header["word_dim"],
                              header["edge_dim"], list(header["edge_labels"]), enc_t)
    heads = {}
    for t in header["tasks"]:
        try:
            w, b = tensors[f"head.{t['name']}.w"], tensors[f"head.{t['name']}.b"]
        except KeyError:
            raise FormatError(f"checkpoint lacks weights for task {t['name']!r}") from None
        heads[t["name"]] = TaskHead(t["name"], tuple(t["roles"]), w, b)
    vocab = {w: k for k, w in enumerate(header["vocab"])}
    return RelationModel(encoder, heads, vocab), cfg


def load_checkpoint(path: str | Path) -> tuple[RelationModel, TrainConfig]:
    return parse_checkpoint(Path(path).read_bytes())
