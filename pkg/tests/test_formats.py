import json
import struct

import numpy as np
import pytest

from graphrel.dataset import Candidate, Role
from graphrel.formats import (CHECKPOINT_VERSION, MAGIC, FormatError, dump_checkpoint,
                              instance_record, instances_from_records, load_checkpoint,
                              load_embeddings, parse_checkpoint, read_corpus,
                              read_instance_records, save_checkpoint, write_corpus,
                              write_records)
from graphrel.numeric import make_rng
from graphrel.synthetic import synthetic_corpus
from graphrel.train_eval import TrainConfig, train

from conftest import synthetic_instances


@pytest.fixture(scope="module")
def trained():
    insts = synthetic_instances(8, seed=1)
    cfg = TrainConfig(max_epochs=1, hidden_dim=3, word_embed_dim=4, edge_embed_dim=2,
                      variant="embed")
    return train({"dgm": insts}, cfg).model, cfg


def test_checkpoint_round_trip_is_exact(trained, tmp_path):
    model, cfg = trained
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, model, cfg)
    data = path.read_bytes()
    assert data[:8] == MAGIC
    assert struct.unpack("<I", data[8:12])[0] == CHECKPOINT_VERSION
    model2, cfg2 = load_checkpoint(path)
    assert cfg2 == cfg and model2.vocab == model.vocab
    assert model2.encoder.edge_labels == model.encoder.edge_labels
    p1, p2 = model.parameters(), model2.parameters()
    assert p1.keys() == p2.keys()
    for k in p1:
        assert np.array_equal(p1[k], p2[k]) and p1[k].dtype == p2[k].dtype
    save_checkpoint(tmp_path / "again.ckpt", model2, cfg2)
    assert (tmp_path / "again.ckpt").read_bytes() == data


def test_checkpoint_rejects_bad_input(trained):
    model, cfg = trained
    data = dump_checkpoint(model, cfg)
    with pytest.raises(FormatError, match="version"):
        parse_checkpoint(data[:8] + struct.pack("<I", 99) + data[12:])
    with pytest.raises(FormatError):
        parse_checkpoint(b"NOTACKPT" + data[8:])
    with pytest.raises(FormatError):
        parse_checkpoint(data + b"\0")
    with pytest.raises(FormatError):
        parse_checkpoint(data[:-3])


def test_embeddings_loaded_exactly(tmp_path):
    vocab = {"<unk>": 0, "egfr": 1, "gefitinib": 2, "rare": 3}
    path = tmp_path / "vec.txt"
    path.write_text("EGFR 0.5 -1.25 2\ngefitinib 1e-3 0 7\nother 1 1 1\n", encoding="utf-8")
    table = load_embeddings(path, vocab, 3, make_rng(0))
    assert table.shape == (4, 3)
    assert table[1].tolist() == [0.5, -1.25, 2.0] and table[2].tolist() == [0.001, 0.0, 7.0]
    again = load_embeddings(path, vocab, None, make_rng(0))
    assert np.array_equal(table, again)
    assert np.all(np.abs(table[[0, 3]]) <= 1)


def test_embedding_errors(tmp_path):
    path = tmp_path / "vec.txt"
    path.write_text("a 1 2 3 4 5\nb 1 2 3\n", encoding="utf-8")
    with pytest.raises(FormatError, match=r"vec.txt:2: expected 5 values, found 3"):
        load_embeddings(path, {"<unk>": 0}, 5, make_rng(0))
    with pytest.raises(FormatError, match="cannot read"):
        load_embeddings(tmp_path / "missing.txt", {"<unk>": 0}, 5, make_rng(0))


def test_corpus_round_trip(tmp_path):
    docs = synthetic_corpus(3, make_rng(0)).docs
    path = tmp_path / "c.jsonl"
    write_corpus(path, docs)
    assert [d.to_dict() for d in read_corpus(path)] == [d.to_dict() for d in docs]


def test_corpus_errors_name_the_line(tmp_path):
    docs = synthetic_corpus(2, make_rng(0)).docs
    path = tmp_path / "c.jsonl"
    write_corpus(path, docs)
    with open(path, "a", encoding="utf-8") as fh:
        fh.write("{not json\n")
    with pytest.raises(FormatError, match=r"c.jsonl:3"):
        read_corpus(path)
    path.write_text(json.dumps({"doc_id": "x", "tokens": [{"text": "a", "sentence": 0}],
                                "deps": [{"head": 9, "mod": 0, "label": "x"}],
                                "entities": []}) + "\n", encoding="utf-8")
    with pytest.raises(FormatError, match=r":1"):
        read_corpus(path)


def test_instance_records(tmp_path):
    corpus = synthetic_corpus(2, make_rng(3))
    doc = corpus.docs[0]
    roles = [Role("drug", "drug"), Role("gene", "gene"), Role("mutation", "mutation")]
    cand = Candidate(doc.doc_id, doc.entities, (0, 1, 2), 0, 1, label=True)
    rec = instance_record(cand, "dgm", roles, 2)
    assert rec == {"doc_id": doc.doc_id, "task": "dgm",
                   "roles": {"drug": "T1", "gene": "T2", "mutation": "T3"}, "label": True,
                   "sentences": [0, 1], "fold": 2}
    path = tmp_path / "i.jsonl"
    write_records(path, [rec])
    recs = read_instance_records(path)
    insts, folds = instances_from_records(recs, {doc.doc_id: doc}, "full")
    assert folds == [2] and insts[0].label and [m.id for m in insts[0].mentions] == ["T1", "T2",
                                                                                    "T3"]
    bad = dict(rec, roles={"drug": "T9", "gene": "T2", "mutation": "T3"})
    with pytest.raises(FormatError, match="line 1"):
        instances_from_records([dict(bad, _line=1)], {doc.doc_id: doc}, "full")
    path.write_text(json.dumps({"doc_id": "d"}) + "\n", encoding="utf-8")
    with pytest.raises(FormatError, match="missing fields"):
        read_instance_records(path)
