import csv
import json

import pytest
from click.testing import CliRunner

from graphrel.cli import main
from graphrel.formats import write_corpus
from graphrel.numeric import make_rng
from graphrel.synthetic import synthetic_corpus

TINY = ["--hidden-dim", "6", "--word-dim", "5", "--edge-dim", "2", "--init-range", "0.3"]
OVERFIT = ["--hidden-dim", "16", "--word-dim", "10", "--edge-dim", "2", "--init-range", "0.5",
           "--lr", "0.2", "--epochs", "40", "--dev-fraction", "0"]


def run(*args, ok=True):
    res = CliRunner().invoke(main, [str(a) for a in args], catch_exceptions=False)
    if ok:
        assert res.exit_code == 0, res.output
    return res


def read_tsv(path):
    with open(path, encoding="utf-8") as fh:
        return list(csv.DictReader(fh, delimiter="\t"))


@pytest.fixture(scope="module")
def toy(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy")
    corpus = synthetic_corpus(30, make_rng(2))
    write_corpus(root / "corpus.jsonl", corpus.docs)
    rows = ["\t".join(t) for t in corpus.kb]
    (root / "kb.tsv").write_text("dgm\tdrug\tgene\tmutation\n" + "\n".join(rows) + "\n",
                                 encoding="utf-8")
    pairs = sorted({(d, m) for d, _, m in corpus.kb})[:12]
    (root / "dm.tsv").write_text("dm\tdrug\tmutation\n" + "\n".join("\t".join(p) for p in pairs)
                                 + "\n", encoding="utf-8")
    run("build-dataset", "--corpus", root / "corpus.jsonl", "--kb", root / "kb.tsv",
        "--out", root / "dgm.jsonl", "--stats", root / "stats.tsv")
    run("build-dataset", "--corpus", root / "corpus.jsonl", "--kb", root / "dm.tsv",
        "--out", root / "dm.jsonl")
    return root


def test_build_dataset_outputs(toy):
    stats = read_tsv(toy / "stats.tsv")[0]
    assert stats["task"] == "dgm" and stats["k_sentences"] == "3"
    assert int(stats["negatives"]) == int(stats["positives"]) > 0
    recs = [json.loads(line) for line in (toy / "dgm.jsonl").read_text().splitlines()]
    assert len(recs) == int(stats["positives"]) + int(stats["negatives"])
    assert set(recs[0]) == {"doc_id", "task", "roles", "label", "sentences", "fold"}
    assert {r["fold"] for r in recs} == set(range(5))


def test_build_dataset_is_byte_stable(toy, tmp_path):
    run("build-dataset", "--corpus", toy / "corpus.jsonl", "--kb", toy / "kb.tsv",
        "--out", tmp_path / "again.jsonl", "--stats", tmp_path / "stats.tsv")
    assert (tmp_path / "again.jsonl").read_bytes() == (toy / "dgm.jsonl").read_bytes()
    assert (tmp_path / "stats.tsv").read_bytes() == (toy / "stats.tsv").read_bytes()


def test_wider_window_never_loses_candidates(toy, tmp_path):
    counts = []
    for k in (1, 3):
        run("build-dataset", "--corpus", toy / "corpus.jsonl", "--kb", toy / "kb.tsv",
            "--k-sentences", k, "--out", tmp_path / f"k{k}.jsonl",
            "--stats", tmp_path / f"k{k}.tsv")
        counts.append(int(read_tsv(tmp_path / f"k{k}.tsv")[0]["candidates"]))
    assert counts[1] >= counts[0]
    assert counts[0] == 0  # every triple spans two sentences


def test_build_dataset_errors(toy, tmp_path):
    kb = tmp_path / "kb.tsv"
    kb.write_text("r\tdrug\tprotein\nx\ty\n", encoding="utf-8")
    res = run("build-dataset", "--corpus", toy / "corpus.jsonl", "--kb", kb,
              "--out", tmp_path / "o.jsonl", ok=False)
    assert res.exit_code != 0 and "unknown entity role" in res.output
    bad = tmp_path / "bad.jsonl"
    bad.write_text((toy / "corpus.jsonl").read_text().splitlines()[0] + "\n{oops\n")
    res = run("build-dataset", "--corpus", bad, "--kb", toy / "kb.tsv",
              "--out", tmp_path / "o.jsonl", ok=False)
    assert res.exit_code != 0 and "bad.jsonl:2" in res.output


def test_train_eval_extract(toy, tmp_path):
    ckpt = tmp_path / "m.ckpt"
    run("train", "--instances", toy / "dgm.jsonl", "--corpus", toy / "corpus.jsonl",
        "--out", ckpt, "--history", tmp_path / "hist.tsv", "--plot-dir", tmp_path / "plots",
        *OVERFIT)
    hist = read_tsv(tmp_path / "hist.tsv")
    assert len(hist) == 40 and hist[-1]["best"] == "true"
    assert (tmp_path / "plots" / "learning_curve.png").stat().st_size > 0

    out = tmp_path / "eval.tsv"
    run("eval", "--checkpoint", ckpt, "--instances", toy / "dgm.jsonl", "--corpus",
        toy / "corpus.jsonl", "--threshold", 0.5, "--threshold", 0.9, "--out", out,
        "--predictions", tmp_path / "pred.tsv", "--plot-dir", tmp_path / "plots")
    rows = read_tsv(out)
    assert [r["threshold"] for r in rows] == ["0.500000", "0.900000"]
    assert float(rows[0]["accuracy"]) >= 0.95  # overfit on its own training data
    assert int(rows[1]["tp"]) + int(rows[1]["fp"]) <= int(rows[0]["tp"]) + int(rows[0]["fp"])
    assert (tmp_path / "plots" / "scores.png").exists()

    res = run("eval", "--checkpoint", ckpt, "--instances", toy / "dgm.jsonl", "--corpus",
              toy / "corpus.jsonl", "--variant", "embed", ok=False)
    assert res.exit_code != 0 and "--variant full" in res.output

    run("extract", "--checkpoint", ckpt, "--corpus", toy / "corpus.jsonl", "--out",
        tmp_path / "ex.tsv", "--threshold", 0.5)
    run("extract", "--checkpoint", ckpt, "--corpus", toy / "corpus.jsonl", "--out",
        tmp_path / "ex2.tsv", "--threshold", 0.5, "--jobs", 3)
    assert (tmp_path / "ex.tsv").read_bytes() == (tmp_path / "ex2.tsv").read_bytes()
    ex = read_tsv(tmp_path / "ex.tsv")
    assert ex and all(float(r["probability"]) >= 0.5 for r in ex)

    res = run("mcnemar", tmp_path / "pred.tsv", tmp_path / "pred.tsv")
    assert res.output.splitlines()[1].split("\t")[1:] == ["0.000000", "1.000000"]


def test_multitask_crossval(toy, tmp_path):
    out = tmp_path / "cv.tsv"
    run("crossval", "--instances", toy / "dgm.jsonl", "--instances", toy / "dm.jsonl",
        "--corpus", toy / "corpus.jsonl", "--multitask", "dgm,dm", "--epochs", 2,
        "--out", out, "--predictions", tmp_path / "cvpred.tsv",
        "--plot-dir", tmp_path / "plots", *TINY)
    rows = read_tsv(out)
    assert [r["fold"] for r in rows] == ["0", "1", "2", "3", "4", "mean"]
    assert all(r["task"] == "dgm" for r in rows)
    n = sum(int(r["n"]) for r in rows[:-1])
    assert n == int(rows[-1]["n"]) == len(read_tsv(tmp_path / "cvpred.tsv"))
    assert (tmp_path / "plots" / "fold_metrics.png").exists()


def test_unknown_multitask_name(toy, tmp_path):
    res = run("train", "--instances", toy / "dgm.jsonl", "--corpus", toy / "corpus.jsonl",
              "--multitask", "dgm,nope", "--out", tmp_path / "m.ckpt", *TINY, ok=False)
    assert res.exit_code != 0 and "nope" in res.output


def test_gradcheck_command(tmp_path):
    res = run("gradcheck", "--instances", 3, "--plot-dir", tmp_path)
    assert res.output.splitlines()[-1].startswith("PASS, max rel err")
    assert res.output.splitlines()[-1].endswith("< 1e-04")
    assert (tmp_path / "gradcheck.png").exists()
