"""Command-line interface: ``graphrel <command> ...``.

Reports are tab-separated with a header row; ``--plot-dir`` additionally
renders PNG figures next to them.
"""
from __future__ import annotations

import csv
import functools
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from pathlib import Path

import click
import numpy as np

from . import formats, plotting
from .dataset import DatasetError, KnowledgeBase, build_distant_dataset, generate_candidates
from .docgraph import Document, EdgePolicy, GraphError
from .graph_lstm import Variant
from .numeric import make_rng
from .relation_model import predict_proba
from .train_eval import Metrics, TrainConfig, crossval, evaluate, mcnemar, train

logger = logging.getLogger("graphrel")


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


@contextmanager
def _open_out(path):
    if path is None or str(path) == "-":
        yield sys.stdout
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            yield fh


def _write_tsv(path, header, rows) -> None:
    with _open_out(path) as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


METRIC_COLS = ["accuracy", "precision", "recall", "f1", "tp", "fp", "tn", "fn"]


def _metric_cells(m: Metrics) -> list:
    return [getattr(m, c) for c in METRIC_COLS]


def config_options(f):
    """Training hyperparameters; defaults follow TrainConfig."""
    d = TrainConfig()
    opts = [
        click.option("--variant", type=click.Choice([v.value for v in Variant]),
                     default=d.variant, show_default=True),
        click.option("--edges", "edge_policy", type=click.Choice([p.value for p in EdgePolicy]),
                     default=d.edge_policy, show_default=True),
        click.option("--k-sentences", type=int, default=d.k_sentences, show_default=True),
        click.option("--seed", type=int, default=d.seed, show_default=True),
        click.option("--batch-size", type=int, default=d.batch_size, show_default=True),
        click.option("--lr", "learning_rate", type=float, default=d.learning_rate,
                     show_default=True),
        click.option("--epochs", "max_epochs", type=int, default=d.max_epochs, show_default=True),
        click.option("--hidden-dim", type=int, default=d.hidden_dim, show_default=True),
        click.option("--edge-dim", "edge_embed_dim", type=int, default=d.edge_embed_dim,
                     show_default=True),
        click.option("--word-dim", "word_embed_dim", type=int, default=d.word_embed_dim,
                     show_default=True),
        click.option("--patience", type=int, default=d.patience, show_default=True),
        click.option("--dev-fraction", type=float, default=d.dev_fraction, show_default=True),
        click.option("--init-range", type=float, default=d.init_range, show_default=True,
                     help="Non-embedding parameters start uniform in [-r, r]."),
        click.option("--freeze-embeddings", is_flag=True),
        click.option("--grad-clip", type=float, default=None),
    ]
    for opt in reversed(opts):
        f = opt(f)
    return f


def _config_from(kwargs: dict) -> TrainConfig:
    keys = set(TrainConfig.__dataclass_fields__)
    cfg = {k: kwargs.pop(k) for k in list(kwargs) if k in keys}
    try:
        return TrainConfig(**cfg)
    except ValueError as exc:
        raise click.UsageError(str(exc)) from None


def _fail_on(*errors):
    def deco(f):
        @functools.wraps(f)
        def wrapper(*a, **k):
            try:
                return f(*a, **k)
            except errors as exc:
                raise click.ClickException(str(exc)) from None
        return wrapper
    return deco


_DATA_ERRORS = (formats.FormatError, DatasetError, GraphError, KeyError, FloatingPointError)


def _load_docs(path) -> dict[str, Document]:
    docs = formats.read_corpus(path)
    by_id = {}
    for d in docs:
        if d.doc_id in by_id:
            raise formats.FormatError(f"{path}: duplicate doc_id {d.doc_id!r}")
        by_id[d.doc_id] = d
    return by_id


def _load_instances(paths, docs, policy):
    records = []
    for p in paths:
        records.extend(formats.read_instance_records(p))
    return formats.instances_from_records(records, docs, policy)


def _task_order(instances, multitask: str | None) -> list[str]:
    seen = list(dict.fromkeys(i.task for i in instances))
    if not multitask:
        return seen
    order = [t.strip() for t in multitask.split(",") if t.strip()]
    missing = [t for t in order if t not in seen]
    if missing:
        raise click.UsageError(f"--multitask names tasks without instances: {missing}")
    return order


@click.group()
@click.option("-v", "--verbose", count=True, help="Repeat for more logging.")
def main(verbose: int) -> None:
    """Cross-sentence n-ary relation extraction with graph LSTMs."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


@main.command("build-dataset")
@click.option("--corpus", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--kb", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--k-sentences", type=int, default=3, show_default=True)
@click.option("--neg-ratio", type=float, default=1.0, show_default=True)
@click.option("--folds", type=int, default=5, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--task", default=None, help="Task name (defaults to the KB relation).")
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@click.option("--stats", type=click.Path(dir_okay=False), default=None,
              help="Write the count table here instead of stdout.")
@_fail_on(*_DATA_ERRORS, ValueError)
def build_dataset_cmd(corpus, kb, k_sentences, neg_ratio, folds, seed, task, out, stats):
    """Label minimal-span candidates against a KB and sample negatives."""
    kbase = KnowledgeBase.load(kb)
    docs = formats.read_corpus(corpus)
    types = {e.entity_type for d in docs for e in d.entities}
    unknown = [t for t in kbase.entity_types if t not in types]
    if unknown:
        raise click.ClickException(f"unknown entity role(s) {unknown}: no such mention types "
                                   f"in {corpus}")
    rng = make_rng(seed)
    examples, fold_ids, st = build_distant_dataset(docs, kbase, k_sentences, neg_ratio, rng,
                                                   folds)
    name = task or kbase.relation
    formats.write_records(out, (formats.instance_record(c, name, kbase.roles, f)
                                for c, f in zip(examples, fold_ids)))
    _write_tsv(stats, ["task", "k_sentences", "candidates", "positives", "negatives"],
               [[name, k_sentences, st.candidates, st.positives, st.negatives]])


@main.command("train")
@click.option("--instances", multiple=True, required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--corpus", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--embeddings", type=click.Path(dir_okay=False), default=None)
@click.option("--multitask", default=None, help="Comma-separated task order; first is main.")
@click.option("--out", type=click.Path(dir_okay=False), required=True,
              help="Checkpoint path.")
@click.option("--history", type=click.Path(dir_okay=False), default=None,
              help="Per-epoch TSV (default stdout).")
@click.option("--plot-dir", type=click.Path(file_okay=False), default=None)
@config_options
@_fail_on(*_DATA_ERRORS)
def train_cmd(instances, corpus, embeddings, multitask, out, history, plot_dir, **kwargs):
    """Train a model on one or more instance files."""
    cfg = _config_from(kwargs)
    docs = _load_docs(corpus)
    insts, _ = _load_instances(instances, docs, cfg.edge_policy)
    order = _task_order(insts, multitask)
    tasks = {t: [i for i in insts if i.task == t] for t in order}
    result = train(tasks, cfg, embeddings)
    formats.save_checkpoint(out, result.model, cfg)
    _write_tsv(history, ["epoch", "train_loss", "dev_accuracy", "best"],
               [[h.epoch, h.train_loss, "" if h.dev_accuracy is None else h.dev_accuracy,
                 h.epoch == result.best_epoch] for h in result.history])
    if plot_dir:
        plotting.plot_learning_curve(result.history, Path(plot_dir) / "learning_curve.png",
                                     result.best_epoch)


def _check_consistency(cfg: TrainConfig, variant, edge_policy) -> None:
    if variant and variant != cfg.variant:
        raise click.ClickException(f"checkpoint was trained with --variant {cfg.variant}, "
                                   f"not {variant}")
    if edge_policy and edge_policy != cfg.edge_policy:
        raise click.ClickException(f"checkpoint was trained with --edges {cfg.edge_policy}, "
                                   f"not {edge_policy}")


@main.command("eval")
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--instances", multiple=True, required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--corpus", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--threshold", type=float, multiple=True, default=(0.5,), show_default=True)
@click.option("--variant", type=click.Choice([v.value for v in Variant]), default=None)
@click.option("--edges", "edge_policy", type=click.Choice([p.value for p in EdgePolicy]),
              default=None)
@click.option("--out", type=click.Path(dir_okay=False), default=None)
@click.option("--predictions", type=click.Path(dir_okay=False), default=None,
              help="Per-instance probabilities (input to `mcnemar`).")
@click.option("--plot-dir", type=click.Path(file_okay=False), default=None)
@_fail_on(*_DATA_ERRORS)
def eval_cmd(checkpoint, instances, corpus, threshold, variant, edge_policy, out,
             predictions, plot_dir):
    """Score labeled instances with a trained checkpoint."""
    model, cfg = formats.load_checkpoint(checkpoint)
    _check_consistency(cfg, variant, edge_policy)
    docs = _load_docs(corpus)
    insts, _ = _load_instances(instances, docs, cfg.edge_policy)
    probs = predict_proba(model, insts)
    rows = []
    for task in dict.fromkeys(i.task for i in insts):
        idx = [k for k, i in enumerate(insts) if i.task == task]
        for t in threshold:
            m = Metrics.from_predictions([probs[k] for k in idx], [insts[k].label for k in idx], t)
            rows.append([task, t, *_metric_cells(m)])
    _write_tsv(out, ["task", "threshold", *METRIC_COLS], rows)
    if predictions:
        _write_predictions(predictions, insts, probs)
    if plot_dir:
        plotting.plot_score_histogram(probs, [i.label for i in insts],
                                      Path(plot_dir) / "scores.png", threshold)


def _write_predictions(path, insts, probs, folds=None):
    header = ["doc_id", "task", "first_sentence", "last_sentence", "mentions", "label",
              "probability"] + (["fold"] if folds is not None else [])
    rows = []
    for k, (i, p) in enumerate(zip(insts, probs)):
        row = [i.doc_id, i.task, i.first_sentence, i.last_sentence,
               ",".join(m.id for m in i.mentions), i.label, p]
        rows.append(row + ([folds[k]] if folds is not None else []))
    _write_tsv(path, header, rows)


@main.command("crossval")
@click.option("--instances", multiple=True, required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--corpus", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--embeddings", type=click.Path(dir_okay=False), default=None)
@click.option("--multitask", default=None, help="Comma-separated task order; first is main.")
@click.option("--threshold", type=float, default=0.5, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None)
@click.option("--predictions", type=click.Path(dir_okay=False), default=None)
@click.option("--plot-dir", type=click.Path(file_okay=False), default=None)
@config_options
@_fail_on(*_DATA_ERRORS)
def crossval_cmd(instances, corpus, embeddings, multitask, threshold, out, predictions,
                 plot_dir, **kwargs):
    """Document-level k-fold cross-validation (folds come from the instance files)."""
    cfg = _config_from(kwargs)
    docs = _load_docs(corpus)
    insts, folds = _load_instances(instances, docs, cfg.edge_policy)
    if any(f < 0 for f in folds):
        raise click.ClickException("every instance needs a fold (see build-dataset --folds)")
    order = _task_order(insts, multitask)
    keep = [k for k, i in enumerate(insts) if i.task in order]
    insts, folds = [insts[k] for k in keep], [folds[k] for k in keep]
    res = crossval(insts, folds, cfg, order, embeddings, threshold)
    rows = [[r.fold, order[0], len(r.gold), *_metric_cells(r.metrics)] for r in res.folds]
    rows.append(["mean", order[0], sum(len(r.gold) for r in res.folds),
                 *_metric_cells(res.mean)])
    _write_tsv(out, ["fold", "task", "n", *METRIC_COLS], rows)
    if predictions:
        test_insts, probs, fold_col = [], [], []
        for r in res.folds:
            fold_insts = [i for i, f in zip(insts, folds) if f == r.fold and i.task == order[0]]
            test_insts += fold_insts
            probs += r.probs
            fold_col += [r.fold] * len(fold_insts)
        _write_predictions(predictions, test_insts, probs, fold_col)
    if plot_dir:
        plotting.plot_fold_metrics([r.fold for r in res.folds],
                                   [r.metrics.accuracy for r in res.folds],
                                   Path(plot_dir) / "fold_metrics.png",
                                   [r.metrics.f1 for r in res.folds])


def _extract_doc(model, doc: Document, k: int, policy: str) -> list[list]:
    rows = []
    for task, head in model.heads.items():
        cands = generate_candidates(doc, head.roles, k)
        if not cands:
            continue
        insts = [formats.make_instance(doc, [m.id for m in c.mentions], task, False,
                                       c.first, c.last, policy) for c in cands]
        for c, p in zip(cands, predict_proba(model, insts)):
            rows.append([doc.doc_id, task, c.first, c.last, ",".join(m.id for m in c.mentions),
                         ",".join(c.canonical), p])
    return rows


@main.command("extract")
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--corpus", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--k-sentences", type=int, default=None,
              help="Candidate window (defaults to the checkpoint's).")
@click.option("--threshold", type=float, default=0.5, show_default=True)
@click.option("--jobs", type=int, default=1, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None)
@_fail_on(*_DATA_ERRORS)
def extract_cmd(checkpoint, corpus, k_sentences, threshold, jobs, out):
    """Emit every candidate tuple scoring at or above the threshold."""
    model, cfg = formats.load_checkpoint(checkpoint)
    k = k_sentences or cfg.k_sentences
    docs = formats.read_corpus(corpus)
    work = functools.partial(_extract_doc, model, k=k, policy=cfg.edge_policy)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            per_doc = list(pool.map(work, docs))
    else:
        per_doc = [work(d) for d in docs]
    rows = [r for rows in per_doc for r in rows if r[-1] >= threshold]
    rows.sort(key=lambda r: (r[0], r[2], r[5], r[1], r[4]))
    _write_tsv(out, ["doc_id", "task", "first_sentence", "last_sentence", "mentions",
                     "canonical", "probability"], rows)


@main.command("gradcheck")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--instances", "n_instances", type=int, default=20, show_default=True)
@click.option("--variant", type=click.Choice(["both", "full", "embed"]), default="both",
              show_default=True)
@click.option("--tol", type=float, default=1e-4, show_default=True)
@click.option("--plot-dir", type=click.Path(file_okay=False), default=None)
def gradcheck_cmd(seed, n_instances, variant, tol, plot_dir):
    """Compare analytic gradients with central finite differences."""
    from .gradcheck import run_gradcheck

    variants = ("full", "embed") if variant == "both" else (variant,)
    reports = run_gradcheck(seed, n_instances, variants)
    worst = 0.0
    for name, rep in reports.items():
        worst = max(worst, rep.max_rel_error)
        click.echo(f"{name}\tinstances={rep.instances}\tcoordinates={rep.coordinates}\t"
                   f"max_rel_err={rep.max_rel_error:.3e}")
    ok = all(rep.passed(tol) for rep in reports.values())
    click.echo(f"{'PASS' if ok else 'FAIL'}, max rel err {worst:.3e} "
               f"{'<' if ok else '>='} {tol:.0e}")
    if plot_dir:
        plotting.plot_gradcheck_errors({k: r.errors for k, r in reports.items()},
                                       Path(plot_dir) / "gradcheck.png", tol)
    if not ok:
        sys.exit(1)


def _read_predictions(path):
    with open(path, encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh, delimiter="\t"))
    key = lambda r: (r["doc_id"], r["task"], r["mentions"], r["first_sentence"])  # noqa: E731
    return {key(r): (float(r["probability"]), r["label"] == "true") for r in rows}


@main.command("mcnemar")
@click.argument("predictions_a", type=click.Path(exists=True, dir_okay=False))
@click.argument("predictions_b", type=click.Path(exists=True, dir_okay=False))
@click.option("--threshold", type=float, default=0.5, show_default=True)
def mcnemar_cmd(predictions_a, predictions_b, threshold):
    """McNemar's test between two prediction files over their shared instances."""
    a, b = _read_predictions(predictions_a), _read_predictions(predictions_b)
    shared = sorted(a.keys() & b.keys())
    if not shared:
        raise click.ClickException("the prediction files share no instances")
    gold = [a[k][1] for k in shared]
    stat, p = mcnemar([a[k][0] >= threshold for k in shared],
                      [b[k][0] >= threshold for k in shared], gold)
    _write_tsv(None, ["n", "statistic", "p_value"], [[len(shared), stat, p]])


if __name__ == "__main__":  # pragma: no cover
    main()
