import pytest

from graphrel.docgraph import Document
from graphrel.numeric import make_rng

# "All patients were treated with gefitinib and showed a partial response."
FIG3_WORDS = ["All", "patients", "were", "treated", "with", "gefitinib", "and", "showed",
              "a", "partial", "response"]
FIG3_DEPS = [(1, 0, "det"), (3, 1, "nsubjpass"), (3, 2, "auxpass"), (3, 5, "prep_with"),
             (3, 7, "conj_and"), (-1, 3, "root"), (7, 10, "dobj"), (10, 8, "det"),
             (10, 9, "amod")]


def make_doc(words, deps=(), sentences=None, entities=(), coref=(), discourse=(),
             doc_id="d0"):
    sentences = sentences or [0] * len(words)
    return Document.from_dict({
        "doc_id": doc_id,
        "tokens": [{"text": w, "sentence": s} for w, s in zip(words, sentences)],
        "deps": [{"head": h, "mod": m, "label": lab} for h, m, lab in deps],
        "entities": [dict(zip(("id", "type", "start", "end", "canonical"), e))
                     for e in entities],
        "coref": [{"src": a, "dst": b, "label": lab} for a, b, lab in coref],
        "discourse": [{"src": a, "dst": b, "label": lab} for a, b, lab in discourse],
    })


@pytest.fixture
def fig3_doc():
    return make_doc(FIG3_WORDS, FIG3_DEPS,
                    entities=[("T1", "drug", 5, 5, "gefitinib")])


@pytest.fixture
def rng():
    return make_rng(1234)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def synthetic_instances(n_docs, seed, task="dgm", policy="full", aux=None):
    """Instances over the planted-trigger corpus: drug-gene-mutation triples
    spanning both sentences, plus optional drug-gene pairs as an auxiliary task."""
    from graphrel.formats import make_instance
    from graphrel.numeric import make_rng
    from graphrel.synthetic import synthetic_corpus

    corpus = synthetic_corpus(n_docs, make_rng(seed))
    main = [make_instance(d, ["T1", "T2", "T3"], task, y, 0, 1, policy)
            for d, y in zip(corpus.docs, corpus.labels)]
    if aux is None:
        return main
    pairs = [make_instance(d, ["T1", "T2"], aux, y, 0, 0, policy)
             for d, y in zip(corpus.docs, corpus.labels)]
    return main, pairs
