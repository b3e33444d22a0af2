import json

import numpy as np
import pytest

from cts.corpus import MULTI_CLASS, MULTI_LABEL, Corpus, Ontology, Post
from cts.encoder import EmbeddingMatrix

ACCEPTANCE_LINES: list[tuple[int, str]] = []


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "acceptance(num, description): an acceptance criterion"
    )


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker and rep.when == "call":
        num, desc = marker.args
        status = "PASS" if rep.passed else "FAIL"
        ACCEPTANCE_LINES.append((num, f"criterion {num:2d}: {status}  {desc}"))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


def make_corpus(assignments, task_kind=MULTI_CLASS, label_names=None, name="toy"):
    """Corpus from [(id, event, labels)] with synthetic text."""
    n_labels = max(max(labs) for _, _, labs in assignments) + 1
    labels = tuple(label_names or [f"L{i}" for i in range(n_labels)])
    ontology = Ontology(task_kind=task_kind, labels=labels)
    posts = tuple(
        Post(id=pid, event_id=ev, text=f"post {pid}", labels=frozenset(labs))
        for pid, ev, labs in assignments
    )
    return Corpus(name, ontology, posts)


def cluster_corpus(
    n_events,
    n_labels,
    posts_per_cell,
    task_kind=MULTI_CLASS,
    name="clusters",
    irrelevant=(),
):
    """Multi-class corpus with every label present in every event."""
    labels = tuple(f"L{i}" for i in range(n_labels))
    ontology = Ontology(
        task_kind=task_kind, labels=labels, irrelevant_labels=frozenset(irrelevant)
    )
    posts = []
    for e in range(n_events):
        for lab in range(n_labels):
            for k in range(posts_per_cell):
                pid = f"e{e}-l{lab}-{k}"
                posts.append(
                    Post(pid, f"e{e}", f"text {pid}", frozenset({lab}))
                )
    return Corpus(name, ontology, tuple(posts))


def gaussian_embeddings(corpus, dim, noise=0.5, seed=0):
    """Embeddings whose rows carry the label signal of each post.

    Each label gets a random unit mean vector; a post's row is the mean
    of its labels' vectors plus Gaussian noise.
    """
    rng = np.random.default_rng(seed)
    n_labels = corpus.ontology.size
    means = rng.normal(size=(n_labels, dim))
    means /= np.linalg.norm(means, axis=1, keepdims=True)
    rows = []
    for post in corpus.posts:
        mu = np.mean([means[l] for l in post.labels], axis=0)
        rows.append(mu + noise * rng.normal(size=dim))
    return EmbeddingMatrix(
        tuple(p.id for p in corpus.posts), np.asarray(rows, dtype=np.float32)
    )


def write_corpus_files(tmp_path, corpus, prefix="toy"):
    """JSONL + ontology JSON for a corpus; returns (corpus_path, onto_path)."""
    corpus_path = tmp_path / f"{prefix}.jsonl"
    with open(corpus_path, "w", encoding="utf-8") as fh:
        for p in corpus.posts:
            fh.write(
                json.dumps(
                    {
                        "id": p.id,
                        "event": p.event_id,
                        "text": p.text,
                        "labels": [corpus.ontology.labels[i] for i in sorted(p.labels)],
                    }
                )
                + "\n"
            )
    onto_path = tmp_path / f"{prefix}.ontology.json"
    onto_path.write_text(
        json.dumps(
            {
                "task_kind": corpus.ontology.task_kind,
                "labels": list(corpus.ontology.labels),
                "irrelevant_labels": sorted(corpus.ontology.irrelevant_labels),
            }
        )
    )
    return corpus_path, onto_path


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
