"""Corpus data model, JSONL ingestion, and label-level preprocessing.

A corpus is an ontology (multi-class or multi-label) plus posts grouped by
event. Corpus values are immutable after construction and safe to share
across workers. The on-disk formats are:

* corpus: UTF-8 JSONL, one object per line with keys ``id``, ``event``,
  ``text``, ``labels`` (list of label names);
* ontology: a JSON object ``{task_kind, labels[], irrelevant_labels[]}``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import ArgumentError, ParseError, SchemaError

MULTI_CLASS = "multi_class"
MULTI_LABEL = "multi_label"

RELEVANT = "relevant"
IRRELEVANT = "irrelevant"


@dataclass(frozen=True)
class Ontology:
    """Label inventory for a classification task.

    ``irrelevant_labels`` marks the classes collapsed to the irrelevant
    side by :func:`map_to_relevancy`.
    """

    task_kind: str
    labels: tuple[str, ...]
    irrelevant_labels: frozenset[str] = frozenset()

    def __post_init__(self):
        if self.task_kind not in (MULTI_CLASS, MULTI_LABEL):
            raise SchemaError(f"unknown task_kind {self.task_kind!r}")
        if len(set(self.labels)) != len(self.labels):
            raise SchemaError("ontology label names must be unique")
        unknown = set(self.irrelevant_labels) - set(self.labels)
        if unknown:
            raise SchemaError(f"irrelevant_labels not in ontology: {sorted(unknown)}")

    @property
    def size(self) -> int:
        return len(self.labels)

    def index_of(self, name: str) -> int:
        try:
            return self.labels.index(name)
        except ValueError:
            raise SchemaError(f"unknown label name {name!r}") from None


@dataclass(frozen=True)
class Post:
    """One labeled short text with its event id and label-index set."""

    id: str
    event_id: str
    text: str
    labels: frozenset[int]


@dataclass(frozen=True)
class Corpus:
    """Immutable bundle of ontology and posts, with a derived event map."""

    name: str
    ontology: Ontology
    posts: tuple[Post, ...]
    events: Mapping[str, tuple[int, ...]] = field(init=False)

    def __post_init__(self):
        events: dict[str, list[int]] = {}
        for i, post in enumerate(self.posts):
            events.setdefault(post.event_id, []).append(i)
        object.__setattr__(
            self, "events", {e: tuple(idx) for e, idx in events.items()}
        )

    def __len__(self) -> int:
        return len(self.posts)

    @property
    def event_ids(self) -> tuple[str, ...]:
        return tuple(self.events.keys())

    def event_posts(self, event_id: str) -> tuple[int, ...]:
        return self.events[event_id]

    def subset(self, indices: Iterable[int], name: str | None = None) -> "Corpus":
        """New corpus with the selected posts, original order preserved."""
        picked = sorted(set(indices))
        posts = tuple(self.posts[i] for i in picked)
        return Corpus(name or self.name, self.ontology, posts)


def _validate_post(post: Post, ontology: Ontology) -> None:
    if not post.text.strip():
        raise SchemaError(f"post {post.id!r}: empty text")
    if not post.labels:
        raise SchemaError(f"post {post.id!r}: empty label set")
    if ontology.task_kind == MULTI_CLASS and len(post.labels) != 1:
        raise SchemaError(
            f"post {post.id!r}: multi-class post must carry exactly one label"
        )
    bad = [x for x in post.labels if not 0 <= x < ontology.size]
    if bad:
        raise SchemaError(f"post {post.id!r}: label index out of range: {bad}")


def load_ontology(path: str | Path) -> Ontology:
    """Read an ontology JSON file."""
    with open(path, encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid ontology JSON in {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise SchemaError(f"ontology file {path} must hold a JSON object")
    try:
        return Ontology(
            task_kind=raw["task_kind"],
            labels=tuple(raw["labels"]),
            irrelevant_labels=frozenset(raw.get("irrelevant_labels", ())),
        )
    except KeyError as exc:
        raise SchemaError(f"ontology file {path} misses key {exc}") from exc


def save_ontology(ontology: Ontology, path: str | Path) -> None:
    payload = {
        "task_kind": ontology.task_kind,
        "labels": list(ontology.labels),
        "irrelevant_labels": sorted(ontology.irrelevant_labels),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, ensure_ascii=False)
        fh.write("\n")


def load_corpus(path: str | Path, ontology: Ontology, name: str | None = None) -> Corpus:
    """Load a JSONL corpus, resolving label names to ontology indices.

    Input order is preserved. Malformed lines raise :class:`ParseError`
    with the offending line number; unknown label names and duplicate ids
    raise :class:`SchemaError`.
    """
    posts: list[Post] = []
    seen_ids: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", line=lineno) from exc
            if not isinstance(raw, dict):
                raise ParseError("line is not a JSON object", line=lineno)
            try:
                pid = str(raw["id"])
                event = str(raw["event"])
                text = str(raw["text"])
                names = raw["labels"]
            except KeyError as exc:
                raise ParseError(f"missing key {exc}", line=lineno) from exc
            if not isinstance(names, list):
                raise ParseError("labels must be a list of strings", line=lineno)
            if pid in seen_ids:
                raise SchemaError(f"duplicate post id {pid!r} (line {lineno})")
            seen_ids.add(pid)
            labels = frozenset(ontology.index_of(str(n)) for n in names)
            post = Post(id=pid, event_id=event, text=text, labels=labels)
            _validate_post(post, ontology)
            posts.append(post)
    return Corpus(name or Path(path).stem, ontology, tuple(posts))


def save_corpus(corpus: Corpus, path: str | Path) -> None:
    """Serialize a corpus back to JSONL (inverse of :func:`load_corpus`)."""
    with open(path, "w", encoding="utf-8") as fh:
        for post in corpus.posts:
            names = [corpus.ontology.labels[i] for i in sorted(post.labels)]
            fh.write(
                json.dumps(
                    {
                        "id": post.id,
                        "event": post.event_id,
                        "text": post.text,
                        "labels": names,
                    },
                    ensure_ascii=False,
                )
            )
            fh.write("\n")


def filter_labels(corpus: Corpus, drop: Iterable[str]) -> Corpus:
    """Remove labels from the ontology and drop posts left without any.

    Multi-class posts carrying a dropped label are removed outright;
    multi-label posts lose the dropped labels and are removed only when
    their label set becomes empty. The ontology is re-indexed without the
    dropped names. Idempotent.
    """
    drop = set(drop)
    if not drop:
        return corpus
    unknown = drop - set(corpus.ontology.labels)
    if unknown:
        raise SchemaError(f"cannot drop unknown labels: {sorted(unknown)}")

    kept_names = tuple(n for n in corpus.ontology.labels if n not in drop)
    remap = {corpus.ontology.index_of(n): i for i, n in enumerate(kept_names)}
    new_ontology = Ontology(
        task_kind=corpus.ontology.task_kind,
        labels=kept_names,
        irrelevant_labels=frozenset(corpus.ontology.irrelevant_labels) - drop,
    )

    posts: list[Post] = []
    for post in corpus.posts:
        labels = frozenset(remap[x] for x in post.labels if x in remap)
        if not labels:
            continue
        posts.append(Post(post.id, post.event_id, post.text, labels))
    return Corpus(corpus.name, new_ontology, tuple(posts))


def select_top_events(corpus: Corpus, k: int) -> Corpus:
    """Keep the k events with the most posts, ties broken by event id."""
    n_events = len(corpus.events)
    if k < 1 or k > n_events:
        raise ArgumentError(f"k={k} out of range for {n_events} events")
    ranked = sorted(corpus.events, key=lambda e: (-len(corpus.events[e]), e))
    keep = set(ranked[:k])
    indices = [i for i, p in enumerate(corpus.posts) if p.event_id in keep]
    return corpus.subset(indices)


def map_to_relevancy(corpus: Corpus) -> Corpus:
    """Collapse the ontology to a binary {irrelevant, relevant} task.

    A post is irrelevant iff its whole label set falls inside the
    ontology's irrelevant labels; everything else is relevant.
    """
    if not corpus.ontology.irrelevant_labels:
        raise ArgumentError("ontology declares no irrelevant labels")
    irrelevant_idx = {
        corpus.ontology.index_of(n) for n in corpus.ontology.irrelevant_labels
    }
    binary = Ontology(
        task_kind=MULTI_CLASS,
        labels=(IRRELEVANT, RELEVANT),
        irrelevant_labels=frozenset({IRRELEVANT}),
    )
    posts = tuple(
        Post(
            p.id,
            p.event_id,
            p.text,
            frozenset({0 if p.labels <= irrelevant_idx else 1}),
        )
        for p in corpus.posts
    )
    return Corpus(corpus.name, binary, posts)


def labels_of(corpus: Corpus) -> list[frozenset[int]]:
    """Label sets for all posts, aligned with post order."""
    return [p.labels for p in corpus.posts]


def single_labels_of(corpus: Corpus) -> list[int]:
    """Single label index per post; only valid for multi-class corpora."""
    if corpus.ontology.task_kind != MULTI_CLASS:
        raise ArgumentError("single_labels_of requires a multi-class corpus")
    return [next(iter(p.labels)) for p in corpus.posts]
