import itertools
import json

import numpy as np
import pytest

from cts.corpus import (
    IRRELEVANT,
    MULTI_CLASS,
    MULTI_LABEL,
    RELEVANT,
    Corpus,
    Ontology,
    Post,
    filter_labels,
    load_corpus,
    load_ontology,
    map_to_relevancy,
    save_corpus,
    save_ontology,
    select_top_events,
)
from cts.errors import ArgumentError, ParseError, SchemaError

from conftest import make_corpus


def onto(labels, kind=MULTI_CLASS, irrelevant=()):
    return Ontology(task_kind=kind, labels=tuple(labels),
                    irrelevant_labels=frozenset(irrelevant))


def write_lines(tmp_path, lines, name="c.jsonl"):
    path = tmp_path / name
    path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
    return path


class TestLoadCorpus:
    def test_single_line(self, tmp_path):
        path = write_lines(tmp_path, [
            '{"id":"1","event":"e1","text":"flood","labels":["Affected individuals"]}'
        ])
        corpus = load_corpus(path, onto(["Affected individuals", "Other"]))
        assert len(corpus) == 1
        assert corpus.posts[0].labels == frozenset({0})
        assert corpus.posts[0].event_id == "e1"

    def test_empty_file(self, tmp_path):
        path = write_lines(tmp_path, [])
        corpus = load_corpus(path, onto(["A", "B"]))
        assert len(corpus) == 0
        assert corpus.events == {}

    def test_shared_event_map(self, tmp_path):
        path = write_lines(tmp_path, [
            '{"id":"1","event":"e1","text":"a","labels":["A"]}',
            '{"id":"2","event":"e1","text":"b","labels":["B"]}',
        ])
        corpus = load_corpus(path, onto(["A", "B"]))
        assert corpus.events == {"e1": (0, 1)}

    def test_malformed_line_reports_number(self, tmp_path):
        path = write_lines(tmp_path, [
            '{"id":"1","event":"e1","text":"a","labels":["A"]}',
            "{not json",
        ])
        with pytest.raises(ParseError, match="line 2"):
            load_corpus(path, onto(["A", "B"]))

    def test_unknown_label(self, tmp_path):
        path = write_lines(tmp_path, [
            '{"id":"1","event":"e1","text":"a","labels":["Nope"]}'
        ])
        with pytest.raises(SchemaError, match="Nope"):
            load_corpus(path, onto(["A", "B"]))

    def test_duplicate_id(self, tmp_path):
        path = write_lines(tmp_path, [
            '{"id":"1","event":"e1","text":"a","labels":["A"]}',
            '{"id":"1","event":"e2","text":"b","labels":["B"]}',
        ])
        with pytest.raises(SchemaError, match="duplicate"):
            load_corpus(path, onto(["A", "B"]))

    def test_missing_key(self, tmp_path):
        path = write_lines(tmp_path, ['{"id":"1","event":"e1","text":"a"}'])
        with pytest.raises(ParseError, match="line 1"):
            load_corpus(path, onto(["A"]))

    def test_multiclass_rejects_two_labels(self, tmp_path):
        path = write_lines(tmp_path, [
            '{"id":"1","event":"e1","text":"a","labels":["A","B"]}'
        ])
        with pytest.raises(SchemaError, match="exactly one"):
            load_corpus(path, onto(["A", "B"]))

    def test_empty_text_rejected(self, tmp_path):
        path = write_lines(tmp_path, [
            '{"id":"1","event":"e1","text":"  ","labels":["A"]}'
        ])
        with pytest.raises(SchemaError, match="empty text"):
            load_corpus(path, onto(["A", "B"]))

    def test_round_trip_fixed_point(self, tmp_path):
        ontology = onto(["A", "B", "C"], kind=MULTI_LABEL)
        path = write_lines(tmp_path, [
            '{"id":"1","event":"e1","text":"ünïcode","labels":["A","C"]}',
            '{"id":"2","event":"e2","text":"b","labels":["B"]}',
        ])
        first = load_corpus(path, ontology)
        out = tmp_path / "again.jsonl"
        save_corpus(first, out)
        second = load_corpus(out, ontology)
        assert first.posts == second.posts
        out2 = tmp_path / "third.jsonl"
        save_corpus(second, out2)
        assert out.read_text() == out2.read_text()


class TestOntologyFile:
    def test_round_trip(self, tmp_path):
        ontology = onto(["A", "B"], kind=MULTI_LABEL, irrelevant=["B"])
        path = tmp_path / "o.json"
        save_ontology(ontology, path)
        assert load_ontology(path) == ontology

    def test_bad_json(self, tmp_path):
        path = tmp_path / "o.json"
        path.write_text("{nope")
        with pytest.raises(ParseError):
            load_ontology(path)

    def test_duplicate_labels_rejected(self):
        with pytest.raises(SchemaError):
            onto(["A", "A"])

    def test_irrelevant_must_be_subset(self):
        with pytest.raises(SchemaError):
            onto(["A"], irrelevant=["B"])


class TestFilterLabels:
    def test_multiclass_removal(self):
        corpus = make_corpus([
            ("1", "e1", {0}), ("2", "e1", {0}), ("3", "e2", {2}), ("4", "e2", {1}),
        ], label_names=["A", "B", "Drop"])
        out = filter_labels(corpus, {"Drop"})
        assert len(out) == 3
        assert out.ontology.labels == ("A", "B")

    def test_multilabel_set_difference(self):
        corpus = make_corpus(
            [("1", "e1", {0, 1})], task_kind=MULTI_LABEL, label_names=["Drop", "B"]
        )
        out = filter_labels(corpus, {"Drop"})
        assert len(out) == 1
        assert out.posts[0].labels == frozenset({0})
        assert out.ontology.labels == ("B",)

    def test_multilabel_empty_set_removed(self):
        corpus = make_corpus(
            [("1", "e1", {0}), ("2", "e1", {1})],
            task_kind=MULTI_LABEL,
            label_names=["Drop", "B"],
        )
        out = filter_labels(corpus, {"Drop"})
        assert [p.id for p in out.posts] == ["2"]

    def test_unknown_drop_label(self):
        corpus = make_corpus([("1", "e1", {0})], label_names=["A"])
        with pytest.raises(SchemaError):
            filter_labels(corpus, {"Nope"})

    def test_idempotent(self, rng):
        for trial in range(20):
            n = int(rng.integers(3, 15))
            assignments = [
                (str(i), f"e{int(rng.integers(3))}",
                 set(rng.choice(4, size=int(rng.integers(1, 4)), replace=False)))
                for i in range(n)
            ]
            corpus = make_corpus(assignments, task_kind=MULTI_LABEL,
                                 label_names=["A", "B", "C", "D"])
            once = filter_labels(corpus, {"B"})
            twice = filter_labels(once, set())
            assert once.posts == twice.posts
            assert once.ontology == twice.ontology


class TestSelectTopEvents:
    def test_basic_selection(self):
        corpus = make_corpus(
            [("1", "e1", {0})] * 0
            + [(f"a{i}", "e1", {0}) for i in range(5)]
            + [(f"b{i}", "e2", {0}) for i in range(3)]
            + [("c0", "e3", {1})]
        )
        out = select_top_events(corpus, 2)
        assert set(out.events) == {"e1", "e2"}

    def test_tie_break_lexicographic(self):
        corpus = make_corpus(
            [(f"a{i}", "e2", {0}) for i in range(5)]
            + [(f"b{i}", "e1", {1}) for i in range(5)]
        )
        out = select_top_events(corpus, 1)
        assert set(out.events) == {"e1"}

    def test_identity_when_k_equals_count(self):
        corpus = make_corpus([("1", "e1", {0}), ("2", "e2", {1})])
        out = select_top_events(corpus, 2)
        assert out.posts == corpus.posts

    def test_k_out_of_range(self):
        corpus = make_corpus([("1", "e1", {0}), ("2", "e2", {1})])
        with pytest.raises(ArgumentError):
            select_top_events(corpus, 3)

    def test_post_count_matches_brute_force(self, rng):
        for trial in range(20):
            n_events = int(rng.integers(3, 8))
            assignments = []
            for e in range(n_events):
                for i in range(int(rng.integers(1, 6))):
                    assignments.append((f"p{e}-{i}", f"e{e}", {int(rng.integers(2))}))
            corpus = make_corpus(assignments)
            k = int(rng.integers(1, n_events + 1))
            out = select_top_events(corpus, k)
            expected = sum(sorted((len(v) for v in corpus.events.values()),
                                  reverse=True)[:k])
            assert len(out) == expected


class TestMapToRelevancy:
    def canonical(self):
        return make_corpus(
            [("1", "e1", {0}), ("2", "e1", {1})],
            label_names=["Not Related", "Infrastructure"],
        )

    def test_irrelevant_class(self):
        corpus = Corpus(
            "c",
            onto(["Not Related", "Infrastructure"], irrelevant=["Not Related"]),
            self.canonical().posts,
        )
        out = map_to_relevancy(corpus)
        assert out.ontology.labels == (IRRELEVANT, RELEVANT)
        assert out.posts[0].labels == frozenset({0})
        assert out.posts[1].labels == frozenset({1})

    def test_multilabel_subset_rule_all_combinations(self):
        ontology = onto(["Not Related", "Factoid"], kind=MULTI_LABEL,
                        irrelevant=["Not Related"])
        combos = [{0}, {1}, {0, 1}]
        posts = tuple(
            Post(str(i), "e1", f"t{i}", frozenset(c)) for i, c in enumerate(combos)
        )
        out = map_to_relevancy(Corpus("c", ontology, posts))
        # irrelevant iff the label set is contained in the irrelevant labels
        expected = [1 if not c <= {0} else 0 for c in combos]
        assert [next(iter(p.labels)) for p in out.posts] == expected

    def test_requires_irrelevant_labels(self):
        with pytest.raises(ArgumentError):
            map_to_relevancy(self.canonical())

    def test_binary_output_preserves_count(self):
        corpus = Corpus(
            "c",
            onto(["Not Related", "Infrastructure"], irrelevant=["Not Related"]),
            self.canonical().posts,
        )
        out = map_to_relevancy(corpus)
        assert out.ontology.size == 2
        assert len(out) == len(corpus)
        assert out.ontology.task_kind == MULTI_CLASS
