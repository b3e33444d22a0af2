import itertools

import numpy as np
import pytest

from cts.errors import ArgumentError, DegenerateInputError, FormatError
from cts.pairgen import (
    PairGenConfig,
    PairSet,
    SentencePair,
    generate_pairs_multiclass,
    generate_pairs_multilabel,
    load_pairs,
    save_pairs,
)


# -------------------------------------------------------- brute-force oracle

def expected_counts_multiclass(labels, n):
    """Independent count oracle: per anchor and iteration, one positive if
    the anchor's class has another member, and always one negative."""
    pos = sum(1 for i, l in enumerate(labels) if labels.count(l) > 1)
    return n * pos, n * len(labels)


def expected_counts_multilabel(sets, n):
    pos = neg = 0
    for i, ls in enumerate(sets):
        partners = sum(
            1 for lab in ls if any(lab in sets[j] for j in range(len(sets)) if j != i)
        )
        disjoint = sum(1 for j in range(len(sets)) if not (sets[j] & ls))
        pos += partners
        neg += min(partners, disjoint)
    return n * pos, n * neg


def check_admissibility_multiclass(pairs: PairSet, labels):
    for i, j in pairs.pos:
        assert i != j and labels[i] == labels[j]
    for i, j in pairs.neg:
        assert i != j and labels[i] != labels[j]
    for i, j in (*pairs.pos, *pairs.neg):
        assert 0 <= i < len(labels) and 0 <= j < len(labels)


def check_admissibility_multilabel(pairs: PairSet, sets):
    for i, j in pairs.pos:
        assert i != j and (sets[i] & sets[j])
    for i, j in pairs.neg:
        assert i != j and not (sets[i] & sets[j])


class TestMulticlass:
    def test_balanced_two_classes(self):
        pairs = generate_pairs_multiclass([0, 0, 1, 1], PairGenConfig(n=1, seed=0))
        assert len(pairs.pos) == 4 and len(pairs.neg) == 4
        check_admissibility_multiclass(pairs, [0, 0, 1, 1])

    def test_linear_in_n(self):
        pairs = generate_pairs_multiclass([0, 0, 1, 1], PairGenConfig(n=5, seed=0))
        assert len(pairs.pos) == 20 and len(pairs.neg) == 20

    def test_singleton_class_skips_positive(self):
        pairs = generate_pairs_multiclass([0, 1, 1], PairGenConfig(n=1, seed=0))
        assert len(pairs.pos) == 2 and len(pairs.neg) == 3
        check_admissibility_multiclass(pairs, [0, 1, 1])

    def test_single_class_degenerate(self):
        with pytest.raises(DegenerateInputError):
            generate_pairs_multiclass([0, 0, 0], PairGenConfig(n=1, seed=0))

    def test_deterministic(self):
        cfg = PairGenConfig(n=3, seed=99)
        a = generate_pairs_multiclass([0, 1, 0, 2, 1], cfg)
        b = generate_pairs_multiclass([0, 1, 0, 2, 1], cfg)
        assert a == b

    def test_exhaustive_small_corpora(self):
        # all label assignments for up to 6 posts over up to 3 labels
        for size in range(2, 7):
            for labels in itertools.product(range(3), repeat=size):
                labels = list(labels)
                for n in (1, 5):
                    cfg = PairGenConfig(n=n, seed=size * 31 + n)
                    if len(set(labels)) < 2:
                        with pytest.raises(DegenerateInputError):
                            generate_pairs_multiclass(labels, cfg)
                        continue
                    pairs = generate_pairs_multiclass(labels, cfg)
                    exp_pos, exp_neg = expected_counts_multiclass(labels, n)
                    assert len(pairs.pos) == exp_pos
                    assert len(pairs.neg) == exp_neg
                    check_admissibility_multiclass(pairs, labels)

    def test_random_larger_corpora(self, rng):
        # 7-8 posts, sampled assignments
        for trial in range(60):
            size = int(rng.integers(7, 9))
            labels = [int(rng.integers(3)) for _ in range(size)]
            if len(set(labels)) < 2:
                continue
            for n in (1, 5):
                pairs = generate_pairs_multiclass(labels, PairGenConfig(n=n, seed=trial))
                assert (len(pairs.pos), len(pairs.neg)) == expected_counts_multiclass(labels, n)
                check_admissibility_multiclass(pairs, labels)


class TestMultilabel:
    def test_reduces_to_multiclass(self):
        sets = [{0}, {0}, {1}, {1}]
        pairs = generate_pairs_multilabel(sets, PairGenConfig(n=1, seed=0))
        assert len(pairs.pos) == 4 and len(pairs.neg) == 4
        check_admissibility_multilabel(pairs, [frozenset(s) for s in sets])

    def test_anchor_with_two_labels(self):
        # anchor {A,B}; one partner per label; negatives from the {C} posts
        sets = [{0, 1}, {0}, {1}, {2}, {2}]
        pairs = generate_pairs_multilabel(sets, PairGenConfig(n=1, seed=0))
        anchor_pos = [p for p in pairs.pos if p[0] == 0]
        anchor_neg = [p for p in pairs.neg if p[0] == 0]
        assert len(anchor_pos) == 2
        assert len(anchor_neg) == 2
        assert all(j in (3, 4) for _, j in anchor_neg)

    def test_unique_label_anchor_has_no_positives(self):
        sets = [{2}, {0}, {0}, {1}, {1}]
        pairs = generate_pairs_multilabel(sets, PairGenConfig(n=1, seed=0))
        assert not [p for p in pairs.pos if p[0] == 0]

    def test_no_disjoint_pair_degenerate(self):
        # every pair of label sets overlaps
        with pytest.raises(DegenerateInputError):
            generate_pairs_multilabel(
                [{0, 1}, {0, 2}, {1, 2}], PairGenConfig(n=1, seed=0)
            )

    def test_exhaustive_small_corpora(self):
        # all non-empty label subsets over 2 labels, up to 4 posts;
        # plus 3-label subsets for 3 posts
        subsets2 = [frozenset(s) for s in ({0}, {1}, {0, 1})]
        for size in (2, 3, 4):
            for sets in itertools.product(subsets2, repeat=size):
                self._check_case(list(sets), base_seed=size)
        subsets3 = [
            frozenset(s)
            for s in ({0}, {1}, {2}, {0, 1}, {0, 2}, {1, 2}, {0, 1, 2})
        ]
        for sets in itertools.product(subsets3, repeat=3):
            self._check_case(list(sets), base_seed=77)

    def _check_case(self, sets, base_seed):
        degenerate = not any(
            not (sets[i] & sets[j])
            for i in range(len(sets))
            for j in range(len(sets))
            if i != j
        )
        for n in (1, 5):
            cfg = PairGenConfig(n=n, seed=base_seed + n)
            if degenerate:
                with pytest.raises(DegenerateInputError):
                    generate_pairs_multilabel(sets, cfg)
                continue
            pairs = generate_pairs_multilabel(sets, cfg)
            assert (len(pairs.pos), len(pairs.neg)) == expected_counts_multilabel(sets, n)
            check_admissibility_multilabel(pairs, sets)

    def test_random_larger_corpora(self, rng):
        for trial in range(60):
            size = int(rng.integers(5, 9))
            sets = [
                frozenset(
                    int(x)
                    for x in rng.choice(3, size=int(rng.integers(1, 4)), replace=False)
                )
                for _ in range(size)
            ]
            has_disjoint = any(
                not (sets[i] & sets[j])
                for i in range(size)
                for j in range(size)
                if i != j
            )
            if not has_disjoint:
                continue
            for n in (1, 5):
                pairs = generate_pairs_multilabel(sets, PairGenConfig(n=n, seed=trial))
                assert (len(pairs.pos), len(pairs.neg)) == expected_counts_multilabel(sets, n)
                check_admissibility_multilabel(pairs, sets)

    def test_deterministic(self):
        sets = [{0, 1}, {0}, {1}, {2}]
        cfg = PairGenConfig(n=2, seed=5)
        assert generate_pairs_multilabel(sets, cfg) == generate_pairs_multilabel(sets, cfg)


class TestConfigAndSerialization:
    def test_n_validation(self):
        with pytest.raises(ArgumentError):
            PairGenConfig(n=0)

    def test_self_pair_rejected(self):
        with pytest.raises(ArgumentError):
            SentencePair(1, 1, "positive")

    def test_dedup(self):
        labels = [0, 0, 1, 1]
        raw = generate_pairs_multiclass(labels, PairGenConfig(n=10, seed=0))
        deduped = generate_pairs_multiclass(labels, PairGenConfig(n=10, seed=0, dedup=True))
        assert len(set(deduped.pos)) == len(deduped.pos)
        assert set(deduped.pos) == set(raw.pos)
        assert set(deduped.neg) == set(raw.neg)

    def test_csv_round_trip(self, tmp_path):
        pairs = generate_pairs_multiclass([0, 0, 1, 1, 2], PairGenConfig(n=2, seed=1))
        path = tmp_path / "pairs.csv"
        save_pairs(pairs, path)
        assert load_pairs(path) == pairs

    def test_csv_bad_header(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b\n1,2\n")
        with pytest.raises(FormatError):
            load_pairs(path)
