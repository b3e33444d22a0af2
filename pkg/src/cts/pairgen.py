"""Positive/negative sentence-pair construction from label supervision.

Pairs drive the contrastive specialization stage: a positive pair shares
at least one label, a negative pair shares none. Generation runs ``n``
iterations over every anchor sentence; sampling is with replacement
across iterations and without replacement within one anchor draw, so the
emitted counts scale linearly in ``n``. Duplicate pairs are allowed by
default (they re-weight hard examples); set ``dedup`` to drop them.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ArgumentError, DegenerateInputError, FormatError

log = logging.getLogger(__name__)

POSITIVE = "positive"
NEGATIVE = "negative"


@dataclass(frozen=True)
class SentencePair:
    i: int
    j: int
    polarity: str

    def __post_init__(self):
        if self.i == self.j:
            raise ArgumentError("self-pairs are not allowed")
        if self.polarity not in (POSITIVE, NEGATIVE):
            raise ArgumentError(f"bad polarity {self.polarity!r}")


@dataclass(frozen=True)
class PairGenConfig:
    """``n`` pair-generation iterations; 1 suits high-data, 5 low-data."""

    n: int = 1
    seed: int = 0
    dedup: bool = False

    def __post_init__(self):
        if self.n < 1:
            raise ArgumentError(f"n must be >= 1, got {self.n}")


@dataclass(frozen=True)
class PairSet:
    """Index pairs split by polarity, over one embedding/label sequence."""

    pos: tuple[tuple[int, int], ...]
    neg: tuple[tuple[int, int], ...]

    def __len__(self) -> int:
        return len(self.pos) + len(self.neg)

    def pairs(self) -> list[SentencePair]:
        out = [SentencePair(i, j, POSITIVE) for i, j in self.pos]
        out += [SentencePair(i, j, NEGATIVE) for i, j in self.neg]
        return out


def _dedup(pairs: list[tuple[int, int]]) -> tuple[tuple[int, int], ...]:
    seen: set[tuple[int, int]] = set()
    out = []
    for p in pairs:
        if p not in seen:
            seen.add(p)
            out.append(p)
    return tuple(out)


def generate_pairs_multiclass(
    labels: Sequence[int], config: PairGenConfig
) -> PairSet:
    """SetFit-style sampling for single-label data.

    Per iteration and per anchor: one uniformly drawn positive partner
    (same label, not the anchor) and one negative partner (different
    label). Anchors whose class has a single member contribute no
    positive pair but still contribute negatives.
    """
    n_posts = len(labels)
    by_label: dict[int, list[int]] = {}
    for idx, lab in enumerate(labels):
        by_label.setdefault(int(lab), []).append(idx)
    if len(by_label) < 2:
        raise DegenerateInputError(
            "pair generation needs at least two distinct labels"
        )
    singletons = sorted(lab for lab, members in by_label.items() if len(members) == 1)
    if singletons:
        log.warning(
            "classes %s have a single member; their anchors emit no positive pairs",
            singletons,
        )

    others = {
        lab: [i for i in range(n_posts) if labels[i] != lab] for lab in by_label
    }
    rng = np.random.default_rng(np.random.SeedSequence(config.seed))
    pos: list[tuple[int, int]] = []
    neg: list[tuple[int, int]] = []
    for _ in range(config.n):
        for anchor in range(n_posts):
            lab = int(labels[anchor])
            same = [i for i in by_label[lab] if i != anchor]
            if same:
                pos.append((anchor, same[int(rng.integers(len(same)))]))
            pool = others[lab]
            neg.append((anchor, pool[int(rng.integers(len(pool)))]))
    if config.dedup:
        return PairSet(_dedup(pos), _dedup(neg))
    return PairSet(tuple(pos), tuple(neg))


def generate_pairs_multilabel(
    labelsets: Sequence[Iterable[int]], config: PairGenConfig
) -> PairSet:
    """Label-set sampling for multi-label data.

    Per iteration and per anchor: one positive partner per anchor label
    (a different post carrying that label, when one exists), then an
    equal number of negative partners drawn without replacement from the
    posts whose label sets are disjoint from the anchor's.
    """
    sets = [frozenset(int(x) for x in ls) for ls in labelsets]
    if len(sets) < 2:
        raise ArgumentError("need at least 2 posts")
    members: dict[int, list[int]] = {}
    for idx, ls in enumerate(sets):
        for lab in ls:
            members.setdefault(lab, []).append(idx)
    disjoint = [
        [j for j in range(len(sets)) if not sets[j] & sets[i]]
        for i in range(len(sets))
    ]
    if not any(disjoint):
        raise DegenerateInputError(
            "no pair of posts with disjoint label sets exists"
        )

    rng = np.random.default_rng(np.random.SeedSequence(config.seed))
    pos: list[tuple[int, int]] = []
    neg: list[tuple[int, int]] = []
    for _ in range(config.n):
        for anchor, ls in enumerate(sets):
            drawn = 0
            for lab in sorted(ls):
                pool = [j for j in members[lab] if j != anchor]
                if pool:
                    pos.append((anchor, pool[int(rng.integers(len(pool)))]))
                    drawn += 1
            take = min(drawn, len(disjoint[anchor]))
            if take:
                picked = rng.choice(len(disjoint[anchor]), size=take, replace=False)
                neg.extend((anchor, disjoint[anchor][int(j)]) for j in picked)
    if config.dedup:
        return PairSet(_dedup(pos), _dedup(neg))
    return PairSet(tuple(pos), tuple(neg))


def save_pairs(pairset: PairSet, path: str | Path) -> None:
    """Audit listing: one (i, j, polarity) row per pair."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["i", "j", "polarity"])
        for i, j in pairset.pos:
            writer.writerow([i, j, POSITIVE])
        for i, j in pairset.neg:
            writer.writerow([i, j, NEGATIVE])


def load_pairs(path: str | Path) -> PairSet:
    pos: list[tuple[int, int]] = []
    neg: list[tuple[int, int]] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["i", "j", "polarity"]:
            raise FormatError(f"{path}: not a pair listing")
        for row in reader:
            try:
                i, j, polarity = int(row[0]), int(row[1]), row[2]
            except (IndexError, ValueError) as exc:
                raise FormatError(f"{path}: bad pair row {row!r}") from exc
            if polarity == POSITIVE:
                pos.append((i, j))
            elif polarity == NEGATIVE:
                neg.append((i, j))
            else:
                raise FormatError(f"{path}: bad polarity {polarity!r}")
    return PairSet(tuple(pos), tuple(neg))
