"""Disjoint-event CV folds, low-resource subsampling, validation splits.

All functions are pure in (corpus, seed). Randomness uses numpy's PCG64
generator seeded through SeedSequence, so plans are reproducible across
runs and platforms; the generator choice is part of the documented
contract (see README).
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .corpus import Corpus
from .errors import ArgumentError, FormatError


@dataclass(frozen=True)
class FoldPlan:
    """k folds of (train_event_ids, test_event_ids); events are disjoint."""

    k: int
    folds: tuple[tuple[tuple[str, ...], tuple[str, ...]], ...]
    seed: int

    def test_events(self, fold: int) -> tuple[str, ...]:
        return self.folds[fold][1]

    def train_events(self, fold: int) -> tuple[str, ...]:
        return self.folds[fold][0]


def kfold_disjoint_events(corpus: Corpus, k: int, seed: int) -> FoldPlan:
    """Shuffle events once, deal them round-robin into k test groups.

    Fold i tests on group i and trains on every other event, so no event
    contributes posts to both sides of any fold.
    """
    events = list(corpus.event_ids)
    if k < 2 or k > len(events):
        raise ArgumentError(f"k={k} out of range for {len(events)} events")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    order = rng.permutation(len(events))
    groups: list[list[str]] = [[] for _ in range(k)]
    for pos, event_idx in enumerate(order):
        groups[pos % k].append(events[event_idx])
    folds = []
    for group in groups:
        test = set(group)
        train = tuple(e for e in events if e not in test)
        folds.append((train, tuple(group)))
    return FoldPlan(k=k, folds=tuple(folds), seed=seed)


def fold_plan_to_json(plan: FoldPlan) -> str:
    payload = {
        "k": plan.k,
        "seed": plan.seed,
        "folds": [
            {"train_events": list(tr), "test_events": list(te)}
            for tr, te in plan.folds
        ],
    }
    return json.dumps(payload, indent=2)


def fold_plan_from_json(text: str) -> FoldPlan:
    try:
        raw = json.loads(text)
        folds = tuple(
            (tuple(f["train_events"]), tuple(f["test_events"]))
            for f in raw["folds"]
        )
        return FoldPlan(k=int(raw["k"]), folds=folds, seed=int(raw["seed"]))
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise FormatError(f"invalid fold plan JSON: {exc}") from exc


def save_fold_plan(plan: FoldPlan, path: str | Path) -> None:
    Path(path).write_text(fold_plan_to_json(plan), encoding="utf-8")


def load_fold_plan(path: str | Path) -> FoldPlan:
    return fold_plan_from_json(Path(path).read_text(encoding="utf-8"))


def indices_for_events(corpus: Corpus, event_ids: Iterable[str]) -> list[int]:
    """Post indices belonging to the given events, in corpus order."""
    wanted = set(event_ids)
    return [i for i, p in enumerate(corpus.posts) if p.event_id in wanted]


def sample_low_resource(
    corpus: Corpus,
    train_events: Iterable[str],
    quota: int,
    seed: int,
) -> set[str]:
    """Sample up to ``quota`` post ids per (event, label) cell.

    Cells are visited in sorted (event, label) order so the draw is
    deterministic per seed. A multi-label post drawn for several cells
    appears once in the returned union; cells smaller than the quota
    contribute everything they have.
    """
    if quota < 1:
        raise ArgumentError(f"quota must be >= 1, got {quota}")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    chosen: set[str] = set()
    for event in sorted(set(train_events)):
        members = corpus.events.get(event, ())
        by_label: dict[int, list[int]] = {}
        for idx in members:
            for lab in corpus.posts[idx].labels:
                by_label.setdefault(lab, []).append(idx)
        for lab in sorted(by_label):
            cell = by_label[lab]
            take = min(quota, len(cell))
            picked = rng.choice(len(cell), size=take, replace=False)
            chosen.update(corpus.posts[cell[i]].id for i in picked)
    return chosen


def _stratum_key(label) -> tuple:
    if isinstance(label, (set, frozenset)):
        return tuple(sorted(label))
    return (label,)


def validation_split(
    post_ids: Sequence[str],
    ratio: float,
    seed: int,
    labels: Sequence | None = None,
) -> tuple[list[str], list[str]]:
    """Split ids into (train, validation), |val| = max(1, round(ratio*N)).

    When ``labels`` is given and every stratum holds at least two members
    the split is stratified (largest-remainder allocation, each stratum
    keeps at least one training member); otherwise it is a plain seeded
    shuffle split. Output preserves the input id order.
    """
    n = len(post_ids)
    if n < 2:
        raise ArgumentError("need at least 2 posts to split")
    if not 0.0 < ratio < 1.0:
        raise ArgumentError(f"ratio must be in (0, 1), got {ratio}")
    if labels is not None and len(labels) != n:
        raise ArgumentError("labels must align with post_ids")

    n_val = min(max(1, round(ratio * n)), n - 1)
    rng = np.random.default_rng(np.random.SeedSequence(seed))

    strata: dict[tuple, list[int]] | None = None
    if labels is not None:
        strata = {}
        for i, lab in enumerate(labels):
            strata.setdefault(_stratum_key(lab), []).append(i)
        if any(len(v) < 2 for v in strata.values()):
            strata = None

    val_positions: set[int] = set()
    if strata is None:
        picked = rng.choice(n, size=n_val, replace=False)
        val_positions = set(int(i) for i in picked)
    else:
        keys = sorted(strata)
        quotas = {k: n_val * len(strata[k]) / n for k in keys}
        counts = {k: int(np.floor(quotas[k])) for k in keys}
        # largest remainder first; cap so each stratum keeps a train member
        counts = {k: min(c, len(strata[k]) - 1) for k, c in counts.items()}
        remainder = sorted(
            keys, key=lambda k: (counts[k] - quotas[k], keys.index(k))
        )
        i = 0
        while sum(counts.values()) < n_val and i < 10 * len(keys):
            k = remainder[i % len(keys)]
            if counts[k] < len(strata[k]) - 1:
                counts[k] += 1
            i += 1
        for k in keys:
            members = strata[k]
            take = counts[k]
            if take:
                picked = rng.choice(len(members), size=take, replace=False)
                val_positions.update(members[int(j)] for j in picked)

    train = [post_ids[i] for i in range(n) if i not in val_positions]
    val = [post_ids[i] for i in range(n) if i in val_positions]
    return train, val
