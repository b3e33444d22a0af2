"""Event-level micro/macro F1, aggregation, significance, random baseline.

Per-label F1 with an all-zero confusion row is defined as 0, which pulls
macro scores down for labels absent from an event; that convention is
deliberate and shared by every consumer here. Macro is computed over
labels within each scored sequence (normally one event), and events are
then averaged; the experiment runner can instead score a pooled
pseudo-event when per-event breakdowns are not wanted.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ArgumentError
from .corpus import MULTI_CLASS, MULTI_LABEL


@dataclass(frozen=True)
class EventScore:
    event_id: str
    micro_f1: float
    macro_f1: float


@dataclass(frozen=True)
class RunRecord:
    """Per-event scores of one (fold, seed) run."""

    fold: int
    seed: int
    event_scores: tuple[EventScore, ...]

    @property
    def micro_mean(self) -> float:
        return float(np.mean([s.micro_f1 for s in self.event_scores]))

    @property
    def macro_mean(self) -> float:
        return float(np.mean([s.macro_f1 for s in self.event_scores]))

    def to_dict(self) -> dict:
        return {
            "fold": self.fold,
            "seed": self.seed,
            "event_scores": [
                {"event": s.event_id, "micro_f1": s.micro_f1, "macro_f1": s.macro_f1}
                for s in self.event_scores
            ],
            "micro_mean": self.micro_mean,
            "macro_mean": self.macro_mean,
        }

    @staticmethod
    def from_dict(raw: Mapping) -> "RunRecord":
        return RunRecord(
            fold=int(raw["fold"]),
            seed=int(raw["seed"]),
            event_scores=tuple(
                EventScore(s["event"], float(s["micro_f1"]), float(s["macro_f1"]))
                for s in raw["event_scores"]
            ),
        )


def _confusion(preds, golds, label_count: int, task_kind: str) -> np.ndarray:
    """Per-label [tp, fp, fn] counts."""
    counts = np.zeros((label_count, 3), dtype=np.int64)
    if task_kind == MULTI_CLASS:
        for p, g in zip(preds, golds):
            p, g = int(p), int(g)
            if p == g:
                counts[p, 0] += 1
            else:
                counts[p, 1] += 1
                counts[g, 2] += 1
    elif task_kind == MULTI_LABEL:
        for p, g in zip(preds, golds):
            pset, gset = set(p), set(g)
            for lab in pset & gset:
                counts[lab, 0] += 1
            for lab in pset - gset:
                counts[lab, 1] += 1
            for lab in gset - pset:
                counts[lab, 2] += 1
    else:
        raise ArgumentError(f"unknown task kind {task_kind!r}")
    return counts


def _f1(tp: float, fp: float, fn: float) -> float:
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


def f1_scores(
    preds: Sequence, golds: Sequence, label_count: int, task_kind: str
) -> tuple[float, float]:
    """(micro, macro) F1 over aligned predictions and golds.

    Micro pools tp/fp/fn over labels; macro is the unweighted mean of
    per-label F1. For single-label multi-class data micro equals accuracy.
    """
    if len(preds) != len(golds):
        raise ArgumentError(f"{len(preds)} predictions for {len(golds)} golds")
    counts = _confusion(preds, golds, label_count, task_kind)
    micro = _f1(*counts.sum(axis=0))
    macro = float(np.mean([_f1(*row) for row in counts]))
    return micro, macro


def score_events(
    preds: Sequence,
    golds: Sequence,
    event_of: Sequence[str],
    label_count: int,
    task_kind: str,
) -> list[EventScore]:
    """F1 per event over aligned (pred, gold, event) triples."""
    if not (len(preds) == len(golds) == len(event_of)):
        raise ArgumentError("preds, golds, and events must align")
    order: list[str] = []
    members: dict[str, list[int]] = {}
    for i, ev in enumerate(event_of):
        if ev not in members:
            members[ev] = []
            order.append(ev)
        members[ev].append(i)
    out = []
    for ev in order:
        idx = members[ev]
        micro, macro = f1_scores(
            [preds[i] for i in idx], [golds[i] for i in idx], label_count, task_kind
        )
        out.append(EventScore(ev, micro, macro))
    return out


@dataclass(frozen=True)
class Aggregate:
    micro_mean: float
    micro_std: float
    macro_mean: float
    macro_std: float


def aggregate(records: Iterable[RunRecord], sample_std: bool = False) -> Aggregate:
    """Mean and std over run means (events averaged first within each run).

    Std is the population value by default; ``sample_std`` switches to the
    n-1 estimator.
    """
    records = list(records)
    if not records:
        raise ArgumentError("no records to aggregate")
    # sorted reduction keeps the result exactly order-independent
    micro = np.sort([r.micro_mean for r in records])
    macro = np.sort([r.macro_mean for r in records])
    ddof = 1 if (sample_std and len(records) > 1) else 0
    return Aggregate(
        micro_mean=float(micro.mean()),
        micro_std=float(micro.std(ddof=ddof)),
        macro_mean=float(macro.mean()),
        macro_std=float(macro.std(ddof=ddof)),
    )


def paired_permutation_test(
    a: Sequence[float],
    b: Sequence[float],
    resamples: int = 10000,
    seed: int = 0,
) -> float:
    """Two-sided sign-flip permutation test on per-event differences.

    p = (1 + #{|stat*| >= |stat|}) / (resamples + 1), so p is in (0, 1]
    and never reads as exactly zero.
    """
    if len(a) != len(b):
        raise ArgumentError(f"score vectors differ in length: {len(a)} vs {len(b)}")
    if resamples < 1000:
        raise ArgumentError("resamples must be >= 1000")
    diffs = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    stat = abs(diffs.mean())
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    signs = rng.integers(0, 2, size=(resamples, diffs.size)) * 2 - 1
    perm = np.abs((signs * diffs).mean(axis=1))
    hits = int(np.count_nonzero(perm >= stat))
    return (1 + hits) / (resamples + 1)


def random_baseline(
    golds: Sequence,
    label_count: int,
    seed: int,
    task_kind: str = MULTI_CLASS,
) -> tuple[float, float]:
    """Scores of a uniformly random classifier on the given golds."""
    if len(golds) == 0:
        raise ArgumentError("golds must be non-empty")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    draws = rng.integers(0, label_count, size=len(golds))
    if task_kind == MULTI_CLASS:
        preds: list = [int(d) for d in draws]
    else:
        preds = [{int(d)} for d in draws]
    return f1_scores(preds, golds, label_count, task_kind)


def records_to_json(records: Iterable[RunRecord]) -> str:
    return json.dumps([r.to_dict() for r in records], indent=2)


def records_from_json(text: str) -> list[RunRecord]:
    return [RunRecord.from_dict(raw) for raw in json.loads(text)]


def records_to_csv(records: Iterable[RunRecord]) -> str:
    """One row per (fold, seed, event); numbers round-trip exactly."""
    lines = ["fold,seed,event,micro_f1,macro_f1"]
    for r in records:
        for s in r.event_scores:
            lines.append(
                f"{r.fold},{r.seed},{s.event_id},{s.micro_f1!r},{s.macro_f1!r}"
            )
    return "\n".join(lines) + "\n"


def records_from_csv(text: str) -> list[RunRecord]:
    lines = [l for l in text.splitlines() if l]
    if not lines or lines[0] != "fold,seed,event,micro_f1,macro_f1":
        raise ArgumentError("not a run-record csv")
    grouped: dict[tuple[int, int], list[EventScore]] = {}
    for line in lines[1:]:
        fold, seed, event, micro, macro = line.split(",")
        grouped.setdefault((int(fold), int(seed)), []).append(
            EventScore(event, float(micro), float(macro))
        )
    return [
        RunRecord(fold=f, seed=s, event_scores=tuple(scores))
        for (f, s), scores in grouped.items()
    ]
