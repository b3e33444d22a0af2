"""Contrastive task-specialization head and its training loop.

The head is a residual tanh transform over frozen base embeddings,
``z = normalize(x + tanh(x W1 + b1))``, initialized at zero so it starts
as an exact identity (up to normalization) and only moves away from the
base embedding as the loss dictates. Training minimizes an online
contrastive loss on cosine distances ``d = 1 - u.v`` of unit-norm rows:
hard in-batch pairs are selected (negatives closer than the farthest
positive, positives farther than the closest negative), then

    loss = mean( 0.5 * d^2            over selected positives,
                 0.5 * max(0, margin - d)^2   over selected negatives ).

Rows whose transformed norm falls below 1e-12 become zero rows and are
excluded from pair batches.
"""
from __future__ import annotations

import csv
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .encoder import EmbeddingMatrix
from .errors import ArgumentError, DegenerateInputError, FormatError, NumericError
from .optim import LrSchedule, adamw_init, adamw_step, lr_at
from .pairgen import PairSet

log = logging.getLogger(__name__)

HEAD_MAGIC = b"CTSH"
HEAD_VERSION = 1
ZERO_NORM_GUARD = 1e-12


@dataclass
class SpecializationHead:
    """Trainable residual transform; rows come out L2-normalized."""

    W1: np.ndarray
    b1: np.ndarray
    residual: bool = True

    @property
    def dim(self) -> int:
        return int(self.b1.shape[0])

    def params(self) -> dict[str, np.ndarray]:
        return {"W1": self.W1, "b1": self.b1}

    def copy(self) -> "SpecializationHead":
        return SpecializationHead(self.W1.copy(), self.b1.copy(), self.residual)


@dataclass(frozen=True)
class CtsConfig:
    """Specialization hyperparameters (margin is not prescribed upstream;
    0.5 is this package's default and is part of the run provenance)."""

    margin: float = 0.5
    epochs: int = 3
    batch_pairs: int = 64
    lr: float = 2e-5
    weight_decay: float = 0.01
    warmup_ratio: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.margin <= 0:
            raise ArgumentError("margin must be > 0")
        if self.batch_pairs < 2:
            raise ArgumentError("batch_pairs must be >= 2")
        if self.epochs < 0:
            raise ArgumentError("epochs must be >= 0")


def init_head(dim: int, residual: bool = True, dtype=np.float32) -> SpecializationHead:
    """Zero-initialized head: an exact identity (then normalize) at start."""
    return SpecializationHead(
        W1=np.zeros((dim, dim), dtype=dtype),
        b1=np.zeros(dim, dtype=dtype),
        residual=residual,
    )


def _forward(
    params: dict[str, np.ndarray], X: np.ndarray, residual: bool
) -> tuple[np.ndarray, dict]:
    """Transform rows; returns (Z, cache-for-backward)."""
    A = X @ params["W1"] + params["b1"]
    H = np.tanh(A)
    U = X + H if residual else H
    norms = np.linalg.norm(U, axis=1)
    ok = norms >= ZERO_NORM_GUARD
    safe = np.where(ok, norms, 1.0)
    Z = U / safe[:, None]
    Z[~ok] = 0.0
    return Z, {"X": X, "H": H, "Z": Z, "norms": safe, "ok": ok}


def _backward(cache: dict, dZ: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of the head parameters given dLoss/dZ."""
    Z, norms, ok, H, X = cache["Z"], cache["norms"], cache["ok"], cache["H"], cache["X"]
    inner = np.sum(dZ * Z, axis=1, keepdims=True)
    dU = (dZ - inner * Z) / norms[:, None]
    dU[~ok] = 0.0
    dA = dU * (1.0 - H * H)
    return {"W1": X.T @ dA, "b1": dA.sum(axis=0)}


def head_encode(head: SpecializationHead, X: EmbeddingMatrix) -> EmbeddingMatrix:
    """Row-wise transform of a whole matrix; ids and order are preserved."""
    if X.dim != head.dim:
        raise ArgumentError(f"matrix dim {X.dim} != head dim {head.dim}")
    Z, cache = _forward(head.params(), X.rows, head.residual)
    if not np.all(cache["ok"]):
        bad = [X.ids[i] for i in np.flatnonzero(~cache["ok"])]
        log.warning("zero-norm guard hit for rows %s; returning zero rows", bad)
    return EmbeddingMatrix(X.ids, Z.astype(np.float32))


def pair_distances(
    Z: np.ndarray, pairs: PairSet
) -> tuple[np.ndarray, np.ndarray]:
    """Cosine distances 1 - u.v for each pair, split by polarity."""
    n = Z.shape[0]
    for i, j in (*pairs.pos, *pairs.neg):
        if not (0 <= i < n and 0 <= j < n):
            raise ArgumentError(f"pair index ({i}, {j}) out of range for {n} rows")

    def dist(idx: Sequence[tuple[int, int]]) -> np.ndarray:
        if not idx:
            return np.zeros(0, dtype=Z.dtype)
        a = np.fromiter((i for i, _ in idx), dtype=np.intp)
        b = np.fromiter((j for _, j in idx), dtype=np.intp)
        return 1.0 - np.sum(Z[a] * Z[b], axis=1)

    return dist(pairs.pos), dist(pairs.neg)


def ocl_select_hard(
    pos_d: np.ndarray, neg_d: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Indices of hard pairs: negatives closer than the farthest positive
    and positives farther than the closest negative. An empty strict
    selection falls back to all pairs of that polarity."""
    pos_d = np.asarray(pos_d)
    neg_d = np.asarray(neg_d)
    if pos_d.size == 0 or neg_d.size == 0:
        raise ArgumentError("batch must contain both polarities")
    hard_pos = np.flatnonzero(pos_d > neg_d.min())
    hard_neg = np.flatnonzero(neg_d < pos_d.max())
    if hard_pos.size == 0:
        hard_pos = np.arange(pos_d.size)
    if hard_neg.size == 0:
        hard_neg = np.arange(neg_d.size)
    return hard_pos, hard_neg


def contrastive_loss(pos_d: np.ndarray, neg_d: np.ndarray, margin: float) -> float:
    """Mean over the given pairs of 0.5 d^2 (pos) and 0.5 relu(margin-d)^2 (neg)."""
    pos_d = np.asarray(pos_d, dtype=np.float64)
    neg_d = np.asarray(neg_d, dtype=np.float64)
    total = pos_d.size + neg_d.size
    if total == 0:
        return 0.0
    pos_term = 0.5 * np.square(pos_d).sum()
    neg_term = 0.5 * np.square(np.maximum(0.0, margin - neg_d)).sum()
    return float((pos_term + neg_term) / total)


def ocl_loss_and_grads(
    params: dict[str, np.ndarray],
    X: np.ndarray,
    pos_pairs: Sequence[tuple[int, int]],
    neg_pairs: Sequence[tuple[int, int]],
    margin: float,
    residual: bool = True,
) -> tuple[float, dict[str, np.ndarray]]:
    """Online contrastive loss over one batch plus head-parameter grads.

    Hard-pair selection happens inside; the gradient flows through the
    selected distances (the selection itself is locally constant).
    """
    Z, cache = _forward(params, X, residual)
    ok = cache["ok"]
    pos_pairs = [p for p in pos_pairs if ok[p[0]] and ok[p[1]]]
    neg_pairs = [p for p in neg_pairs if ok[p[0]] and ok[p[1]]]
    if not pos_pairs or not neg_pairs:
        raise ArgumentError("batch must contain both polarities")

    pos_d, neg_d = pair_distances(Z, PairSet(tuple(pos_pairs), tuple(neg_pairs)))
    sel_pos, sel_neg = ocl_select_hard(pos_d, neg_d)
    m = sel_pos.size + sel_neg.size
    loss = contrastive_loss(pos_d[sel_pos], neg_d[sel_neg], margin)

    # d(loss)/d(distance), then distance -> rows: d = 1 - z_a . z_b
    dZ = np.zeros_like(Z)
    for k in sel_pos:
        i, j = pos_pairs[int(k)]
        g = pos_d[k] / m
        dZ[i] -= g * Z[j]
        dZ[j] -= g * Z[i]
    for k in sel_neg:
        i, j = neg_pairs[int(k)]
        g = -max(0.0, margin - neg_d[k]) / m
        dZ[i] -= g * Z[j]
        dZ[j] -= g * Z[i]
    return loss, _backward(cache, dZ)


def specialize(
    head: SpecializationHead,
    X: EmbeddingMatrix,
    pairs: PairSet,
    config: CtsConfig,
) -> tuple[SpecializationHead, list[tuple[int, float, float]]]:
    """Fine-tune a copy of the head on the pair set.

    Pairs are reshuffled every epoch; each batch of ``batch_pairs`` pairs
    is encoded, hard-selected, and stepped with AdamW under the warmup +
    cosine schedule. Returns the trained head and the per-step curve of
    (step, lr, loss). Batches missing a polarity are skipped with a
    warning but still advance the schedule.
    """
    if not pairs.pos and not pairs.neg:
        raise DegenerateInputError("empty pair set")
    if X.dim != head.dim:
        raise ArgumentError(f"matrix dim {X.dim} != head dim {head.dim}")
    trained = head.copy()
    curve: list[tuple[int, float, float]] = []
    if config.epochs == 0:
        return trained, curve

    tagged = [(i, j, True) for i, j in pairs.pos]
    tagged += [(i, j, False) for i, j in pairs.neg]
    per_epoch = -(-len(tagged) // config.batch_pairs)
    schedule = LrSchedule(
        total_steps=config.epochs * per_epoch, warmup_ratio=config.warmup_ratio
    )
    params = trained.params()
    state = adamw_init(params, config.lr, config.weight_decay)
    rng = np.random.default_rng(np.random.SeedSequence(config.seed))

    step = 0
    for _ in range(config.epochs):
        order = rng.permutation(len(tagged))
        for start in range(0, len(tagged), config.batch_pairs):
            batch = [tagged[k] for k in order[start : start + config.batch_pairs]]
            pos = [(i, j) for i, j, is_pos in batch if is_pos]
            neg = [(i, j) for i, j, is_pos in batch if not is_pos]
            multiplier = lr_at(schedule, step)
            if not pos or not neg:
                log.warning("step %d: batch lacks a polarity, skipped", step)
                step += 1
                continue
            try:
                loss, grads = ocl_loss_and_grads(
                    params, X.rows, pos, neg, config.margin, trained.residual
                )
            except ArgumentError:
                # zero-norm guard emptied one polarity
                log.warning("step %d: batch lacks a polarity, skipped", step)
                step += 1
                continue
            if not np.isfinite(loss):
                raise NumericError(f"non-finite loss at step {step}")
            adamw_step(params, grads, state, multiplier)
            curve.append((step, config.lr * multiplier, float(loss)))
            step += 1
    return trained, curve


def save_head(head: SpecializationHead, path: str | Path) -> None:
    with open(path, "wb") as fh:
        fh.write(HEAD_MAGIC)
        fh.write(struct.pack("<IIB", HEAD_VERSION, head.dim, int(head.residual)))
        fh.write(np.ascontiguousarray(head.W1, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(head.b1, dtype="<f4").tobytes())


def load_head(path: str | Path) -> SpecializationHead:
    data = Path(path).read_bytes()
    if len(data) < 13 or data[:4] != HEAD_MAGIC:
        raise FormatError(f"{path}: not a specialization head file")
    version, dim, residual = struct.unpack_from("<IIB", data, 4)
    if version != HEAD_VERSION:
        raise FormatError(f"{path}: unsupported head version {version}")
    need = 13 + (dim * dim + dim) * 4
    if len(data) != need:
        raise FormatError(f"{path}: expected {need} bytes, found {len(data)}")
    W1 = np.frombuffer(data, dtype="<f4", count=dim * dim, offset=13)
    b1 = np.frombuffer(data, dtype="<f4", count=dim, offset=13 + dim * dim * 4)
    return SpecializationHead(
        W1.reshape(dim, dim).copy(), b1.copy(), residual=bool(residual)
    )


def save_loss_curve(curve: Sequence[tuple[int, float, float]], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "lr", "loss"])
        for step, lr, loss in curve:
            writer.writerow([step, repr(lr), repr(loss)])
