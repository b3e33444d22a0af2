"""Frozen-embedding MLP classifier with CE / BCE training and thresholding.

One hidden layer of 512 ReLU units with inverted dropout in training
mode only; multi-class decoding is the logit argmax (ties to the lowest
index), multi-label decoding keeps every label whose sigmoid probability
clears the threshold. Checkpoint selection tracks validation macro-F1
after each epoch and keeps the earliest best epoch.
"""
from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import MULTI_CLASS, MULTI_LABEL
from .errors import ArgumentError, FormatError, NumericError
from .metrics import f1_scores
from .optim import LrSchedule, adamw_init, adamw_step, lr_at

log = logging.getLogger(__name__)

CLF_MAGIC = b"CTSC"
CLF_VERSION = 1


@dataclass
class MlpClassifier:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    @property
    def in_dim(self) -> int:
        return int(self.W1.shape[0])

    @property
    def hidden(self) -> int:
        return int(self.W1.shape[1])

    @property
    def label_count(self) -> int:
        return int(self.W2.shape[1])

    def params(self) -> dict[str, np.ndarray]:
        return {"W1": self.W1, "b1": self.b1, "W2": self.W2, "b2": self.b2}

    def copy(self) -> "MlpClassifier":
        return MlpClassifier(
            self.W1.copy(), self.b1.copy(), self.W2.copy(), self.b2.copy()
        )


@dataclass(frozen=True)
class ClassifierConfig:
    epochs: int = 30
    lr: float = 1e-3
    weight_decay: float = 0.01
    batch: int = 32
    dropout: float = 0.4
    threshold: float = 0.3
    hidden: int = 512
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.threshold < 1.0:
            raise ArgumentError("threshold must be in (0, 1)")
        if not 0.0 <= self.dropout < 1.0:
            raise ArgumentError("dropout must be in [0, 1)")
        if self.batch < 1:
            raise ArgumentError("batch must be >= 1")


def init_classifier(
    dim: int, label_count: int, hidden: int = 512, seed: int = 0, dtype=np.float32
) -> MlpClassifier:
    """Glorot-uniform initialization, biases at zero."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))

    def glorot(fan_in, fan_out):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype)

    return MlpClassifier(
        W1=glorot(dim, hidden),
        b1=np.zeros(hidden, dtype=dtype),
        W2=glorot(hidden, label_count),
        b2=np.zeros(label_count, dtype=dtype),
    )


def forward_logits(
    params: dict[str, np.ndarray],
    X: np.ndarray,
    dropout: float = 0.0,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, dict]:
    """Logits plus the cache needed for backprop.

    Dropout (inverted scaling) is applied only when a rate and a
    generator are supplied, i.e. in training mode; evaluation is
    deterministic.
    """
    A1 = X @ params["W1"] + params["b1"]
    H = np.maximum(A1, 0.0)
    mask = None
    if dropout > 0.0 and rng is not None:
        mask = (rng.random(H.shape) >= dropout).astype(H.dtype) / (1.0 - dropout)
        H = H * mask
    logits = H @ params["W2"] + params["b2"]
    return logits, {"X": X, "A1": A1, "H": H, "mask": mask}


def _backward(
    params: dict[str, np.ndarray], cache: dict, dlogits: np.ndarray
) -> dict[str, np.ndarray]:
    H, A1, X, mask = cache["H"], cache["A1"], cache["X"], cache["mask"]
    gW2 = H.T @ dlogits
    gb2 = dlogits.sum(axis=0)
    dH = dlogits @ params["W2"].T
    if mask is not None:
        dH = dH * mask
    dA1 = dH * (A1 > 0)
    return {
        "W1": X.T @ dA1,
        "b1": dA1.sum(axis=0),
        "W2": gW2,
        "b2": gb2,
    }


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def ce_loss(logits: np.ndarray, labels: Sequence[int]) -> float:
    """Mean softmax cross-entropy (log-sum-exp formulation)."""
    logits = np.atleast_2d(logits)
    idx = np.asarray(labels, dtype=np.intp)
    logp = _log_softmax(logits)
    return float(-logp[np.arange(len(idx)), idx].mean())


def bce_loss(logits: np.ndarray, targets: np.ndarray) -> float:
    """Mean binary cross-entropy over all (row, label) cells.

    Uses the stable form log(1 + exp(-|x|)) + max(x, 0) - x*y.
    """
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    targets = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    if logits.shape != targets.shape:
        raise ArgumentError("logits and targets must have the same shape")
    per_cell = (
        np.maximum(logits, 0.0) - logits * targets + np.log1p(np.exp(-np.abs(logits)))
    )
    return float(per_cell.mean())


def ce_loss_and_grads(
    params: dict[str, np.ndarray],
    X: np.ndarray,
    labels: Sequence[int],
    dropout: float = 0.0,
    rng: np.random.Generator | None = None,
) -> tuple[float, dict[str, np.ndarray]]:
    logits, cache = forward_logits(params, X, dropout, rng)
    idx = np.asarray(labels, dtype=np.intp)
    logp = _log_softmax(logits)
    loss = float(-logp[np.arange(len(idx)), idx].mean())
    probs = np.exp(logp)
    dlogits = probs
    dlogits[np.arange(len(idx)), idx] -= 1.0
    dlogits /= len(idx)
    return loss, _backward(params, cache, dlogits)


def bce_loss_and_grads(
    params: dict[str, np.ndarray],
    X: np.ndarray,
    targets: np.ndarray,
    dropout: float = 0.0,
    rng: np.random.Generator | None = None,
) -> tuple[float, dict[str, np.ndarray]]:
    logits, cache = forward_logits(params, X, dropout, rng)
    loss = bce_loss(logits, targets)
    probs = 1.0 / (1.0 + np.exp(-logits))
    dlogits = (probs - targets) / targets.size
    return loss, _backward(params, cache, dlogits.astype(logits.dtype))


def multi_hot(labelsets: Sequence, label_count: int, dtype=np.float32) -> np.ndarray:
    out = np.zeros((len(labelsets), label_count), dtype=dtype)
    for i, ls in enumerate(labelsets):
        for lab in ls:
            out[i, int(lab)] = 1.0
    return out


def predict_multiclass(clf: MlpClassifier, x: np.ndarray):
    """Argmax label index; ties resolve to the lowest index."""
    x = np.asarray(x, dtype=np.float32)
    single = x.ndim == 1
    logits, _ = forward_logits(clf.params(), np.atleast_2d(x))
    picks = np.argmax(logits, axis=1)
    return int(picks[0]) if single else [int(p) for p in picks]


def threshold_labels(probs: np.ndarray, threshold: float) -> set[int]:
    return {int(i) for i in np.flatnonzero(probs >= threshold)}


def predict_multilabel(
    clf: MlpClassifier,
    x: np.ndarray,
    threshold: float = 0.3,
    argmax_fallback: bool = False,
):
    """Labels whose sigmoid probability clears the threshold.

    The empty set is a legal prediction; ``argmax_fallback`` forces the
    single most probable label instead, for benchmarks that require at
    least one.
    """
    x = np.asarray(x, dtype=np.float32)
    single = x.ndim == 1
    logits, _ = forward_logits(clf.params(), np.atleast_2d(x))
    probs = 1.0 / (1.0 + np.exp(-logits))
    out = []
    for row in probs:
        picked = threshold_labels(row, threshold)
        if not picked and argmax_fallback:
            picked = {int(np.argmax(row))}
        out.append(picked)
    return out[0] if single else out


def _val_macro_f1(
    params: dict[str, np.ndarray],
    X: np.ndarray,
    y,
    task_kind: str,
    label_count: int,
    threshold: float,
) -> float:
    logits, _ = forward_logits(params, X)
    if task_kind == MULTI_CLASS:
        preds: list = [int(p) for p in np.argmax(logits, axis=1)]
    else:
        probs = 1.0 / (1.0 + np.exp(-logits))
        preds = [threshold_labels(row, threshold) for row in probs]
    _, macro = f1_scores(preds, y, label_count, task_kind)
    return macro


def train_classifier(
    X: np.ndarray,
    y: Sequence,
    label_count: int,
    task_kind: str,
    config: ClassifierConfig,
    train_idx: Sequence[int],
    val_idx: Sequence[int],
) -> tuple[MlpClassifier, list[dict]]:
    """Train with seeded shuffling and dropout; return the best epoch.

    ``y`` holds label indices (multi-class) or label-index sets
    (multi-label). Selection metric is validation macro-F1 with dropout
    off; ties keep the earlier epoch. Also returns per-epoch history of
    mean training loss and validation score.
    """
    if config.epochs < 1:
        raise ArgumentError("epochs must be >= 1 to produce a checkpoint")
    if len(val_idx) == 0:
        raise ArgumentError("validation split is empty")
    if set(train_idx) & set(val_idx):
        raise ArgumentError("train and validation rows overlap")
    X = np.asarray(X, dtype=np.float32)
    if task_kind not in (MULTI_CLASS, MULTI_LABEL):
        raise ArgumentError(f"unknown task kind {task_kind!r}")

    train_idx = np.asarray(train_idx, dtype=np.intp)
    val_idx = np.asarray(val_idx, dtype=np.intp)
    X_val = X[val_idx]
    y_val = [y[i] for i in val_idx]

    clf = init_classifier(X.shape[1], label_count, config.hidden, seed=config.seed)
    params = clf.params()
    state = adamw_init(params, config.lr, config.weight_decay)
    schedule = LrSchedule(
        total_steps=max(1, config.epochs * -(-len(train_idx) // config.batch)),
        warmup_ratio=0.0,
        shape="constant",
    )
    rng = np.random.default_rng(np.random.SeedSequence(config.seed))

    if task_kind == MULTI_LABEL:
        targets = multi_hot(y, label_count)

    best: MlpClassifier | None = None
    best_score = -1.0
    history: list[dict] = []
    step = 0
    for epoch in range(config.epochs):
        order = rng.permutation(len(train_idx))
        losses = []
        for start in range(0, len(order), config.batch):
            rows = train_idx[order[start : start + config.batch]]
            Xb = X[rows]
            if task_kind == MULTI_CLASS:
                loss, grads = ce_loss_and_grads(
                    params, Xb, [int(y[i]) for i in rows], config.dropout, rng
                )
            else:
                loss, grads = bce_loss_and_grads(
                    params, Xb, targets[rows], config.dropout, rng
                )
            if not np.isfinite(loss):
                raise NumericError(f"non-finite loss at epoch {epoch}, step {step}")
            adamw_step(params, grads, state, lr_at(schedule, min(step, schedule.total_steps)))
            losses.append(loss)
            step += 1
        val_score = _val_macro_f1(
            params, X_val, y_val, task_kind, label_count, config.threshold
        )
        history.append(
            {"epoch": epoch, "train_loss": float(np.mean(losses)), "val_macro_f1": val_score}
        )
        log.debug("epoch %d: train loss %.4f, val macro-F1 %.4f",
                  epoch, history[-1]["train_loss"], val_score)
        if val_score > best_score:
            best_score = val_score
            best = clf.copy()
    assert best is not None
    return best, history


def save_classifier(clf: MlpClassifier, path: str | Path) -> None:
    with open(path, "wb") as fh:
        fh.write(CLF_MAGIC)
        fh.write(
            struct.pack("<IIII", CLF_VERSION, clf.in_dim, clf.hidden, clf.label_count)
        )
        for block in (clf.W1, clf.b1, clf.W2, clf.b2):
            fh.write(np.ascontiguousarray(block, dtype="<f4").tobytes())


def load_classifier(path: str | Path) -> MlpClassifier:
    data = Path(path).read_bytes()
    if len(data) < 20 or data[:4] != CLF_MAGIC:
        raise FormatError(f"{path}: not a classifier file")
    version, in_dim, hidden, label_count = struct.unpack_from("<IIII", data, 4)
    if version != CLF_VERSION:
        raise FormatError(f"{path}: unsupported classifier version {version}")
    sizes = [in_dim * hidden, hidden, hidden * label_count, label_count]
    need = 20 + 4 * sum(sizes)
    if len(data) != need:
        raise FormatError(f"{path}: expected {need} bytes, found {len(data)}")
    offset = 20
    blocks = []
    for size in sizes:
        blocks.append(np.frombuffer(data, dtype="<f4", count=size, offset=offset).copy())
        offset += size * 4
    return MlpClassifier(
        W1=blocks[0].reshape(in_dim, hidden),
        b1=blocks[1],
        W2=blocks[2].reshape(hidden, label_count),
        b2=blocks[3],
    )
