"""Loss, optimizer, epoch loop and top-k evaluation."""

from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from . import layers as L
from .dataio import AugmentConfig, SkeletonSequence, augment, length_indices, sequence_features
from .errors import BatchTooSmall, EmptyDataset, InvalidLabel, NonFiniteGradient, ShapeMismatch
from .net import CgcnModel, fuse

STREAM_CODES = {"J": 1, "B": 2, "W": 3, "A": 4}


def cross_entropy(probs, label: int) -> tuple[float, np.ndarray]:
    """``-log p[label]`` and the gradient w.r.t. the logits that produced ``probs``."""
    probs = np.asarray(probs, dtype=np.float64)
    if not (isinstance(label, (int, np.integer)) and 0 <= label < probs.shape[-1]):
        raise InvalidLabel(f"label {label!r} outside [0, {probs.shape[-1]})")
    grad = probs.copy()
    grad[label] -= 1.0
    with np.errstate(divide="ignore"):
        loss = -np.log(probs[label])
    return float(loss), grad


@dataclass
class OptimizerState:
    learning_rate: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    velocity: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not self.learning_rate >= 0 or not 0 <= self.momentum < 1 or not self.weight_decay >= 0:
            raise ValueError("invalid optimizer hyperparameters")


def sgd_nesterov_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray],
                      state: OptimizerState) -> tuple[Mapping[str, np.ndarray], OptimizerState]:
    """In-place Nesterov SGD step on every parameter.

    g = grad + wd * w;  v = mu * v + g;  w -= lr * (g + mu * v)
    """
    for name, w in params.items():
        grad = grads[name]
        if grad.shape != w.shape:
            raise ShapeMismatch(f"{name}: gradient {grad.shape} vs parameter {w.shape}")
        if not np.all(np.isfinite(grad)):
            raise NonFiniteGradient(f"non-finite gradient for {name}")
        v = state.velocity.get(name)
        if v is None:
            v = state.velocity[name] = np.zeros_like(w)
        elif v.shape != w.shape:
            raise ShapeMismatch(f"{name}: velocity {v.shape} vs parameter {w.shape}")
        g = grad + state.weight_decay * w
        v *= state.momentum
        v += g
        w -= state.learning_rate * (g + state.momentum * v)
    return params, state


@dataclass
class ArrayDataset:
    """Feature tensors ``(samples, channels, frames, joints)`` plus labels.

    ``sequences`` keeps the normalized-length sequences for augmentation.
    """

    features: np.ndarray
    labels: np.ndarray
    sequences: list[SkeletonSequence] = field(default_factory=list, repr=False)
    max_subjects: int = 1

    def __len__(self):
        return len(self.labels)


def build_dataset(sequences: Sequence[SkeletonSequence], target_T: int, length_mode: str = "repeat",
                  seed: int = 0, max_subjects: int = 1) -> ArrayDataset:
    if not sequences:
        raise EmptyDataset("no sequences")
    rng = np.random.default_rng(seed)
    fixed = [s.take(length_indices(s.T, target_T, length_mode, rng)) for s in sequences]
    feats = np.stack([sequence_features(s, max_subjects) for s in fixed])
    labels = np.array([-1 if s.label is None else s.label for s in fixed])
    return ArrayDataset(feats, labels, fixed, max_subjects)


def _batches(n: int, batch_size: int, order: np.ndarray) -> list[np.ndarray]:
    chunks = [order[i : i + batch_size] for i in range(0, n, batch_size)]
    if len(chunks) > 1 and len(chunks[-1]) < 2:
        # a lone trailing sample cannot be batch-normalized; fold it into the previous batch
        chunks[-2] = np.concatenate([chunks[-2], chunks[-1]])
        chunks.pop()
    return chunks


def stream_seed(seed: int, epoch: int, stream: str) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed, epoch, STREAM_CODES.get(stream, 0)])


def train_epoch(models: Mapping[str, CgcnModel], optimizers: Mapping[str, OptimizerState],
                data: ArrayDataset, batch_size: int, rng_seed: int, epoch: int = 0,
                augment_config: AugmentConfig | None = None) -> dict:
    """One pass over ``data`` in seeded random order; every stream sees the same batches.

    Each stream draws dropout masks from its own generator, so a stream's
    trajectory does not depend on which other streams are trained with it.
    """
    n = len(data)
    if n == 0:
        raise EmptyDataset("empty training set")
    if batch_size < 2 or n < 2:
        raise BatchTooSmall("training needs batches of at least 2 samples")
    order = np.random.default_rng(np.random.SeedSequence([rng_seed, epoch, 0])).permutation(n)
    aug_rng = np.random.default_rng(np.random.SeedSequence([rng_seed, epoch, 99]))
    drop_rngs = {s: np.random.default_rng(stream_seed(rng_seed, epoch, s)) for s in models}
    totals = {s: 0.0 for s in models}
    hits1 = hits5 = 0
    for idx in _batches(n, batch_size, order):
        if augment_config is not None and data.sequences:
            x = np.stack([
                sequence_features(augment(data.sequences[i], aug_rng, augment_config), data.max_subjects)
                for i in idx
            ])
        else:
            x = data.features[idx]
        y = data.labels[idx]
        probs = {}
        for s, model in models.items():
            logits = model.forward(x, "train", drop_rngs[s])
            loss, dlogits = L.softmax_cross_entropy(logits, y)
            if not np.isfinite(loss):
                raise NonFiniteGradient(f"stream {s}: non-finite loss")
            model.backward(dlogits)
            sgd_nesterov_step(model.parameters(), model.grads, optimizers[s])
            totals[s] += loss * len(idx)
            probs[s] = L.softmax(logits)
        fused = fuse(probs).fused
        hits1 += int(np.sum(topk_hits(fused, y, 1)))
        hits5 += int(np.sum(topk_hits(fused, y, 5)))
    return {
        "loss": float(np.mean([totals[s] / n for s in models])),
        "stream_loss": {s: totals[s] / n for s in models},
        "train_top1": hits1 / n,
        "train_top5": hits5 / n,
    }


def topk_hits(scores: np.ndarray, labels: np.ndarray, k: int) -> np.ndarray:
    """Whether each label ranks among the ``k`` highest scores; ties go to the lower class index."""
    scores = np.atleast_2d(scores)
    labels = np.asarray(labels)
    k = min(k, scores.shape[1])
    # stable sort on negated scores keeps lower indices first among equals
    ranked = np.argsort(-scores, axis=1, kind="stable")[:, :k]
    return np.any(ranked == labels[:, None], axis=1)


def predict_scores(models: Mapping[str, CgcnModel], data: ArrayDataset, chunk: int = 64):
    """Eval-mode probabilities per stream for the whole dataset."""
    per = {s: [] for s in models}
    for i in range(0, len(data), chunk):
        x = data.features[i : i + chunk]
        for s, m in models.items():
            per[s].append(m.predict_proba(x))
    return fuse({s: np.concatenate(v) for s, v in per.items()})


def evaluate(models: Mapping[str, CgcnModel], data: ArrayDataset, ks: Sequence[int] = (1, 5)) -> dict:
    if len(data) == 0:
        raise EmptyDataset("empty evaluation set")
    if np.any(data.labels < 0):
        raise InvalidLabel("evaluation needs labelled sequences")
    scores = predict_scores(models, data)
    return {f"top{k}": float(np.mean(topk_hits(scores.fused, data.labels, k))) for k in ks}


@dataclass
class EpochRow:
    epoch: int
    loss: float
    top1: float
    top5: float
    seconds: float = 0.0


@dataclass
class TrainReport:
    rows: list[EpochRow] = field(default_factory=list)
    seed: int = 0
    config_hash: str = ""
    streams: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "config_hash": self.config_hash,
            "streams": self.streams,
            "epochs": [{k: v for k, v in asdict(r).items() if k != "seconds"} for r in self.rows],
        }

    def write_csv(self, path: str | Path) -> None:
        """Deterministic columns only; wall time goes to :meth:`write_timing`."""
        with Path(path).open("w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["epoch", "loss", "top1", "top5"])
            for r in self.rows:
                w.writerow([r.epoch, repr(r.loss), repr(r.top1), repr(r.top5)])

    def write_timing(self, path: str | Path) -> None:
        with Path(path).open("w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["epoch", "seconds"])
            for r in self.rows:
                w.writerow([r.epoch, f"{r.seconds:.3f}"])

    def write_json(self, path: str | Path, extra: dict | None = None) -> None:
        out = self.to_dict()
        if extra:
            out.update(extra)
        Path(path).write_text(json.dumps(out, indent=1) + "\n")


def lr_at(base_lr: float, epoch: int, steps: Sequence[int] = (), gamma: float = 0.1) -> float:
    return base_lr * gamma ** sum(epoch >= s for s in steps)


def fit(models: Mapping[str, CgcnModel], train: ArrayDataset, epochs: int, batch_size: int = 32,
        seed: int = 0, lr: float = 0.1, momentum: float = 0.9, weight_decay: float = 1e-4,
        lr_steps: Sequence[int] = (), eval_data: ArrayDataset | None = None,
        augment_config: AugmentConfig | None = None, stop_top1: float | None = None,
        on_epoch: Callable[[int, EpochRow], None] | None = None) -> TrainReport:
    """Train every stream for up to ``epochs`` epochs and evaluate after each.

    Training stops early once fused eval-mode top-1 on ``eval_data``
    (default: the training set) reaches ``stop_top1``.
    """
    eval_data = eval_data or train
    opts = {s: OptimizerState(lr, momentum, weight_decay) for s in models}
    report = TrainReport(seed=seed, streams=list(models))
    for epoch in range(epochs):
        start = time.perf_counter()
        for o in opts.values():
            o.learning_rate = lr_at(lr, epoch, lr_steps)
        stats = train_epoch(models, opts, train, batch_size, seed, epoch, augment_config)
        metrics = evaluate(models, eval_data, (1, 5))
        row = EpochRow(epoch + 1, stats["loss"], metrics["top1"], metrics["top5"], time.perf_counter() - start)
        report.rows.append(row)
        if on_epoch:
            on_epoch(epoch, row)
        if stop_top1 is not None and row.top1 >= stop_top1:
            break
    return report
