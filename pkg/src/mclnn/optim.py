"""Cross-entropy, ADAM and the epoch loop with early stopping."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .datasets import clip_accuracy, segment_starts, _pad_to
from .network import ModelParams, loss_and_gradients

__all__ = [
    "cross_entropy",
    "AdamState",
    "NonFiniteGradientError",
    "TrainingDiverged",
    "adam_step",
    "EpochRecord",
    "TrainRun",
    "train",
    "run_seeds",
    "write_history_csv",
]

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12


class NonFiniteGradientError(FloatingPointError):
    pass


class TrainingDiverged(RuntimeError):
    pass


def cross_entropy(probabilities, label: int) -> float:
    """Negative log-probability of ``label``, floored at 1e-12."""
    p = np.asarray(probabilities, dtype=np.float64)
    if not 0 <= label < p.shape[-1]:
        raise ValueError(f"label {label} outside 0..{p.shape[-1] - 1}")
    return float(-np.log(max(p[label], PROB_FLOOR)))


@dataclass
class AdamState:
    first_moments: list[np.ndarray]
    second_moments: list[np.ndarray]
    step_count: int = 0
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def zeros_like(cls, params, **hyper) -> "AdamState":
        arrays = params.arrays() if isinstance(params, ModelParams) else list(params)
        # moments stay float64 so g * g cannot overflow for float32 parameters
        zeros = [np.zeros(a.shape) for a in arrays]
        return cls(zeros, [z.copy() for z in zeros], 0, **hyper)


def adam_step(params, grads, state: AdamState):
    """One bias-corrected ADAM update.

    ``params`` and ``grads`` are either ``ModelParams`` or matching lists of
    arrays. Returns ``(new_params, new_state)``; the inputs are left intact.
    """
    structured = isinstance(params, ModelParams)
    p_arrays = params.arrays() if structured else list(params)
    g_arrays = grads.arrays() if isinstance(grads, ModelParams) else list(grads)
    if len(p_arrays) != len(g_arrays) or len(p_arrays) != len(state.first_moments):
        raise ValueError("parameters, gradients and optimizer state differ in length")
    hyper = (state.learning_rate, state.beta1, state.beta2, state.epsilon)
    if not all(math.isfinite(h) for h in hyper):
        raise ValueError("ADAM hyperparameters must be finite")
    lr, b1, b2, eps = hyper
    t = state.step_count + 1
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    new_p, new_m, new_v = [], [], []
    for i, (p, g, m, v) in enumerate(zip(p_arrays, g_arrays, state.first_moments, state.second_moments)):
        if p.shape != g.shape or p.shape != m.shape:
            raise ValueError(f"array {i}: parameter {p.shape}, gradient {g.shape}, moment {m.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"array {i}: gradient has non-finite entries")
        g = g.astype(np.float64, copy=False)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        if not np.all(np.isfinite(v)):
            raise NonFiniteGradientError(f"array {i}: second moment overflowed")
        step = lr * (m / c1) / (np.sqrt(v / c2) + eps)
        new_p.append((p - step).astype(p.dtype, copy=False))
        new_m.append(m)
        new_v.append(v)
    new_state = AdamState(new_m, new_v, t, lr, b1, b2, eps)
    return (params.with_arrays(new_p) if structured else new_p), new_state


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_accuracy: float


@dataclass
class TrainRun:
    best_params: ModelParams
    history: list[EpochRecord] = field(default_factory=list)
    stop_reason: str = ""
    best_epoch: int = 0


def run_seeds(seed):
    """Split one run seed into independent (init, shuffle, dropout) streams."""
    init, shuffle, dropout = np.random.SeedSequence(seed).spawn(3)
    return np.random.default_rng(init), np.random.default_rng(shuffle), np.random.default_rng(dropout)


def train(config, train_clips, val_clips, seed=None, dtype=None,
          on_epoch: Callable[[EpochRecord], None] | None = None) -> TrainRun:
    """Fit a model on ``train_clips``, keeping the epoch with the best validation accuracy.

    Clips are expected to be standardized already. Validation accuracy is
    clip-level (segment probabilities voted per clip). Training stops once
    ``patience`` epochs pass without improvement, or after ``max_epochs``.
    """
    from .config import build_params

    if not train_clips or not val_clips:
        raise ValueError("training needs at least one training and one validation clip")
    seed = config.seed if seed is None else seed
    dtype = np.dtype(dtype or config.dtype)
    index = {c: i for i, c in enumerate(config.classes)}
    for clip in [*train_clips, *val_clips]:
        if clip.frames.shape[1] != config.feature_length:
            raise ValueError(f"clip {clip.clip_id} has {clip.frames.shape[1]} features, config expects {config.feature_length}")
        if not np.all(np.isfinite(clip.frames)):
            raise ValueError(f"clip {clip.clip_id} has non-finite feature values")
        if clip.label not in index:
            raise ValueError(f"clip {clip.clip_id} has unknown label {clip.label!r}")
    init_rng, shuffle_rng, dropout_rng = run_seeds(seed)
    params = build_params(config, init_rng, dtype)
    q = params.segment_width

    frames = [_pad_to(np.asarray(c.frames, dtype=dtype), q) for c in train_clips]
    pairs = [(i, s) for i, f in enumerate(frames) for s in segment_starts(len(f), q, config.train_hop)]
    seg_clip = np.array([p[0] for p in pairs])
    seg_start = np.array([p[1] for p in pairs])
    seg_label = np.array([index[train_clips[i].label] for i in seg_clip])
    val_targets = [index[c.label] for c in val_clips]
    log.info("training on %d segments from %d clips", len(pairs), len(train_clips))

    state = AdamState.zeros_like(params, learning_rate=config.learning_rate, beta1=config.beta1,
                                 beta2=config.beta2, epsilon=config.epsilon)
    run = TrainRun(params)
    best_acc = -1.0
    for epoch in range(1, config.max_epochs + 1):
        order = shuffle_rng.permutation(len(pairs))
        total = 0.0
        for b in range(0, len(order), config.batch_size):
            idx = order[b:b + config.batch_size]
            x = np.stack([frames[seg_clip[i]][seg_start[i]:seg_start[i] + q] for i in idx])
            loss, grads = loss_and_gradients(params, x, seg_label[idx], dropout_rng, config.dropout)
            if not math.isfinite(loss):
                raise TrainingDiverged(f"epoch {epoch}, batch {b // config.batch_size}: loss is {loss}")
            try:
                params, state = adam_step(params, grads, state)
            except NonFiniteGradientError as exc:
                raise TrainingDiverged(f"epoch {epoch}, batch {b // config.batch_size}: {exc}") from exc
            total += loss * len(idx)
        acc = clip_accuracy(params, val_clips, val_targets, config.inference_hop)
        record = EpochRecord(epoch, total / len(order), acc)
        run.history.append(record)
        log.info("epoch %d: loss %.5f, validation accuracy %.4f", epoch, record.train_loss, acc)
        if on_epoch is not None:
            on_epoch(record)
        if acc > best_acc:
            best_acc = acc
            run.best_params = params.with_arrays([a.copy() for a in params.arrays()])
            run.best_epoch = epoch
        if epoch - run.best_epoch >= config.patience:
            run.stop_reason = "patience exhausted"
            break
    else:
        run.stop_reason = "max epochs"
    return run


def write_history_csv(path, history: Sequence[EpochRecord]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "train_loss", "val_accuracy"])
        for r in history:
            writer.writerow([r.epoch, repr(r.train_loss), repr(r.val_accuracy)])
