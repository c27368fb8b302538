"""Fold manifests, segment extraction, clip voting and cross-validated evaluation."""
from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .network import ModelParams, Segment, forward_batch

__all__ = [
    "ManifestEntry",
    "FoldManifest",
    "ManifestError",
    "FoldSplit",
    "parse_manifest",
    "fold_split",
    "segment_starts",
    "segment_array",
    "extract_segments",
    "vote",
    "predict_clip",
    "EvaluationReport",
    "report_from_predictions",
    "evaluate",
    "cross_validate",
]

log = logging.getLogger(__name__)


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    fold: int
    label: str


@dataclass
class FoldManifest:
    entries: list[ManifestEntry]
    classes: tuple[str, ...]

    @property
    def class_index(self) -> dict[str, int]:
        return {c: i for i, c in enumerate(self.classes)}

    @property
    def num_folds(self) -> int:
        return max(e.fold for e in self.entries)

    def to_csv(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["path", "fold", "label"])
        for e in self.entries:
            writer.writerow([e.path, e.fold, e.label])
        return out.getvalue()


def parse_manifest(data, num_folds: int | None = None, min_folds: int = 3) -> FoldManifest:
    """Parse a ``path,fold,label`` CSV into a validated manifest.

    Classes are indexed alphabetically. ``num_folds`` fixes the fold range;
    otherwise it is taken as the largest fold present, and every fold in
    ``1..F`` must hold at least one entry.
    """
    if isinstance(data, bytes):
        data = data.decode("utf-8-sig")
    reader = csv.DictReader(io.StringIO(data))
    missing = {"path", "fold", "label"} - set(reader.fieldnames or ())
    if missing:
        raise ManifestError(f"manifest is missing column(s): {', '.join(sorted(missing))}")
    entries, seen = [], set()
    for lineno, row in enumerate(reader, start=2):
        path = (row["path"] or "").strip()
        label = (row["label"] or "").strip()
        if not path or not label:
            raise ManifestError(f"line {lineno}: empty path or label")
        try:
            fold = int(row["fold"])
        except (TypeError, ValueError):
            raise ManifestError(f"line {lineno}: fold {row['fold']!r} is not an integer") from None
        if fold < 1 or (num_folds is not None and fold > num_folds):
            raise ManifestError(f"line {lineno}: fold {fold} out of range")
        if path in seen:
            raise ManifestError(f"line {lineno}: duplicate path {path}")
        seen.add(path)
        entries.append(ManifestEntry(path, fold, label))
    if not entries:
        raise ManifestError("manifest has no entries")
    n = num_folds or max(e.fold for e in entries)
    if n < min_folds:
        raise ManifestError(f"need at least {min_folds} folds for train/validation/test, got {n}")
    empty = sorted(set(range(1, n + 1)) - {e.fold for e in entries})
    if empty:
        raise ManifestError(f"fold(s) {empty} have no entries")
    return FoldManifest(entries, tuple(sorted({e.label for e in entries})))


@dataclass(frozen=True)
class FoldSplit:
    train: tuple[int, ...]
    validation: int
    test: int


def fold_split(num_folds: int, test_fold: int) -> FoldSplit:
    """Rotation for ``test_fold``: the next fold (wrapping) validates, the rest train."""
    if isinstance(num_folds, FoldManifest):
        num_folds = num_folds.num_folds
    if not 1 <= test_fold <= num_folds:
        raise ValueError(f"test fold {test_fold} outside 1..{num_folds}")
    validation = test_fold % num_folds + 1
    train = tuple(f for f in range(1, num_folds + 1) if f not in (test_fold, validation))
    return FoldSplit(train, validation, test_fold)


def segment_starts(n_frames: int, q: int, hop: int = 1) -> np.ndarray:
    if q < 1 or hop < 1:
        raise ValueError(f"segment width and hop must be >= 1, got q={q}, hop={hop}")
    if n_frames < q:
        return np.zeros(1, dtype=np.int64)
    return np.arange(0, n_frames - q + 1, hop, dtype=np.int64)


def _pad_to(frames: np.ndarray, q: int) -> np.ndarray:
    if len(frames) >= q:
        return frames
    if len(frames) == 0:
        raise ValueError("clip has no frames")
    tail = np.repeat(frames[-1:], q - len(frames), axis=0)
    return np.concatenate([frames, tail])


def segment_array(frames: np.ndarray, q: int, hop: int = 1) -> np.ndarray:
    """All segments of a ``(T, l)`` clip stacked as ``(S, q, l)``.

    Clips shorter than ``q`` are padded by repeating their final frame.
    """
    frames = _pad_to(np.asarray(frames), q)
    starts = segment_starts(len(frames), q, hop)
    return np.stack([frames[s:s + q] for s in starts])


def extract_segments(clip, q: int, hop: int = 1) -> list[Segment]:
    frames = clip.frames
    clip_id = getattr(clip, "clip_id", "")
    padded = _pad_to(np.asarray(frames), q)
    return [Segment(padded[s:s + q], clip_id, int(s)) for s in segment_starts(len(padded), q, hop)]


def vote(segment_probs) -> tuple[int, np.ndarray]:
    """Average segment probabilities; ties go to the lowest class index."""
    probs = np.asarray(segment_probs, dtype=float)
    if probs.ndim != 2 or probs.shape[0] == 0:
        raise ValueError("vote needs a non-empty list of equal-length probability vectors")
    mean = probs.mean(axis=0)
    return int(np.argmax(mean)), mean


def predict_clip(params: ModelParams, frames: np.ndarray, hop: int = 1, batch_size: int = 256):
    """Vote over every segment of one clip. Returns ``(class, mean_probs)``."""
    segs = segment_array(frames, params.segment_width, hop)
    probs = [forward_batch(params, segs[i:i + batch_size]) for i in range(0, len(segs), batch_size)]
    return vote(np.concatenate(probs))


def clip_accuracy(params: ModelParams, clips, targets: Sequence[int], hop: int = 1) -> float:
    if not clips:
        raise ValueError("no clips to score")
    hits = sum(predict_clip(params, c.frames, hop)[0] == t for c, t in zip(clips, targets))
    return hits / len(clips)


@dataclass
class EvaluationReport:
    fold_accuracies: dict[int, float]
    confusion: np.ndarray  # rows = true class, columns = predicted
    classes: tuple[str, ...] = ()

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean(list(self.fold_accuracies.values())))

    def to_dict(self) -> dict:
        return {
            "classes": list(self.classes),
            "fold_accuracies": {str(f): a for f, a in sorted(self.fold_accuracies.items())},
            "mean_accuracy": self.mean_accuracy,
            "confusion": self.confusion.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def confusion_table(self) -> str:
        """Plain-text confusion matrix: true labels down, predicted across."""
        names = list(self.classes) or [str(i) for i in range(len(self.confusion))]
        width = max(max(len(n) for n in names), len(str(self.confusion.max(initial=0)))) + 1
        lines = [" " * width + "".join(n.rjust(width) for n in names)]
        for name, row in zip(names, self.confusion):
            lines.append(name.ljust(width) + "".join(str(v).rjust(width) for v in row))
        lines.append("(rows: true label, columns: predicted label)")
        return "\n".join(lines) + "\n"


def report_from_predictions(records: Iterable[tuple[int, int, int]], n_classes: int, classes=()) -> EvaluationReport:
    """Build a report from ``(fold, true_class, predicted_class)`` triples."""
    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    hits: dict[int, list[int]] = {}
    for fold, true, pred in records:
        confusion[true, pred] += 1
        hits.setdefault(fold, []).append(int(true == pred))
    if not hits:
        raise ValueError("no predictions to report")
    accs = {f: sum(h) / len(h) for f, h in sorted(hits.items())}
    return EvaluationReport(accs, confusion, tuple(classes))


def evaluate(models: Mapping[int, tuple], clips, classes: Sequence[str], hop: int = 1) -> EvaluationReport:
    """Score per-fold models on their test folds.

    ``models`` maps a test fold to ``(params, standardizer)``; the
    standardizer (or ``None``) is applied to that fold's clips first.
    """
    from .features import apply_standardizer

    index = {c: i for i, c in enumerate(classes)}
    records = []
    for fold, (params, standardizer) in sorted(models.items()):
        for clip in clips:
            if clip.fold != fold:
                continue
            if clip.frames.shape[0] == 0:
                raise ValueError(f"clip {clip.clip_id} has no frames")
            if standardizer is not None:
                clip = apply_standardizer(clip, standardizer)
            pred, _ = predict_clip(params, clip.frames, hop)
            records.append((fold, index[clip.label], pred))
    return report_from_predictions(records, len(classes), classes)


@dataclass
class FoldOutcome:
    fold: int
    params: ModelParams
    standardizer: object
    history: list = field(default_factory=list)


def _run_rotation(config, clips, num_folds: int, test_fold: int, seed: int) -> FoldOutcome:
    from .features import apply_standardizer, fit_standardizer
    from .optim import train

    split = fold_split(num_folds, test_fold)
    train_clips = [c for c in clips if c.fold in split.train]
    val_clips = [c for c in clips if c.fold == split.validation]
    standardizer = fit_standardizer(train_clips)
    train_clips = [apply_standardizer(c, standardizer) for c in train_clips]
    val_clips = [apply_standardizer(c, standardizer) for c in val_clips]
    log.info("fold %d: %d train clips, %d validation clips", test_fold, len(train_clips), len(val_clips))
    run = train(config, train_clips, val_clips, seed=[seed, test_fold])
    return FoldOutcome(test_fold, run.best_params, standardizer, run.history)


def cross_validate(config, clips, folds: Sequence[int] | None = None, seed: int | None = None,
                   jobs: int = 1, num_folds: int | None = None):
    """Train and score one model per test fold.

    Each rotation refits the standardizer on its own training folds. Returns
    ``(report, outcomes)``. Rotations run in ``jobs`` worker processes; the
    result does not depend on ``jobs``.
    """
    num_folds = num_folds or max(c.fold for c in clips)
    folds = list(folds) if folds is not None else list(range(1, num_folds + 1))
    seed = config.seed if seed is None else seed
    args = [(config, clips, num_folds, f, seed) for f in folds]
    if jobs > 1 and len(folds) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_run_rotation, *zip(*args)))
    else:
        outcomes = [_run_rotation(*a) for a in args]
    models = {o.fold: (o.params, o.standardizer) for o in outcomes}
    report = evaluate(models, clips, config.classes, config.inference_hop)
    return report, outcomes
