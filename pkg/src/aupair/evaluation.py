"""Competition metric plus ordering and occlusion diagnostics."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .data import INVALID_LABEL, read_label_csv
from .errors import AlignmentError, InvalidInputError, ShapeError, UndefinedMetricError


def competition_metric(avg_f1, total_accuracy):
    """0.5 * unweighted-mean F1 + 0.5 * total accuracy."""
    for name, v in (("avg_f1", avg_f1), ("total_accuracy", total_accuracy)):
        if not 0.0 <= v <= 1.0:
            raise InvalidInputError(f"{name}={v} outside [0, 1]")
    return 0.5 * avg_f1 + 0.5 * total_accuracy


@dataclass
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    @property
    def total(self):
        return self.tp + self.fp + self.fn + self.tn

    def f1(self):
        """2TP / (2TP + FP + FN); an AU with no positives anywhere scores 1 if any frame was evaluated."""
        denom = 2 * self.tp + self.fp + self.fn
        if denom == 0:
            return 1.0 if self.tn > 0 else 0.0
        return 2 * self.tp / denom

    def accuracy(self):
        return (self.tp + self.tn) / self.total if self.total else 0.0


def confusion_counts(pred, truth):
    """Tally one AU; frames whose truth is the invalid marker are skipped."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ShapeError(f"prediction shape {pred.shape} != truth shape {truth.shape}")
    valid = truth != INVALID_LABEL
    p = pred[valid] == 1
    t = truth[valid] == 1
    return ConfusionCounts(
        tp=int(np.sum(p & t)), fp=int(np.sum(p & ~t)), fn=int(np.sum(~p & t)), tn=int(np.sum(~p & ~t))
    )


@dataclass
class MetricReport:
    au_names: list
    f1: dict
    accuracy_per_au: dict
    counts: dict
    degenerate_f1: list  # AUs scored by the no-positives convention
    average_f1: float
    total_accuracy: float
    competition_metric: float
    evaluated: int
    skipped: int
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)

    def table(self, digits=3):
        fmt = f"{{:.{digits}f}}"
        width = max([len("AU"), *map(len, self.au_names)])
        lines = [f"{'AU':<{width}}  F1     Acc    TP     FP     FN     TN"]
        for au in self.au_names:
            c = self.counts[au]
            lines.append(
                f"{au:<{width}}  {fmt.format(self.f1[au])}  {fmt.format(self.accuracy_per_au[au])}  "
                f"{c['tp']:<6d} {c['fp']:<6d} {c['fn']:<6d} {c['tn']:<6d}"
            )
        lines.append("")
        lines.append(f"Average F1          {fmt.format(self.average_f1)}")
        lines.append(f"Total accuracy      {fmt.format(self.total_accuracy)}")
        lines.append(f"Competition metric  {fmt.format(self.competition_metric)}")
        lines.append(f"Evaluated decisions {self.evaluated} (skipped {self.skipped})")
        return "\n".join(lines)

    def write(self, path_stem):
        stem = Path(path_stem)
        stem.parent.mkdir(parents=True, exist_ok=True)
        json_path = stem.with_suffix(".json")
        txt_path = stem.with_suffix(".txt")
        json_path.write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True))
        txt_path.write_text(self.table() + "\n")
        return json_path, txt_path


@dataclass
class LabelTable:
    """Per-frame labels keyed by (video_id, frame_index), in the annotation CSV schema."""

    keys: list
    labels: np.ndarray
    au_names: tuple

    @classmethod
    def from_csv(cls, path):
        au_names, per_video = read_label_csv(path)
        keys, rows = [], []
        for vid in sorted(per_video):
            for fi, lab in sorted(per_video[vid]):
                keys.append((vid, fi))
                rows.append(lab)
        labels = np.array(rows, dtype=np.int64).reshape(len(rows), len(au_names))
        return cls(keys, labels, au_names)

    @classmethod
    def from_videos(cls, videos, predictions=None):
        """Ground truth from ``videos``, or predictions given as {video_id: (N, n_aus) array}."""
        keys, rows = [], []
        au_names = ()
        for v in sorted(videos, key=lambda v: v.video_id):
            au_names = v.au_names
            lab = v.labels if predictions is None else predictions[v.video_id]
            keys += [(v.video_id, int(fi)) for fi in v.frame_index]
            rows.append(np.asarray(lab, dtype=np.int64).reshape(len(v), -1))
        labels = np.concatenate(rows) if rows else np.zeros((0, len(au_names)), dtype=np.int64)
        return cls(keys, labels, tuple(au_names))

    def sorted(self):
        order = sorted(range(len(self.keys)), key=lambda k: self.keys[k])
        return LabelTable([self.keys[k] for k in order], self.labels[order], self.au_names)

    def to_csv(self, path):
        from .data import _write_csv_atomic

        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        rows = [["video_id", "frame_index", *self.au_names]]
        rows += [[vid, str(fi), *map(str, lab)] for (vid, fi), lab in zip(self.keys, self.labels)]
        _write_csv_atomic(path, rows)


def _align(pred, truth, au_list):
    pred, truth = pred.sorted(), truth.sorted()
    for a, b in zip(pred.keys, truth.keys):
        if a != b:
            raise AlignmentError(f"first misaligned frame: prediction {a} vs ground truth {b}")
    if len(pred.keys) != len(truth.keys):
        longer = pred.keys if len(pred.keys) > len(truth.keys) else truth.keys
        raise AlignmentError(f"first misaligned frame: {longer[min(len(pred.keys), len(truth.keys))]} unmatched")
    missing = [au for au in au_list if au not in pred.au_names or au not in truth.au_names]
    if missing:
        raise AlignmentError(f"AU column {missing[0]!r} missing from predictions or ground truth")
    p = pred.labels[:, [pred.au_names.index(au) for au in au_list]]
    t = truth.labels[:, [truth.au_names.index(au) for au in au_list]]
    return p, t


def score_occurrence(predictions, ground_truth, au_list=None):
    """F1 per AU, unweighted mean F1, pooled frame-AU accuracy and the competition metric.

    Inputs are ``LabelTable`` objects (aligned by key) or plain (frames, aus)
    arrays already in the same order.
    """
    if isinstance(predictions, LabelTable):
        au_list = list(au_list or ground_truth.au_names)
        p, t = _align(predictions, ground_truth, au_list)
    else:
        p = np.asarray(predictions)
        t = np.asarray(ground_truth)
        if p.ndim == 1:
            p, t = p[:, None], t[:, None] if t.ndim == 1 else t
        if p.shape != t.shape:
            raise AlignmentError(f"prediction shape {p.shape} != ground truth shape {t.shape}")
        au_list = list(au_list or [f"AU{k}" for k in range(p.shape[1])])
    counts = {au: confusion_counts(p[:, k], t[:, k]) for k, au in enumerate(au_list)}
    f1 = {au: c.f1() for au, c in counts.items()}
    correct = sum(c.tp + c.tn for c in counts.values())
    evaluated = sum(c.total for c in counts.values())
    avg_f1 = float(np.mean(list(f1.values()))) if f1 else 0.0
    acc = correct / evaluated if evaluated else 0.0
    return MetricReport(
        au_names=au_list,
        f1=f1,
        accuracy_per_au={au: c.accuracy() for au, c in counts.items()},
        counts={au: asdict(c) for au, c in counts.items()},
        degenerate_f1=[au for au, c in counts.items() if 2 * c.tp + c.fp + c.fn == 0],
        average_f1=avg_f1,
        total_accuracy=acc,
        competition_metric=competition_metric(avg_f1, acc),
        evaluated=evaluated,
        skipped=int(t.size - evaluated),
    )


def kendall_tau(series_a, series_b):
    """Kendall tau-b; raises when either series is constant."""
    a = np.asarray(series_a, dtype=np.float64)
    b = np.asarray(series_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ShapeError(f"series shapes differ: {a.shape} vs {b.shape}")
    if len(a) < 2:
        raise ShapeError("kendall_tau needs at least two observations")
    if np.all(a == a[0]) or np.all(b == b[0]):
        raise UndefinedMetricError("kendall tau undefined for a constant series")
    return float(stats.kendalltau(a, b, variant="b").statistic)


def occlusion_auroc(sigma, occluded_flags):
    """Mann-Whitney AUROC of ``sigma`` as a detector of occluded frames (ties count half)."""
    s = np.asarray(sigma, dtype=np.float64)
    f = np.asarray(occluded_flags, dtype=bool)
    if s.shape != f.shape:
        raise ShapeError(f"sigma shape {s.shape} != flags shape {f.shape}")
    n_pos = int(f.sum())
    n_neg = len(f) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUROC needs both occluded and clean frames")
    ranks = stats.rankdata(s)
    return float((ranks[f].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))
