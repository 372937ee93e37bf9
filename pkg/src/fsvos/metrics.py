"""Dice and foreground-background IoU, with per-clip aggregation and CSV output.

Empty-vs-empty convention: if both masks are empty for a region (foreground or
background), that region scores 1.0, since both masks agree there is nothing.
"""

import csv
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import ValidationError
from .validation import check_mask, check_same_shape


@dataclass(frozen=True)
class SegScore:
    """Per-mask-pair segmentation quality. fb_iou is the fg/bg IoU average."""

    dice: float
    fg_iou: float
    bg_iou: float

    @property
    def fb_iou(self) -> float:
        return 0.5 * (self.fg_iou + self.bg_iou)


@dataclass(frozen=True)
class ScoreSummary:
    mean: SegScore
    count: int


def _confusion(pred, gt):
    pred = check_mask(pred, "pred")
    gt = check_mask(gt, "gt")
    check_same_shape(pred, gt, "pred", "gt")
    p = pred.astype(bool)
    g = gt.astype(bool)
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    tn = int(np.count_nonzero(~p & ~g))
    return tp, fp, fn, tn


def dice(pred, gt) -> float:
    """Dice overlap 2|P∩G| / (|P|+|G|); 1.0 when both masks are empty."""
    tp, fp, fn, _ = _confusion(pred, gt)
    denom = 2 * tp + fp + fn
    if denom == 0:
        return 1.0
    return 2.0 * tp / denom


def fb_iou(pred, gt) -> SegScore:
    """Foreground and background IoU plus Dice for one mask pair."""
    tp, fp, fn, tn = _confusion(pred, gt)
    fg_union = tp + fp + fn
    bg_union = tn + fp + fn
    fg = 1.0 if fg_union == 0 else tp / fg_union
    bg = 1.0 if bg_union == 0 else tn / bg_union
    d = 1.0 if (2 * tp + fp + fn) == 0 else 2.0 * tp / (2 * tp + fp + fn)
    return SegScore(dice=d, fg_iou=fg, bg_iou=bg)


def aggregate(scores: Iterable[SegScore]) -> ScoreSummary:
    """Arithmetic mean per field over one or more scores."""
    scores = list(scores)
    if not scores:
        raise ValidationError("aggregate requires at least one score")
    mean = SegScore(
        dice=float(np.mean([s.dice for s in scores])),
        fg_iou=float(np.mean([s.fg_iou for s in scores])),
        bg_iou=float(np.mean([s.bg_iou for s in scores])),
    )
    return ScoreSummary(mean=mean, count=len(scores))


SCORE_CSV_HEADER = ("clip_id", "frame_id", "dice", "fg_iou", "bg_iou", "fb_iou")


def write_scores_csv(path, rows: Sequence[tuple], summary_label: str = "mean"):
    """Write per-frame score rows plus one summary row.

    Each row is (clip_id, frame_id, SegScore). The summary row carries the
    field-wise mean with the frame count in the frame_id column.
    """
    rows = list(rows)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SCORE_CSV_HEADER)
        for clip_id, frame_id, s in rows:
            writer.writerow([clip_id, frame_id,
                             f"{s.dice:.6f}", f"{s.fg_iou:.6f}", f"{s.bg_iou:.6f}", f"{s.fb_iou:.6f}"])
        if rows:
            summary = aggregate(s for _, _, s in rows)
            m = summary.mean
            writer.writerow([summary_label, summary.count,
                             f"{m.dice:.6f}", f"{m.fg_iou:.6f}", f"{m.bg_iou:.6f}", f"{m.fb_iou:.6f}"])
