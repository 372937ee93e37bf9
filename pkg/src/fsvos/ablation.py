"""Consistency-loss ablation harness: on/off matrix over the three terms.

Five configurations are compared on synthetic novel-class clips: the
unadapted per-frame baseline, three leave-one-loss-out adaptations, and the
full adaptation. Each row reports mean Dice and IoU over all seeds, clips,
and query frames. A run whose Dice collapses below half of the baseline's is
flagged, which surfaces the instability that can appear when the prediction
consistency term is disabled.
"""

import csv
import dataclasses
from dataclasses import dataclass
from pathlib import Path

import torch

from .config import Phase2Config
from .data import SynthConfig, generate_video_clip
from .errors import ConfigurationError
from .losses import LossWeights
from .metrics import aggregate
from .model import FewShotSegNet, infer_video_naive
from .relearn import build_teacher_student, infer_video_relearned, relearn
from .evaluate import score_clip
from .seeding import substream_seed

__all__ = ["AblationRow", "AblationResult", "ABLATION_ROW_NAMES", "run_ablation",
           "write_ablation_csv", "format_ablation_table"]

ABLATION_ROW_NAMES = ("baseline", "no_temporal", "no_feature", "no_prediction", "full")

_ROW_PATTERN = {
    # name -> (temporal on, feature on, prediction on); None = no adaptation
    "baseline": None,
    "no_temporal": (False, True, True),
    "no_feature": (True, False, True),
    "no_prediction": (True, True, False),
    "full": (True, True, True),
}


@dataclass(frozen=True)
class AblationRow:
    name: str
    use_temporal: bool
    use_feature: bool
    use_prediction: bool
    dice: float
    fg_iou: float
    bg_iou: float
    fb_iou: float
    flagged: bool


@dataclass(frozen=True)
class AblationResult:
    rows: tuple
    full_vs_baseline_ok: bool
    full_vs_leave_one_out_ok: bool
    collapse_flagged: bool

    def row(self, name: str) -> AblationRow:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)


def row_weights(name: str, base: LossWeights) -> LossWeights:
    pattern = _ROW_PATTERN[name]
    if pattern is None:
        raise ConfigurationError("the baseline row has no loss weights")
    t, f, p = pattern
    return LossWeights(base.lambda1 if t else 0.0,
                       base.lambda2 if f else 0.0,
                       base.lambda3 if p else 0.0)


def _mean_scores(rows):
    return aggregate(s for _, _, s in rows).mean


def run_ablation(net: FewShotSegNet, data_cfg: SynthConfig,
                 phase2: Phase2Config = Phase2Config(),
                 seeds=(0, 1, 2, 3, 4), clips_per_seed: int = 5,
                 slack: float = 0.02, progress=None) -> AblationResult:
    """Run the five-row on/off matrix and the direction-of-effect checks.

    For every seed a fresh set of novel-class clips is generated; every
    adapted row relearns a fresh student per clip from the same image-trained
    model. Deterministic given the model, config, and seeds.
    """
    base_weights = LossWeights(phase2.lambda1, phase2.lambda2, phase2.lambda3)
    clips = []
    for s in seeds:
        cfg_s = dataclasses.replace(data_cfg, seed=int(s))
        for cls in cfg_s.novel_classes:
            for i in range(clips_per_seed):
                clips.append((f"s{s}_{cls}{i:02d}", int(s), cfg_s, cls, i))

    per_row_scores = {name: [] for name in ABLATION_ROW_NAMES}
    for cid, s, cfg_s, cls, i in clips:
        clip = generate_video_clip(cfg_s, cls, index=i)
        naive_pred = infer_video_naive(net, clip)
        per_row_scores["baseline"].extend(score_clip(clip, naive_pred, cid))
        for name in ABLATION_ROW_NAMES[1:]:
            torch.manual_seed(substream_seed(s, "ablate", name, cls, i))
            pair = build_teacher_student(net)
            student = relearn(pair, clip, row_weights(name, base_weights), phase2)
            pred = infer_video_relearned(student, clip, phase2.window)
            per_row_scores[name].extend(score_clip(clip, pred, cid))
        if progress:
            progress(cid)

    baseline_mean = _mean_scores(per_row_scores["baseline"])
    rows = []
    for name in ABLATION_ROW_NAMES:
        mean = _mean_scores(per_row_scores[name])
        pattern = _ROW_PATTERN[name] or (False, False, False)
        flagged = name != "baseline" and mean.dice < 0.5 * baseline_mean.dice
        rows.append(AblationRow(name, *pattern, dice=mean.dice, fg_iou=mean.fg_iou,
                                bg_iou=mean.bg_iou, fb_iou=mean.fb_iou, flagged=flagged))

    by_name = {r.name: r for r in rows}
    full = by_name["full"]
    loo_ok = all(full.dice >= by_name[n].dice - slack
                 for n in ("no_temporal", "no_feature", "no_prediction"))
    return AblationResult(
        rows=tuple(rows),
        full_vs_baseline_ok=full.dice >= by_name["baseline"].dice - slack,
        full_vs_leave_one_out_ok=loo_ok,
        collapse_flagged=by_name["no_prediction"].flagged,
    )


ABLATION_CSV_HEADER = ("row", "temporal", "feature", "prediction",
                       "dice", "fg_iou", "bg_iou", "fb_iou", "flagged")


def write_ablation_csv(path, result: AblationResult) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(ABLATION_CSV_HEADER)
        for r in result.rows:
            writer.writerow([r.name, int(r.use_temporal), int(r.use_feature),
                             int(r.use_prediction), f"{r.dice:.6f}", f"{r.fg_iou:.6f}",
                             f"{r.bg_iou:.6f}", f"{r.fb_iou:.6f}", int(r.flagged)])


def format_ablation_table(result: AblationResult) -> str:
    """Human-readable on/off table with one row per configuration."""
    mark = lambda on: "x" if on else " "
    lines = [f"{'row':<14} {'T':>2} {'F':>2} {'P':>2} {'dice':>8} {'fb_iou':>8}  flag"]
    for r in result.rows:
        flag = "COLLAPSE" if r.flagged else ""
        lines.append(f"{r.name:<14} {mark(r.use_temporal):>2} {mark(r.use_feature):>2} "
                     f"{mark(r.use_prediction):>2} {r.dice:>8.4f} {r.fb_iou:>8.4f}  {flag}")
    return "\n".join(lines)
