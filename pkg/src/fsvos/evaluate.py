"""Clip and episode evaluation: per-frame scores, CSV reports, overlays."""

from pathlib import Path

import numpy as np
from PIL import Image

from .data import VideoClip
from .errors import ConfigurationError
from .metrics import ScoreSummary, aggregate, fb_iou, write_scores_csv
from .model import FewShotSegNet, SegPrediction, infer_video_naive
from .relearn import infer_video_relearned

__all__ = ["score_clip", "evaluate_clips", "overlay_rgb", "write_overlays",
           "run_eval", "EVAL_MODES"]

EVAL_MODES = ("naive", "relearned")


def predict_clip(net: FewShotSegNet, clip: VideoClip, mode: str,
                 window: int = 4) -> SegPrediction:
    """Per-frame predictions in the requested inference mode."""
    if mode == "naive":
        return infer_video_naive(net, clip)
    if mode == "relearned":
        return infer_video_relearned(net, clip, window)
    raise ConfigurationError(f"mode must be one of {EVAL_MODES}, got {mode!r}")


def score_clip(clip: VideoClip, prediction: SegPrediction, clip_id: str) -> list:
    """Score each query frame against the clip's evaluation masks.

    Returns (clip_id, frame_id, SegScore) rows with absolute frame indices.
    """
    gts = clip.evaluation_masks()
    pred_masks = prediction.masks_numpy()
    if len(pred_masks) != len(gts):
        raise ConfigurationError(
            f"{len(pred_masks)} predictions for {len(gts)} query frames")
    rows = []
    for offset, (pm, gt) in enumerate(zip(pred_masks, gts)):
        frame_id = clip.annotated_prefix + offset
        rows.append((clip_id, frame_id, fb_iou(pm, gt)))
    return rows


def evaluate_clips(net: FewShotSegNet, clips, mode: str = "naive",
                   window: int = 4, clip_ids=None):
    """Evaluate a list of clips; returns (rows, ScoreSummary)."""
    if clip_ids is None:
        clip_ids = [f"clip{{:0{max(4, len(str(len(clips))))}d}}".format(i)
                    for i in range(len(clips))]
    rows = []
    for cid, clip in zip(clip_ids, clips):
        prediction = predict_clip(net, clip, mode, window)
        rows.extend(score_clip(clip, prediction, cid))
    summary = aggregate(s for _, _, s in rows)
    return rows, summary


def overlay_rgb(image: np.ndarray, mask: np.ndarray, alpha: float = 0.5) -> np.ndarray:
    """Blend a predicted mask in red over a [C,H,W] image; returns [H,W,3] uint8."""
    img = np.clip(np.asarray(image, dtype=np.float32), 0.0, 1.0)
    if img.shape[0] == 1:
        rgb = np.repeat(img, 3, axis=0)
    else:
        rgb = img[:3]
    rgb = np.moveaxis(rgb, 0, 2).copy()
    fg = np.asarray(mask, dtype=bool)
    tint = np.array([1.0, 0.1, 0.1], dtype=np.float32)
    rgb[fg] = (1.0 - alpha) * rgb[fg] + alpha * tint
    return np.round(rgb * 255.0).astype(np.uint8)


def write_overlays(out_dir, clip: VideoClip, prediction: SegPrediction) -> list:
    """Write one overlay PNG per query frame; returns the written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    queries = clip.query_frames()
    paths = []
    for offset, pm in enumerate(prediction.masks_numpy()):
        frame_id = clip.annotated_prefix + offset
        path = out_dir / f"frame_{frame_id:04d}.png"
        Image.fromarray(overlay_rgb(queries[offset], pm)).save(path)
        paths.append(path)
    return paths


def run_eval(net: FewShotSegNet, clips, out_dir, mode: str = "naive",
             window: int = 4, clip_ids=None) -> ScoreSummary:
    """Full evaluation pass: metrics CSV plus per-clip overlay PNGs."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if clip_ids is None:
        clip_ids = [f"clip{i:04d}" for i in range(len(clips))]
    rows = []
    for cid, clip in zip(clip_ids, clips):
        prediction = predict_clip(net, clip, mode, window)
        rows.extend(score_clip(clip, prediction, cid))
        write_overlays(out_dir / "overlays" / cid, clip, prediction)
    write_scores_csv(out_dir / f"metrics_{mode}.csv", rows)
    return aggregate(s for _, _, s in rows)
