"""Self-supervised video adaptation against a frozen reference model.

Starting from an image-trained segmenter, a temporal attention unit is
inserted between the neck and the head, the head is frozen, and a frozen
copy of the original model (the teacher) provides feature and prediction
targets. The student then minimizes a weighted sum of three terms on
batches of consecutive unlabeled query frames:

- temporal smoothness of its own features across adjacent frames,
- closeness of its features to the teacher's on the same frames,
- closeness of its foreground probabilities to the teacher's.

The temporal unit's cross-frame mixing gate is zero-initialized, so before
the first update the student predicts exactly what the teacher predicts.
"""

import copy
import csv
import warnings
from dataclasses import dataclass, field

import torch
from torch import nn

from .checkpoint import state_bytes
from .config import Phase2Config
from .data import VideoClip
from .errors import FreezeViolation, NumericError, ValidationError
from .losses import LossWeights, loss_feature, loss_prediction, loss_temporal, total_loss
from .model import FewShotSegNet, SegPrediction, clip_support_tensors
from .validation import check_consecutive_indices

__all__ = [
    "TemporalBatch", "TemporalAttentionUnit", "TeacherStudentPair",
    "build_teacher_student", "consecutive_windows", "relearn",
    "infer_video_relearned", "RELEARN_LOG_HEADER",
]

RELEARN_LOG_HEADER = ("iteration", "loss_temporal", "loss_feature",
                      "loss_prediction", "total")


@dataclass
class TemporalBatch:
    """A batch of consecutive frames [B,C,H,W] with their frame indices."""

    frames: torch.Tensor
    frame_indices: tuple

    def __post_init__(self):
        idx = check_consecutive_indices(self.frame_indices)
        if self.frames.dim() != 4:
            raise ValidationError(f"frames must be [B,C,H,W], got {tuple(self.frames.shape)}")
        if len(idx) != self.frames.shape[0]:
            raise ValidationError(
                f"{self.frames.shape[0]} frames but {len(idx)} frame indices")
        self.frame_indices = tuple(idx)

    def __len__(self) -> int:
        return self.frames.shape[0]


class TemporalAttentionUnit(nn.Module):
    """Shape-preserving cross-frame gate, exactly the identity at init.

    Per frame, a spatial gate s = sigmoid(pointwise(depthwise(f))) selects
    locations; across frames, global-average-pooled descriptors pass through
    a 1-D temporal convolution and a sigmoid to give a neighborhood summary
    e, projected by a zero-initialized linear map. The output is
    f + mix(e) * s * f, so zero mixing weights leave features untouched, and
    identical frames always produce identical outputs.
    """

    def __init__(self, channels: int):
        super().__init__()
        self.spatial_dw = nn.Conv2d(channels, channels, 3, padding=1, groups=channels)
        self.spatial_pw = nn.Conv2d(channels, channels, 1)
        self.time_conv = nn.Conv1d(channels, channels, 3, padding=1,
                                   padding_mode="replicate")
        self.mix = nn.Linear(channels, channels)
        nn.init.zeros_(self.mix.weight)
        nn.init.zeros_(self.mix.bias)

    def forward(self, f: torch.Tensor) -> torch.Tensor:
        if f.dim() != 4:
            raise ValidationError(f"expected [T,C,h,w] features, got {tuple(f.shape)}")
        gate = torch.sigmoid(self.spatial_pw(self.spatial_dw(f)))
        desc = f.mean(dim=(2, 3))                                   # [T,C]
        mixed = self.time_conv(desc.t().unsqueeze(0)).squeeze(0).t()  # [T,C]
        weight = self.mix(torch.sigmoid(mixed))
        return f + weight[:, :, None, None] * gate * f


@dataclass
class TeacherStudentPair:
    """Frozen reference model plus the adapting student.

    Byte snapshots of the teacher and the student's head are taken at
    construction so freeze violations can be detected exactly.
    """

    teacher: FewShotSegNet
    student: FewShotSegNet
    teacher_bytes: bytes = field(repr=False, default=b"")
    head_bytes: bytes = field(repr=False, default=b"")

    def __post_init__(self):
        if not self.teacher_bytes:
            self.teacher_bytes = state_bytes(self.teacher)
        if not self.head_bytes:
            self.head_bytes = state_bytes(self.student.head)

    def verify_frozen(self) -> None:
        """Raise FreezeViolation if frozen parameters drifted."""
        if state_bytes(self.teacher) != self.teacher_bytes:
            raise FreezeViolation("teacher parameters changed during relearning")
        if state_bytes(self.student.head) != self.head_bytes:
            raise FreezeViolation("student head parameters changed during relearning")


def build_teacher_student(net: FewShotSegNet) -> TeacherStudentPair:
    """Create the frozen teacher and the trainable student from one model.

    The teacher is a deep copy without a temporal unit and with gradients
    disabled; the student is a deep copy with a zero-initialized temporal
    unit attached and its head frozen.
    """
    teacher = copy.deepcopy(net)
    teacher.temporal_unit = None
    teacher.eval()
    for p in teacher.parameters():
        p.requires_grad_(False)

    student = copy.deepcopy(net)
    if student.temporal_unit is None:
        student.temporal_unit = TemporalAttentionUnit(student.mid_channels)
    student.freeze_head()
    return TeacherStudentPair(teacher=teacher, student=student)


def consecutive_windows(n: int, size: int, merge_small_tail: bool = False) -> list:
    """Split range(n) into consecutive windows of ``size``.

    The tail window may be shorter; with ``merge_small_tail`` a tail of fewer
    than 2 frames is appended to the previous window (pairwise losses need at
    least one adjacent pair), provided a previous window exists.
    """
    if n < 1:
        raise ValidationError("need at least one frame to window")
    if size < 1:
        raise ValidationError("window size must be >= 1")
    windows = [list(range(start, min(start + size, n))) for start in range(0, n, size)]
    if merge_small_tail and len(windows) >= 2 and len(windows[-1]) < 2:
        tail = windows.pop()
        windows[-1].extend(tail)
    return windows


def _teacher_targets(teacher: FewShotSegNet, support_images, support_masks,
                     queries, windows) -> list:
    """Per-window (feature target, foreground-probability target) pairs.

    The teacher is frozen, so its outputs per window are constant across
    epochs and can be computed once.
    """
    cache = []
    with torch.no_grad():
        for win in windows:
            frames = queries[win[0]:win[-1] + 1]
            trace = teacher.episode_trace(support_images, support_masks, frames)
            cache.append((teacher.feature_tap(trace, student=False).detach(),
                          trace.prediction.fg.detach()))
    return cache


def relearn(pair: TeacherStudentPair, clip: VideoClip, weights: LossWeights = None,
            cfg: Phase2Config = Phase2Config(), log_path=None) -> FewShotSegNet:
    """Adapt the student on one clip's unlabeled query frames.

    Query ground truth is never read: the clip exposes masks only for its
    annotated prefix, which both models share as the support set. Emits an
    optional per-iteration CSV loss log and enforces the freeze contracts.
    """
    if weights is None:
        weights = LossWeights(cfg.lambda1, cfg.lambda2, cfg.lambda3)
    teacher, student = pair.teacher, pair.student
    support_images, support_masks = clip_support_tensors(clip)
    queries = torch.from_numpy(clip.query_frames())
    windows = consecutive_windows(queries.shape[0], cfg.batch_size,
                                  merge_small_tail=True)
    if len(windows) == 1 and len(windows[0]) < 2:
        warnings.warn("single query frame: temporal term has no adjacent pair")

    targets = _teacher_targets(teacher, support_images, support_masks, queries, windows)
    params = [p for p in student.parameters() if p.requires_grad]
    opt = torch.optim.SGD(params, lr=cfg.lr)

    log_file = open(log_path, "w", newline="") if log_path else None
    writer = None
    if log_file:
        writer = csv.writer(log_file)
        writer.writerow(RELEARN_LOG_HEADER)

    iteration = 0
    stop = False
    try:
        for _ in range(cfg.epochs):
            if stop:
                break
            for wi, win in enumerate(windows):
                if cfg.max_iterations and iteration >= cfg.max_iterations:
                    stop = True
                    break
                frames = queries[win[0]:win[-1] + 1]
                batch = TemporalBatch(frames, tuple(clip.annotated_prefix + i for i in win))
                trace = student.episode_trace(support_images, support_masks, batch.frames)
                if len(batch) >= 2:
                    l_t = loss_temporal(trace.attended)
                else:
                    l_t = torch.zeros((), dtype=trace.attended.dtype)
                z_target, fg_target = targets[wi]
                l_f = loss_feature(student.feature_tap(trace, student=True), z_target)
                l_p = loss_prediction(trace.prediction.fg, fg_target)
                total = total_loss(l_t, l_f, l_p, weights)
                if not bool(torch.isfinite(total)):
                    raise NumericError(
                        f"non-finite adaptation loss at iteration {iteration}: "
                        f"L_t={l_t.item():.4g} L_f={l_f.item():.4g} L_p={l_p.item():.4g}")
                opt.zero_grad()
                total.backward()
                opt.step()
                iteration += 1
                if any(p.grad is not None for p in teacher.parameters()):
                    raise FreezeViolation("teacher accumulated gradients during relearning")
                if writer:
                    writer.writerow([iteration, f"{l_t.item():.10g}", f"{l_f.item():.10g}",
                                     f"{l_p.item():.10g}", f"{total.item():.10g}"])
                if total.item() < cfg.early_stop_total:
                    stop = True
                    break
    finally:
        if log_file:
            log_file.close()

    pair.verify_frozen()
    return student


def infer_video_relearned(net: FewShotSegNet, clip: VideoClip,
                          window: int = 4) -> SegPrediction:
    """Segment query frames in consecutive windows through the temporal unit.

    Each frame is predicted exactly once; the tail window may be shorter and
    a single-frame window degenerates to per-frame gating.
    """
    support_images, support_masks = clip_support_tensors(clip)
    queries = torch.from_numpy(clip.query_frames())
    probs = []
    with torch.no_grad():
        for win in consecutive_windows(queries.shape[0], window):
            trace = net.episode_trace(support_images, support_masks,
                                      queries[win[0]:win[-1] + 1])
            probs.append(trace.prediction.probs)
    return SegPrediction(torch.cat(probs))
