"""Training objectives: supervised segmentation loss and consistency losses.

The consistency losses drive the self-supervised video adaptation stage:

- temporal: one minus the mean cosine similarity over consecutive frame
  feature pairs, so temporally smooth features score low;
- feature: mean squared error between the adapting model's features and the
  frozen reference model's features (reference side detached);
- prediction: mean squared error between the two models' foreground
  probability maps.

All functions are dtype-generic so float64 oracle checks stay exact.
"""

import warnings
from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .errors import ConfigurationError, ValidationError
from .validation import check_same_shape

__all__ = [
    "LossWeights", "loss_temporal", "loss_feature", "loss_prediction",
    "total_loss", "segmentation_loss", "soft_dice_loss",
]


@dataclass(frozen=True)
class LossWeights:
    """Non-negative trade-off weights for the three consistency terms."""

    lambda1: float = 1.0
    lambda2: float = 1.0
    lambda3: float = 1.0

    def __post_init__(self):
        for name in ("lambda1", "lambda2", "lambda3"):
            v = getattr(self, name)
            if not (v >= 0.0):
                raise ConfigurationError(f"{name} must be >= 0, got {v}")

    def as_tuple(self):
        return (self.lambda1, self.lambda2, self.lambda3)


def _as_frame_matrix(features) -> torch.Tensor:
    """Flatten per-frame features to a [T, D] matrix."""
    if isinstance(features, (list, tuple)):
        features = torch.stack(list(features))
    if features.dim() < 2:
        raise ValidationError(f"need at least [T, ...] features, got {features.dim()}-D")
    return features.reshape(features.shape[0], -1)


def loss_temporal(features) -> torch.Tensor:
    """1 - mean cosine similarity over consecutive frame pairs; range [0, 2].

    ``features`` is [T,C,h,w] (or a list of [C,h,w]); T must be at least 2.
    A zero-norm frame contributes cosine 0 for its pairs and emits a warning.
    """
    flat = _as_frame_matrix(features)
    t = flat.shape[0]
    if t < 2:
        raise ValidationError(f"temporal loss needs >= 2 frames, got {t}")
    norms = flat.norm(dim=1)
    zero = norms == 0
    if bool(zero.any()):
        warnings.warn("zero-norm frame feature; treating its cosine as 0")
    unit = flat / torch.where(zero, torch.ones_like(norms), norms).unsqueeze(1)
    cos = (unit[:-1] * unit[1:]).sum(dim=1)
    pair_zero = zero[:-1] | zero[1:]
    cos = torch.where(pair_zero, torch.zeros_like(cos), cos)
    return 1.0 - cos.mean()


def loss_feature(student: torch.Tensor, teacher: torch.Tensor) -> torch.Tensor:
    """Mean squared error between feature tensors; the teacher side is detached."""
    check_same_shape(student, teacher, "student features", "teacher features")
    diff = student - teacher.detach()
    return (diff * diff).mean()


def loss_prediction(student_fg: torch.Tensor, teacher_fg: torch.Tensor) -> torch.Tensor:
    """Mean squared error between foreground probability maps, teacher detached."""
    check_same_shape(student_fg, teacher_fg, "student probabilities", "teacher probabilities")
    diff = student_fg - teacher_fg.detach()
    return (diff * diff).mean()


def total_loss(l_t, l_f, l_p, weights: LossWeights):
    """Weighted sum of the three consistency terms."""
    return weights.lambda1 * l_t + weights.lambda2 * l_f + weights.lambda3 * l_p


def soft_dice_loss(fg_probs: torch.Tensor, target: torch.Tensor,
                   eps: float = 1e-6) -> torch.Tensor:
    """1 - soft Dice between a foreground probability map and a binary target."""
    check_same_shape(fg_probs, target, "probabilities", "target")
    t = target.to(fg_probs.dtype)
    inter = (fg_probs * t).sum()
    denom = fg_probs.sum() + t.sum()
    return 1.0 - (2.0 * inter + eps) / (denom + eps)


def segmentation_loss(logits: torch.Tensor, target: torch.Tensor,
                      dice_weight: float = 0.0) -> torch.Tensor:
    """Pixel-wise cross-entropy, optionally blended with a soft Dice term.

    ``logits`` is [B,2,H,W]; ``target`` is an integer [B,H,W] mask in {0,1}.
    """
    if logits.dim() != 4 or logits.shape[1] != 2:
        raise ValidationError(f"logits must be [B,2,H,W], got {tuple(logits.shape)}")
    if target.shape != (logits.shape[0],) + tuple(logits.shape[2:]):
        raise ValidationError(
            f"target shape {tuple(target.shape)} does not match logits "
            f"{tuple(logits.shape)}")
    ce = F.cross_entropy(logits, target.long())
    if dice_weight == 0.0:
        return ce
    fg = F.softmax(logits, dim=1)[:, 1]
    return ce + dice_weight * soft_dice_loss(fg, target)
