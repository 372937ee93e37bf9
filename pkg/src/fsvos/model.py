"""Few-shot segmentation model: similarity prior, fusion, neck, and head.

The pipeline segments a query image conditioned on a small support set:

1. A pseudo mask localizes the query object as the per-location maximum
   cosine similarity between high-level query features and the support's
   foreground feature vectors, min-max normalized per image.
2. Cross-resolution fusion concatenates the upsampled pseudo mask with
   mid-level query features and mid-level masked-support features, projected
   back to the mid channel width by a learned 1x1 convolution.
3. A light two-scale neck exchanges information across strides.
4. A small head predicts per-pixel background/foreground probabilities.

An optional temporal unit slot between neck and head is populated during
video adaptation; it is None for image-trained models.
"""

import warnings
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .backbone import Backbone, BackboneConfig, FeatureMap, extract_masked_support
from .data import Episode, VideoClip
from .errors import ConfigurationError, ShapeError
from .validation import check_binary_tensor

__all__ = [
    "ArchConfig", "PseudoMask", "SegPrediction", "EpisodeTrace",
    "pseudo_mask", "mask_to_grid", "support_mid_summary",
    "FusionModule", "LightNeck", "build_neck", "SegHead",
    "FewShotSegNet", "build_model", "infer_video_naive",
]

_NECK_VARIANTS = ("light", "identity")
_SUPPORT_MID_MODES = ("spatial", "pooled")
_FEATURE_TAPS = ("neck", "fusion")

# Raw-similarity spans below this are treated as constant maps.
_DEGENERATE_SPAN = 1e-6
_COSINE_EPS = 1e-7


@dataclass(frozen=True)
class ArchConfig:
    """Full architecture description, serialized alongside checkpoints."""

    in_channels: int = 1
    channels: tuple = (16, 32, 64, 64)
    stage_strides: tuple = (2, 2, 2, 1)
    mid_tap: int = 2
    high_tap: int = 4
    norm_groups: int = 8
    neck: str = "light"
    support_mid_mode: str = "spatial"
    feature_tap: str = "neck"

    def __post_init__(self):
        if self.neck not in _NECK_VARIANTS:
            raise ConfigurationError(f"neck must be one of {_NECK_VARIANTS}, got {self.neck!r}")
        if self.support_mid_mode not in _SUPPORT_MID_MODES:
            raise ConfigurationError(
                f"support_mid_mode must be one of {_SUPPORT_MID_MODES}, "
                f"got {self.support_mid_mode!r}")
        if self.feature_tap not in _FEATURE_TAPS:
            raise ConfigurationError(
                f"feature_tap must be one of {_FEATURE_TAPS}, got {self.feature_tap!r}")
        self.backbone_config()  # validates the backbone fields

    def backbone_config(self) -> BackboneConfig:
        return BackboneConfig(
            in_channels=self.in_channels,
            channels=tuple(self.channels),
            stage_strides=tuple(self.stage_strides),
            mid_tap=self.mid_tap,
            high_tap=self.high_tap,
            norm_groups=self.norm_groups,
        )

    def to_dict(self) -> dict:
        return {
            "in_channels": self.in_channels,
            "channels": list(self.channels),
            "stage_strides": list(self.stage_strides),
            "mid_tap": self.mid_tap,
            "high_tap": self.high_tap,
            "norm_groups": self.norm_groups,
            "neck": self.neck,
            "support_mid_mode": self.support_mid_mode,
            "feature_tap": self.feature_tap,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArchConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown arch keys: {sorted(unknown)}")
        d = dict(d)
        for key in ("channels", "stage_strides"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass
class PseudoMask:
    """A [K,1,h,w] object-prior map in [0,1] at the high-tap stride."""

    data: torch.Tensor
    stride: int

    def __post_init__(self):
        if self.data.dim() != 4 or self.data.shape[1] != 1:
            raise ShapeError(f"pseudo mask must be [K,1,h,w], got {tuple(self.data.shape)}")


@dataclass
class SegPrediction:
    """Per-pixel class probabilities [B,2,H,W] over {background, foreground}."""

    probs: torch.Tensor

    def __post_init__(self):
        if self.probs.dim() != 4 or self.probs.shape[1] != 2:
            raise ShapeError(f"probs must be [B,2,H,W], got {tuple(self.probs.shape)}")

    @property
    def fg(self) -> torch.Tensor:
        """Foreground probability map [B,H,W]."""
        return self.probs[:, 1]

    @property
    def mask(self) -> torch.Tensor:
        """Argmax binarization [B,H,W] with values in {0,1}."""
        return self.probs.argmax(dim=1).to(torch.uint8)

    def masks_numpy(self) -> list:
        return [m for m in self.mask.cpu().numpy()]


@dataclass
class EpisodeTrace:
    """Intermediate tensors of one forward pass, kept for loss taps."""

    pseudo: PseudoMask
    fused: torch.Tensor      # [K,C,h,w] fusion output
    necked: torch.Tensor     # [K,C,h,w] neck output
    attended: torch.Tensor   # [K,C,h,w] temporal-unit output (== necked without one)
    logits: torch.Tensor     # [K,2,h,w]
    prediction: SegPrediction


def mask_to_grid(masks: torch.Tensor, stride: int) -> torch.Tensor:
    """Downsample binary [N,H,W] masks to the feature grid.

    A grid cell is foreground when any pixel it covers is foreground, so thin
    structures survive the downsampling.
    """
    check_binary_tensor(masks, name="mask")
    if masks.dim() != 3:
        raise ShapeError(f"masks must be [N,H,W], got {tuple(masks.shape)}")
    if masks.shape[-1] % stride or masks.shape[-2] % stride:
        raise ShapeError(f"mask size {tuple(masks.shape[-2:])} not divisible by stride {stride}")
    if stride == 1:
        return masks > 0
    pooled = F.max_pool2d(masks.to(torch.float32).unsqueeze(1), stride, stride)
    return pooled.squeeze(1) > 0


def _normalize(x: torch.Tensor, dim: int) -> torch.Tensor:
    return x / x.norm(dim=dim, keepdim=True).clamp_min(_COSINE_EPS)


def pseudo_mask(query_high: FeatureMap, support_high_masked: FeatureMap,
                support_masks: torch.Tensor) -> PseudoMask:
    """Cosine-similarity object prior for each query location.

    For each support shot, every query location's raw score is the maximum
    cosine similarity between its channel vector and the support's foreground
    vectors; scores are min-max normalized per query image. Multi-shot priors
    are averaged element-wise. A constant raw map (or a support with no
    foreground at feature resolution) yields the neutral value 0.5.
    """
    q = query_high.data
    s = support_high_masked.data
    if q.shape[1] != s.shape[1]:
        raise ShapeError(
            f"query/support channel mismatch: {q.shape[1]} vs {s.shape[1]}")
    k, c, h, w = q.shape
    grid = mask_to_grid(support_masks, query_high.stride)
    if grid.shape[-2:] != s.shape[-2:]:
        raise ShapeError(
            f"support mask grid {tuple(grid.shape[-2:])} does not match "
            f"support features {tuple(s.shape[-2:])}")

    qn = _normalize(q.reshape(k, c, h * w), dim=1)
    maps = []
    for i in range(s.shape[0]):
        fg = grid[i].reshape(-1)
        if not bool(fg.any()):
            warnings.warn("support foreground empty at feature resolution; "
                          "using neutral pseudo mask")
            maps.append(torch.full((k, h * w), 0.5, dtype=q.dtype, device=q.device))
            continue
        vecs = s[i].reshape(c, -1)[:, fg]           # [C,M]
        vn = _normalize(vecs, dim=0)
        raw = torch.einsum("kcl,cm->klm", qn, vn).amax(dim=2)   # [K, h*w]
        lo = raw.amin(dim=1, keepdim=True)
        hi = raw.amax(dim=1, keepdim=True)
        span = hi - lo
        degenerate = span < _DEGENERATE_SPAN
        normed = (raw - lo) / torch.where(degenerate, torch.ones_like(span), span)
        maps.append(torch.where(degenerate, torch.full_like(normed, 0.5), normed))
    out = torch.stack(maps).mean(dim=0).reshape(k, 1, h, w)
    return PseudoMask(out, query_high.stride)


def support_mid_summary(support_mid: FeatureMap, support_masks: torch.Tensor,
                        mode: str = "spatial") -> torch.Tensor:
    """Condense per-shot mid-level masked-support features to one [C,h,w] map.

    ``spatial`` keeps the feature grid and averages over shots; ``pooled``
    replaces each shot by its masked average vector broadcast over space.
    """
    s = support_mid.data
    if mode == "spatial":
        return s.mean(dim=0)
    if mode != "pooled":
        raise ConfigurationError(f"unknown support_mid_mode {mode!r}")
    grid = mask_to_grid(support_masks, support_mid.stride)
    vecs = []
    for i in range(s.shape[0]):
        fg = grid[i]
        count = fg.sum()
        if int(count) == 0:
            warnings.warn("support foreground empty at mid resolution; pooled summary is zero")
            vecs.append(torch.zeros(s.shape[1], dtype=s.dtype, device=s.device))
            continue
        vecs.append((s[i] * fg.to(s.dtype)).sum(dim=(1, 2)) / count.to(s.dtype))
    pooled = torch.stack(vecs).mean(dim=0)
    return pooled[:, None, None].expand(-1, s.shape[2], s.shape[3])


class FusionModule(nn.Module):
    """Concat [upsampled prior, query mid, support mid] and project to C channels."""

    def __init__(self, channels: int):
        super().__init__()
        self.channels = channels
        self.proj = nn.Conv2d(1 + 2 * channels, channels, 1)

    def forward(self, pseudo: PseudoMask, query_mid: FeatureMap,
                support_summary: torch.Tensor) -> torch.Tensor:
        q = query_mid.data
        up = F.interpolate(pseudo.data, size=q.shape[-2:], mode="bilinear",
                           align_corners=False)
        sup = support_summary.unsqueeze(0).expand(q.shape[0], -1, -1, -1)
        if sup.shape[-2:] != q.shape[-2:]:
            raise ShapeError(
                f"support summary {tuple(sup.shape[-2:])} does not align with "
                f"query mid features {tuple(q.shape[-2:])}")
        return self.proj(torch.cat([up, q, sup], dim=1))


class LightNeck(nn.Module):
    """Two-scale exchange: a second stride level, mutual add, merge back."""

    def __init__(self, channels: int, norm_groups: int = 8):
        super().__init__()
        g = min(norm_groups, channels)
        self.pre = nn.Sequential(nn.Conv2d(channels, channels, 3, padding=1),
                                 nn.GroupNorm(g, channels), nn.ReLU(inplace=True))
        self.down = nn.Sequential(nn.Conv2d(channels, channels, 3, stride=2, padding=1),
                                  nn.GroupNorm(g, channels), nn.ReLU(inplace=True))
        self.down_again = nn.Conv2d(channels, channels, 3, stride=2, padding=1)
        self.post = nn.Sequential(nn.Conv2d(channels, channels, 3, padding=1),
                                  nn.GroupNorm(g, channels), nn.ReLU(inplace=True))

    def forward(self, f: torch.Tensor) -> torch.Tensor:
        a = self.pre(f)
        b = self.down(f)
        up = lambda t: F.interpolate(t, size=f.shape[-2:], mode="bilinear",
                                     align_corners=False)
        a = a + up(b)
        b = b + self.down_again(a)
        return self.post(a + up(b))


def build_neck(variant: str, channels: int, norm_groups: int = 8) -> nn.Module:
    if variant == "light":
        return LightNeck(channels, norm_groups)
    if variant == "identity":
        return nn.Identity()
    raise ConfigurationError(f"unknown neck variant {variant!r}")


class SegHead(nn.Module):
    """3x3 convolution, ReLU, then a 1x1 convolution onto 2 class logits."""

    def __init__(self, channels: int):
        super().__init__()
        self.conv = nn.Conv2d(channels, channels, 3, padding=1)
        self.classify = nn.Conv2d(channels, 2, 1)

    def forward(self, f: torch.Tensor) -> torch.Tensor:
        return self.classify(F.relu(self.conv(f)))


def upsample_logits(logits: torch.Tensor, size) -> torch.Tensor:
    return F.interpolate(logits, size=tuple(size), mode="bilinear", align_corners=False)


def prediction_from_logits(logits: torch.Tensor, size) -> SegPrediction:
    return SegPrediction(F.softmax(upsample_logits(logits, size), dim=1))


class FewShotSegNet(nn.Module):
    """Support-conditioned query segmenter; see the module docstring."""

    def __init__(self, arch: ArchConfig = ArchConfig()):
        super().__init__()
        self.arch = arch
        self.backbone = Backbone(arch.backbone_config())
        channels = self.backbone.cfg.mid_channels
        self.fusion = FusionModule(channels)
        self.neck = build_neck(arch.neck, channels, arch.norm_groups)
        self.head = SegHead(channels)
        self.temporal_unit = None

    @property
    def mid_channels(self) -> int:
        return self.backbone.cfg.mid_channels

    def freeze_head(self) -> None:
        for p in self.head.parameters():
            p.requires_grad_(False)

    def _apply_temporal(self, necked: torch.Tensor, framewise: bool) -> torch.Tensor:
        if self.temporal_unit is None:
            return necked
        if framewise:
            return torch.cat([self.temporal_unit(necked[t:t + 1])
                              for t in range(necked.shape[0])])
        return self.temporal_unit(necked)

    def episode_trace(self, support_images: torch.Tensor, support_masks: torch.Tensor,
                      query_images: torch.Tensor, framewise: bool = False) -> EpisodeTrace:
        """Full forward pass keeping intermediate tensors.

        ``support_images`` [N,C,H,W], ``support_masks`` [N,H,W] binary,
        ``query_images`` [K,C,H,W]. When a temporal unit is attached the K
        queries are treated as consecutive frames unless ``framewise`` forces
        independent per-frame application.
        """
        if support_images.shape[-2:] != query_images.shape[-2:]:
            raise ShapeError("support and query spatial sizes differ")
        s_mid, s_high = extract_masked_support(self.backbone, support_images, support_masks)
        q_mid, q_high = self.backbone.extract(query_images)
        pseudo = pseudo_mask(q_high, s_high, support_masks)
        summary = support_mid_summary(s_mid, support_masks, self.arch.support_mid_mode)
        fused = self.fusion(pseudo, q_mid, summary)
        necked = self.neck(fused)
        attended = self._apply_temporal(necked, framewise)
        logits = self.head(attended)
        prediction = prediction_from_logits(logits, query_images.shape[-2:])
        return EpisodeTrace(pseudo, fused, necked, attended, logits, prediction)

    def feature_tap(self, trace: EpisodeTrace, student: bool) -> torch.Tensor:
        """The tensor compared by the feature-consistency loss.

        ``neck`` taps the tensor feeding the head (for a student that is the
        temporal-unit output, for a plain model the neck output); ``fusion``
        taps the pre-neck fusion output on both sides.
        """
        if self.arch.feature_tap == "fusion":
            return trace.fused
        return trace.attended if student else trace.necked

    def forward_episode(self, episode: Episode) -> SegPrediction:
        """Segment an episode's queries; gradients are not tracked."""
        support_images, support_masks, query_images, _ = episode_tensors(episode)
        with torch.no_grad():
            trace = self.episode_trace(support_images, support_masks, query_images,
                                       framewise=True)
        return trace.prediction

    forward = episode_trace


def episode_tensors(episode: Episode):
    """Convert an Episode's numpy payload to torch tensors.

    Returns (support_images, support_masks, query_images, query_masks) where
    query_masks is None when any query lacks a mask.
    """
    support_images = torch.from_numpy(np.stack([s.image for s in episode.support]))
    support_masks = torch.from_numpy(np.stack([s.mask for s in episode.support]))
    query_images = torch.from_numpy(np.stack([q.image for q in episode.query]))
    if any(q.mask is None for q in episode.query):
        query_masks = None
    else:
        query_masks = torch.from_numpy(
            np.stack([q.mask for q in episode.query]).astype(np.int64))
    return support_images, support_masks, query_images, query_masks


def clip_support_tensors(clip: VideoClip):
    """Support images and masks from a clip's annotated prefix."""
    support = clip.support_images()
    images = torch.from_numpy(np.stack([s.image for s in support]))
    masks = torch.from_numpy(np.stack([s.mask for s in support]))
    return images, masks


def build_model(arch_dict: dict, with_temporal_unit: bool = False) -> FewShotSegNet:
    """Construct a model from a serialized architecture description."""
    net = FewShotSegNet(ArchConfig.from_dict(arch_dict))
    if with_temporal_unit:
        from .relearn import TemporalAttentionUnit
        net.temporal_unit = TemporalAttentionUnit(net.mid_channels)
    return net


def infer_video_naive(net: FewShotSegNet, clip: VideoClip) -> SegPrediction:
    """Segment every query frame independently, conditioned on the prefix.

    Frames are processed as a batch but never exchange information, so the
    result is invariant to frame order and identical frames produce identical
    predictions.
    """
    support_images, support_masks = clip_support_tensors(clip)
    queries = torch.from_numpy(clip.query_frames())
    with torch.no_grad():
        trace = net.episode_trace(support_images, support_masks, queries, framewise=True)
    return trace.prediction
