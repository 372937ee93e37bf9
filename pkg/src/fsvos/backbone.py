"""Small multi-stage CNN feature extractor with mid-level and high-level taps.

The extractor plays the role usually filled by a pre-trained backbone: a stack
of strided convolutional stages from which two feature maps are tapped, a
mid-level one that keeps finer spatial detail and a high-level one used for
similarity-based localization. Stages can be frozen individually so training
regimes that keep early stages fixed are expressible.
"""

from dataclasses import dataclass

import torch
from torch import nn

from .errors import ConfigurationError, ShapeError
from .validation import check_binary_tensor

__all__ = ["BackboneConfig", "FeatureMap", "Backbone", "extract_masked_support"]


@dataclass(frozen=True)
class BackboneConfig:
    """Architecture of the feature extractor.

    ``mid_tap`` and ``high_tap`` are 1-based stage indices; the tap output is
    the feature map produced at the end of that stage.
    """

    in_channels: int = 1
    channels: tuple = (16, 32, 64, 64)
    stage_strides: tuple = (2, 2, 2, 1)
    mid_tap: int = 2
    high_tap: int = 4
    norm_groups: int = 8

    def __post_init__(self):
        if len(self.channels) != len(self.stage_strides):
            raise ConfigurationError(
                f"channels ({len(self.channels)}) and stage_strides "
                f"({len(self.stage_strides)}) must have equal length")
        n = len(self.channels)
        for tap, name in ((self.mid_tap, "mid_tap"), (self.high_tap, "high_tap")):
            if not 1 <= tap <= n:
                raise ConfigurationError(f"{name}={tap} outside stage range 1..{n}")
        if self.mid_tap >= self.high_tap:
            raise ConfigurationError(
                f"mid_tap ({self.mid_tap}) must come before high_tap ({self.high_tap})")
        if self.in_channels < 1:
            raise ConfigurationError("in_channels must be >= 1")
        if self.norm_groups < 1:
            raise ConfigurationError("norm_groups must be >= 1")
        for width in self.channels:
            if width % self._groups_for(width) != 0:
                raise ConfigurationError(
                    f"stage width {width} not divisible by norm group count")
        for s in self.stage_strides:
            if s < 1:
                raise ConfigurationError("stage strides must be >= 1")

    def _groups_for(self, width: int) -> int:
        return min(self.norm_groups, width)

    def stride_at(self, stage: int) -> int:
        """Cumulative downsampling factor after 1-based ``stage``."""
        out = 1
        for s in self.stage_strides[:stage]:
            out *= s
        return out

    @property
    def mid_stride(self) -> int:
        return self.stride_at(self.mid_tap)

    @property
    def high_stride(self) -> int:
        return self.stride_at(self.high_tap)

    @property
    def total_stride(self) -> int:
        return self.stride_at(len(self.channels))

    @property
    def mid_channels(self) -> int:
        return self.channels[self.mid_tap - 1]

    @property
    def high_channels(self) -> int:
        return self.channels[self.high_tap - 1]


@dataclass
class FeatureMap:
    """A [B,C,H,W] feature tensor together with its stride relative to the input."""

    data: torch.Tensor
    stride: int

    def __post_init__(self):
        if self.data.dim() != 4:
            raise ShapeError(f"feature map must be 4-D, got shape {tuple(self.data.shape)}")


def _stage(in_ch: int, out_ch: int, stride: int, groups: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(in_ch, out_ch, 3, stride=stride, padding=1),
        nn.GroupNorm(groups, out_ch),
        nn.ReLU(inplace=True),
        nn.Conv2d(out_ch, out_ch, 3, padding=1),
        nn.GroupNorm(groups, out_ch),
        nn.ReLU(inplace=True),
    )


class Backbone(nn.Module):
    """Stacked conv stages exposing a mid-level and a high-level tap."""

    def __init__(self, cfg: BackboneConfig = BackboneConfig()):
        super().__init__()
        self.cfg = cfg
        stages = []
        in_ch = cfg.in_channels
        for width, stride in zip(cfg.channels, cfg.stage_strides):
            stages.append(_stage(in_ch, width, stride, cfg._groups_for(width)))
            in_ch = width
        self.stages = nn.ModuleList(stages)

    def extract(self, images: torch.Tensor):
        """Run the stages and return ``(mid, high)`` feature maps.

        ``images`` is a [B,C,H,W] batch whose spatial dims must be divisible
        by the total downsampling factor.
        """
        if images.dim() != 4:
            raise ShapeError(f"expected [B,C,H,W] input, got shape {tuple(images.shape)}")
        if images.shape[1] != self.cfg.in_channels:
            raise ShapeError(
                f"expected {self.cfg.in_channels} input channels, got {images.shape[1]}")
        h, w = images.shape[2], images.shape[3]
        total = self.cfg.total_stride
        if h % total != 0 or w % total != 0:
            raise ShapeError(
                f"input size {h}x{w} not divisible by total stride {total}")
        x = images
        mid = high = None
        for i, stage in enumerate(self.stages, start=1):
            x = stage(x)
            if i == self.cfg.mid_tap:
                mid = FeatureMap(x, self.cfg.stride_at(i))
            if i == self.cfg.high_tap:
                high = FeatureMap(x, self.cfg.stride_at(i))
        return mid, high

    forward = extract

    def freeze_stages(self, stages) -> None:
        """Disable gradients for the given 1-based stage indices."""
        n = len(self.stages)
        for idx in stages:
            if not 1 <= idx <= n:
                raise ConfigurationError(f"cannot freeze stage {idx}; have 1..{n}")
            for p in self.stages[idx - 1].parameters():
                p.requires_grad_(False)


def extract_masked_support(backbone: Backbone, images: torch.Tensor,
                           masks: torch.Tensor):
    """Extract features of support images with background zeroed out.

    ``images`` is [N,C,H,W], ``masks`` is a binary [N,H,W] tensor; the mask is
    broadcast over channels before extraction, so the result equals
    ``extract(images * masks)``.
    """
    check_binary_tensor(masks, name="support mask")
    if masks.dim() != 3 or masks.shape[0] != images.shape[0] \
            or masks.shape[1:] != images.shape[2:]:
        raise ShapeError(
            f"mask shape {tuple(masks.shape)} does not match images "
            f"{tuple(images.shape)}")
    masked = images * masks.to(images.dtype).unsqueeze(1)
    return backbone.extract(masked)
