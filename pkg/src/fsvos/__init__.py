"""Few-shot video object segmentation with temporal-consistency relearning.

Phase 1 trains an episodic few-shot image segmenter (cosine prior mask plus
cross-resolution feature fusion). Phase 2 adapts it to a video without query
labels by enforcing temporal feature coherence and consistency with a frozen
teacher copy at the feature and prediction levels.
"""

from .data import (
    SHAPE_CLASSES,
    Episode,
    LabeledImage,
    SynthConfig,
    VideoClip,
    clip_to_episode,
    generate_image_dataset,
    generate_video_clip,
    sample_episode,
)
from .config import Phase1Config, Phase2Config, RunConfig, load_config
from .estimators import ConsistencyRelearner, FewShotSegmenter
from .losses import LossWeights, loss_feature, loss_prediction, loss_temporal, total_loss
from .metrics import SegScore, ScoreSummary, aggregate, dice, fb_iou
from .model import ArchConfig, FewShotSegNet, infer_video_naive, pseudo_mask
from .relearn import (
    TemporalAttentionUnit,
    build_teacher_student,
    infer_video_relearned,
    relearn,
)
from .train import train_phase1

__version__ = "0.1.0"

__all__ = [
    "SHAPE_CLASSES",
    "Episode",
    "LabeledImage",
    "SynthConfig",
    "VideoClip",
    "clip_to_episode",
    "generate_image_dataset",
    "generate_video_clip",
    "sample_episode",
    "Phase1Config",
    "Phase2Config",
    "RunConfig",
    "load_config",
    "ConsistencyRelearner",
    "FewShotSegmenter",
    "LossWeights",
    "loss_feature",
    "loss_prediction",
    "loss_temporal",
    "total_loss",
    "SegScore",
    "ScoreSummary",
    "aggregate",
    "dice",
    "fb_iou",
    "ArchConfig",
    "FewShotSegNet",
    "infer_video_naive",
    "pseudo_mask",
    "TemporalAttentionUnit",
    "build_teacher_student",
    "infer_video_relearned",
    "relearn",
    "train_phase1",
    "__version__",
]
