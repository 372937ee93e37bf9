"""scikit-learn style wrappers around the two training phases.

``FewShotSegmenter`` fits the episodic image segmenter (on a provided labeled
image list or on freshly synthesized data) and predicts per-query masks for
episodes. ``ConsistencyRelearner`` is a meta-estimator that adapts a fitted
segmenter to one video clip and predicts per-frame masks. Both follow the
usual conventions: constructor arguments are stored untouched, all learned
state lives in trailing-underscore attributes, and ``get_params`` /
``set_params`` / ``clone`` work out of the box.
"""

import dataclasses

import numpy as np
import torch
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .config import Phase1Config, Phase2Config
from .data import Episode, SynthConfig, VideoClip, generate_image_dataset
from .errors import ConfigurationError, ValidationError
from .metrics import aggregate, fb_iou
from .model import ArchConfig, FewShotSegNet
from .relearn import build_teacher_student, infer_video_relearned, relearn
from .seeding import substream_seed
from .train import train_phase1

__all__ = ["FewShotSegmenter", "ConsistencyRelearner"]


class FewShotSegmenter(BaseEstimator):
    """Episodic few-shot image segmenter with a fit/predict interface.

    ``fit(X)`` trains on a list of labeled images (pass ``X=None`` to train
    on synthetic data generated from the constructor settings); ``predict``
    takes an episode (or list of episodes) and returns one binary [H,W] mask
    per query.
    """

    def __init__(self, seed=0, iterations=200, batch_episodes=8, adam_lr=1e-4,
                 sgd_lr=1e-5, adam_iterations=5000, n_shot=1, k_query=1,
                 dice_weight=0.0, neck="light", support_mid_mode="spatial",
                 image_size=(64, 64), channels=1, n_per_class=50):
        self.seed = seed
        self.iterations = iterations
        self.batch_episodes = batch_episodes
        self.adam_lr = adam_lr
        self.sgd_lr = sgd_lr
        self.adam_iterations = adam_iterations
        self.n_shot = n_shot
        self.k_query = k_query
        self.dice_weight = dice_weight
        self.neck = neck
        self.support_mid_mode = support_mid_mode
        self.image_size = image_size
        self.channels = channels
        self.n_per_class = n_per_class

    def _phase1_config(self) -> Phase1Config:
        return Phase1Config(
            iterations=self.iterations, batch_episodes=self.batch_episodes,
            adam_lr=self.adam_lr, sgd_lr=self.sgd_lr,
            adam_iterations=self.adam_iterations, n_shot=self.n_shot,
            k_query=self.k_query, dice_weight=self.dice_weight)

    def _arch_config(self) -> ArchConfig:
        return ArchConfig(in_channels=self.channels, neck=self.neck,
                          support_mid_mode=self.support_mid_mode)

    def fit(self, X=None, y=None):
        """Train on labeled images; X=None synthesizes a base-class dataset."""
        if X is None:
            synth = SynthConfig(image_size=tuple(self.image_size),
                                channels=self.channels, seed=self.seed)
            X = generate_image_dataset(synth, self.n_per_class)
        result = train_phase1(list(X), self._phase1_config(),
                              self._arch_config(), seed=self.seed)
        self.model_ = result.model
        self.losses_ = result.losses
        return self

    def _episodes(self, X):
        if isinstance(X, Episode):
            return [X]
        episodes = list(X)
        if not all(isinstance(e, Episode) for e in episodes):
            raise ValidationError("predict expects an Episode or a list of episodes")
        return episodes

    def predict(self, X):
        """Binary [H,W] masks for every query of the given episode(s)."""
        check_is_fitted(self, "model_")
        masks = []
        for ep in self._episodes(X):
            masks.extend(self.model_.forward_episode(ep).masks_numpy())
        return masks

    def predict_proba(self, X):
        """Foreground probability maps [H,W] for every query."""
        check_is_fitted(self, "model_")
        maps = []
        for ep in self._episodes(X):
            maps.extend(list(self.model_.forward_episode(ep).fg.cpu().numpy()))
        return maps

    def score(self, X, y=None):
        """Mean Dice over the queries of episodes that carry query masks."""
        check_is_fitted(self, "model_")
        scores = []
        for ep in self._episodes(X):
            preds = self.model_.forward_episode(ep).masks_numpy()
            for q, pm in zip(ep.query, preds):
                if q.mask is None:
                    raise ValidationError("score needs query masks")
                scores.append(fb_iou(pm, q.mask))
        return aggregate(scores).mean.dice


class ConsistencyRelearner(BaseEstimator):
    """Video adaptation of a fitted segmenter via self-supervised consistency.

    ``base`` is a fitted FewShotSegmenter (or a raw model). ``fit(X)`` adapts
    a fresh student to the clip ``X``; ``predict`` segments a clip's query
    frames with the adapted model (``X=None`` reuses the fitted clip).
    """

    def __init__(self, base=None, lr=1e-5, batch_size=4, epochs=20,
                 lambda1=1.0, lambda2=1.0, lambda3=1.0, window=4,
                 early_stop_total=1e-5, max_iterations=0, seed=0):
        self.base = base
        self.lr = lr
        self.batch_size = batch_size
        self.epochs = epochs
        self.lambda1 = lambda1
        self.lambda2 = lambda2
        self.lambda3 = lambda3
        self.window = window
        self.early_stop_total = early_stop_total
        self.max_iterations = max_iterations
        self.seed = seed

    def _phase2_config(self) -> Phase2Config:
        return Phase2Config(
            lr=self.lr, batch_size=self.batch_size, epochs=self.epochs,
            lambda1=self.lambda1, lambda2=self.lambda2, lambda3=self.lambda3,
            window=self.window, early_stop_total=self.early_stop_total,
            max_iterations=self.max_iterations)

    def _base_model(self) -> FewShotSegNet:
        if isinstance(self.base, FewShotSegNet):
            return self.base
        if isinstance(self.base, FewShotSegmenter):
            check_is_fitted(self.base, "model_")
            return self.base.model_
        raise ConfigurationError(
            "base must be a fitted FewShotSegmenter or a FewShotSegNet")

    def fit(self, X, y=None):
        """Adapt to one VideoClip's unlabeled query frames."""
        if not isinstance(X, VideoClip):
            raise ValidationError("fit expects a VideoClip")
        torch.manual_seed(substream_seed(self.seed, "init", "temporal"))
        pair = build_teacher_student(self._base_model())
        self.student_ = relearn(pair, X, cfg=self._phase2_config())
        self.teacher_ = pair.teacher
        self.clip_ = X
        return self

    def predict(self, X=None):
        """Binary [H,W] masks for each query frame of a clip."""
        check_is_fitted(self, "student_")
        clip = self.clip_ if X is None else X
        return infer_video_relearned(self.student_, clip, self.window).masks_numpy()

    def score(self, X=None, y=None):
        """Mean Dice of the adapted model against a clip's evaluation masks."""
        check_is_fitted(self, "student_")
        clip = self.clip_ if X is None else X
        preds = self.predict(clip)
        scores = [fb_iou(pm, gt) for pm, gt in zip(preds, clip.evaluation_masks())]
        return aggregate(scores).mean.dice
