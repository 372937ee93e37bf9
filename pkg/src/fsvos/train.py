"""Episodic image training for the few-shot segmenter.

Each iteration samples a batch of episodes from the base classes, runs the
support-conditioned pipeline on every episode (backbone calls are batched
across episodes for speed), and minimizes pixel-wise cross-entropy against
the query masks. The optimizer starts as Adam and hands over to SGD at a
configured iteration; per-iteration RNG substreams make interrupted runs
resumable with reproducible sampling.
"""

import csv
from dataclasses import dataclass, field

import numpy as np
import torch

from .backbone import FeatureMap, extract_masked_support
from .config import Phase1Config
from .data import sample_episode
from .errors import NumericError, ValidationError
from .losses import segmentation_loss
from .model import (ArchConfig, FewShotSegNet, episode_tensors, pseudo_mask,
                    support_mid_summary, upsample_logits)
from .seeding import substream_rng, substream_seed

__all__ = ["TrainResult", "train_phase1", "episodes_loss", "TRAIN_LOG_HEADER"]

TRAIN_LOG_HEADER = ("iteration", "loss", "lr", "optimizer")


@dataclass
class TrainResult:
    """Trained model plus the per-iteration loss history."""

    model: FewShotSegNet
    losses: list = field(default_factory=list)


def episodes_loss(net: FewShotSegNet, episodes, dice_weight: float = 0.0) -> torch.Tensor:
    """Supervised loss of a batch of episodes, with batched backbone calls."""
    sup_i, sup_m, qry_i, qry_m = [], [], [], []
    n_counts, k_counts = [], []
    for ep in episodes:
        si, sm, qi, qm = episode_tensors(ep)
        if qm is None:
            raise ValidationError("training episodes need query masks")
        sup_i.append(si), sup_m.append(sm), qry_i.append(qi), qry_m.append(qm)
        n_counts.append(si.shape[0])
        k_counts.append(qi.shape[0])

    s_all, m_all = torch.cat(sup_i), torch.cat(sup_m)
    q_all, t_all = torch.cat(qry_i), torch.cat(qry_m)
    s_mid, s_high = extract_masked_support(net.backbone, s_all, m_all)
    q_mid, q_high = net.backbone.extract(q_all)

    fused = []
    n0 = k0 = 0
    for n, k in zip(n_counts, k_counts):
        n1, k1 = n0 + n, k0 + k
        ep_q_mid = FeatureMap(q_mid.data[k0:k1], q_mid.stride)
        ep_q_high = FeatureMap(q_high.data[k0:k1], q_high.stride)
        ep_s_mid = FeatureMap(s_mid.data[n0:n1], s_mid.stride)
        ep_s_high = FeatureMap(s_high.data[n0:n1], s_high.stride)
        prior = pseudo_mask(ep_q_high, ep_s_high, m_all[n0:n1])
        summary = support_mid_summary(ep_s_mid, m_all[n0:n1], net.arch.support_mid_mode)
        fused.append(net.fusion(prior, ep_q_mid, summary))
        n0, k0 = n1, k1

    necked = net.neck(torch.cat(fused))
    logits = upsample_logits(net.head(necked), q_all.shape[-2:])
    return segmentation_loss(logits, t_all, dice_weight)


def _make_optimizer(net: FewShotSegNet, cfg: Phase1Config, iteration: int):
    params = [p for p in net.parameters() if p.requires_grad]
    if iteration < cfg.adam_iterations:
        return torch.optim.Adam(params, lr=cfg.adam_lr), "adam", cfg.adam_lr
    return torch.optim.SGD(params, lr=cfg.sgd_lr), "sgd", cfg.sgd_lr


def train_phase1(dataset, cfg: Phase1Config = Phase1Config(),
                 arch: ArchConfig = ArchConfig(), seed: int = 0,
                 model: FewShotSegNet = None, start_iteration: int = 0,
                 log_path=None, episode_source=None) -> TrainResult:
    """Train (or resume training) the segmenter on episodic image data.

    ``episode_source(iteration, rng)`` may replace the default sampler; every
    iteration draws its own named RNG substream so a resumed run sees exactly
    the sampling stream it would have seen uninterrupted.
    """
    if model is None:
        torch.manual_seed(substream_seed(seed, "init"))
        model = FewShotSegNet(arch)
    if episode_source is None:
        if dataset is None or len(dataset) == 0:
            raise ValidationError("training needs a dataset or an episode_source")

        def episode_source(iteration, rng):
            return [sample_episode(dataset, cfg.n_shot, cfg.k_query, rng)
                    for _ in range(cfg.batch_episodes)]

    log_file = open(log_path, "w", newline="") if log_path else None
    writer = None
    if log_file:
        writer = csv.writer(log_file)
        writer.writerow(TRAIN_LOG_HEADER)

    losses = []
    opt = kind = lr = None
    try:
        for it in range(start_iteration, cfg.iterations):
            if opt is None or (kind == "adam" and it >= cfg.adam_iterations):
                opt, kind, lr = _make_optimizer(model, cfg, it)
            rng = substream_rng(seed, "sampling", it)
            episodes = episode_source(it, rng)
            loss = episodes_loss(model, episodes, cfg.dice_weight)
            if not bool(torch.isfinite(loss)):
                raise NumericError(f"non-finite training loss at iteration {it}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            value = loss.item()
            losses.append(value)
            if writer:
                writer.writerow([it, f"{value:.10g}", f"{lr:.10g}", kind])
    finally:
        if log_file:
            log_file.close()
    return TrainResult(model=model, losses=losses)
