"""Acceptance gate: eight end-to-end criteria, one pass/fail line each.

Each test prints exactly one ``[PASS]``/``[FAIL]`` verdict line (visible with
``pytest -s``; under default capture the per-test PASSED/FAILED line of
``pytest -v`` carries the same information). Thresholds marked "pinned" were
calibrated once on the reference run and bound with the stated margin.
"""

import math
import time

import numpy as np
import pytest
import torch
from conftest import gradient_relative_error

from fsvos.backbone import FeatureMap
from fsvos.checkpoint import load_model, save_model, state_bytes
from fsvos.config import Phase1Config, Phase2Config
from fsvos.data import (SynthConfig, generate_image_dataset,
                        generate_video_clip, sample_episode)
from fsvos.losses import (LossWeights, loss_feature, loss_prediction,
                          loss_temporal, segmentation_loss, total_loss)
from fsvos.metrics import aggregate, dice, fb_iou
from fsvos.model import ArchConfig, FewShotSegNet, build_model, pseudo_mask
from fsvos.relearn import build_teacher_student, relearn
from fsvos.seeding import substream_rng
from fsvos.train import train_phase1

F64 = dict(dtype=torch.float64)


def _verdict(n: int, label: str, failures: list) -> None:
    status = "PASS" if not failures else "FAIL"
    print(f"[{status}] criterion {n}: {label}")
    assert not failures, f"criterion {n} ({label}): " + "; ".join(failures)


def _check(failures: list, ok: bool, message: str) -> None:
    if not ok:
        failures.append(message)


@pytest.fixture(scope="session")
def trained():
    """Reference phase-1 run shared by criteria 4-7: 2K iterations, seed 0."""
    cfg = SynthConfig(seed=0)
    train_ds = generate_image_dataset(cfg, 50)
    novel_ds = generate_image_dataset(cfg, 60, classes=cfg.novel_classes)
    t0 = time.time()
    result = train_phase1(train_ds, Phase1Config(iterations=2000), seed=0)
    return result.model, time.time() - t0, novel_ds


def test_criterion_1_loss_exactness(rng):
    t0 = time.time()
    failures = []

    r = 1.0 / math.sqrt(2.0)
    three = torch.tensor([[1.0, 0.0], [r, r], [0.0, 1.0]], **F64)
    _check(failures, abs(loss_temporal(three).item() - (1.0 - r)) < 1e-9,
           "three-frame temporal oracle off")
    same = torch.randn(1, 3, 2, 2, **F64).expand(4, -1, -1, -1)
    _check(failures, abs(loss_temporal(same).item()) < 1e-9,
           "identical frames not zero")
    a = torch.from_numpy(rng.normal(size=(1, 2, 3, 3)))
    _check(failures, abs(loss_temporal(torch.cat([a, -a])).item() - 2.0) < 1e-9,
           "antipodal pair not 2")

    z = torch.from_numpy(rng.normal(size=(2, 2, 2, 2)))
    _check(failures, abs(loss_feature(z + 0.3, z).item() - 0.09) < 1e-9,
           "constant-offset feature loss off")
    _check(failures, loss_feature(z, z.clone()).item() == 0.0,
           "identical features not exactly zero")

    idx = torch.arange(4)
    board = ((idx[None, :, None] + idx[None, None, :]) % 2).to(torch.float64)
    _check(failures,
           abs(loss_prediction(board, torch.full_like(board, 0.5)).item() - 0.25) < 1e-9,
           "checkerboard prediction loss off")
    ones, zeros = torch.ones(1, 4, 4, **F64), torch.zeros(1, 4, 4, **F64)
    _check(failures, abs(loss_prediction(ones, zeros).item() - 1.0) < 1e-9,
           "extreme prediction loss off")

    parts = tuple(torch.tensor(v, **F64) for v in (0.2, 0.1, 0.3))
    _check(failures,
           abs(total_loss(*parts, LossWeights(1, 1, 1)).item() - 0.6) < 1e-9,
           "total-loss example off")

    for i in range(1000):
        t = 2 + i % 5
        f = torch.from_numpy(rng.normal(size=(t, 3, 2, 2)))
        v = loss_temporal(f).item()
        if not (0.0 <= v <= 2.0):
            failures.append(f"temporal loss {v} outside [0,2]")
            break

    for _ in range(50):
        s = torch.from_numpy(rng.normal(size=(2, 3, 3)))
        t = torch.from_numpy(rng.normal(size=(2, 3, 3)))
        if loss_feature(s, t).item() < 0 or loss_prediction(s, t).item() < 0:
            failures.append("negative squared-error loss")
            break
        perturbed = s.clone()
        perturbed[0, 0, 0] += 1e-8
        if loss_feature(s, perturbed).item() == 0.0:
            failures.append("zero loss for non-identical inputs")
            break
    _check(failures, loss_feature(z, z.clone()).item() == 0.0
           and loss_prediction(z[:, 0], z[:, 0].clone()).item() == 0.0,
           "equality case not exactly zero")

    elapsed = time.time() - t0
    _check(failures, elapsed < 5.0, f"runtime {elapsed:.1f}s exceeds 5s")
    _verdict(1, "consistency losses exact on hand-computed examples", failures)


def test_criterion_2_gradient_checks(rng):
    t0 = time.time()
    failures = []
    student = torch.from_numpy(rng.normal(size=(3, 4, 2, 2)))
    teacher = torch.from_numpy(rng.normal(size=(3, 4, 2, 2)) + 0.5)
    weights = LossWeights(1.0, 0.5, 2.0)

    cases = {
        "temporal": loss_temporal,
        "feature": lambda s: loss_feature(s, teacher),
        "prediction": lambda s: loss_prediction(torch.sigmoid(s[:, 0]),
                                                torch.sigmoid(teacher[:, 0])),
        "total": lambda s: total_loss(
            loss_temporal(s), loss_feature(s, teacher),
            loss_prediction(torch.sigmoid(s[:, 0]), torch.sigmoid(teacher[:, 0])),
            weights),
    }
    for name, fn in cases.items():
        err = gradient_relative_error(fn, student)
        _check(failures, err < 1e-4, f"{name} gradient rel. error {err:.2e}")

    logits = torch.from_numpy(rng.normal(size=(3, 2, 4, 4)))
    target = torch.from_numpy((rng.random((3, 4, 4)) < 0.5).astype("int64"))
    err = gradient_relative_error(
        lambda lg: segmentation_loss(lg, target, dice_weight=0.5), logits)
    _check(failures, err < 1e-4, f"cross-entropy gradient rel. error {err:.2e}")

    elapsed = time.time() - t0
    _check(failures, elapsed < 30.0, f"runtime {elapsed:.1f}s exceeds 30s")
    _verdict(2, "analytic gradients match finite differences", failures)


def _brute_force_pseudo(q: np.ndarray, s: np.ndarray, masks: np.ndarray) -> np.ndarray:
    """Loop-based reference for the cosine prior (float64, stride-1 masks)."""
    k, c, h, w = q.shape
    out = np.zeros((k, h, w))
    per_shot = []
    for n in range(s.shape[0]):
        fg = [(i, j) for i in range(s.shape[2]) for j in range(s.shape[3])
              if masks[n, i, j] > 0]
        shot = np.zeros((k, h, w))
        for ki in range(k):
            raw = np.zeros((h, w))
            for i in range(h):
                for j in range(w):
                    qv = q[ki, :, i, j]
                    best = -np.inf
                    for (si, sj) in fg:
                        sv = s[n, :, si, sj]
                        denom = max(np.linalg.norm(qv), 1e-7) * \
                            max(np.linalg.norm(sv), 1e-7)
                        best = max(best, float(qv @ sv) / denom)
                    raw[i, j] = best
            lo, hi = raw.min(), raw.max()
            shot[ki] = 0.5 if hi - lo < 1e-6 else (raw - lo) / (hi - lo)
        per_shot.append(shot)
    out = np.mean(per_shot, axis=0)
    return out[:, None]


def test_criterion_3_pseudo_mask_contract(rng):
    failures = []

    q = torch.tensor([[[[1.0, 0.0], [1.0, -1.0]],
                       [[0.0, 1.0], [1.0, 0.0]]]], **F64)
    s = torch.zeros(1, 2, 2, 2, **F64)
    s[0, 0, 0, 0] = 3.0
    masks = torch.zeros(1, 2, 2, **F64)
    masks[0, 0, 0] = 1.0
    got = pseudo_mask(FeatureMap(q, 1), FeatureMap(s, 1), masks).data.numpy()
    oracle = _brute_force_pseudo(q.numpy(), s.numpy(), masks.numpy())
    r = 1.0 / math.sqrt(2.0)
    hand = np.array([[[[1.0, 0.5], [(r + 1) / 2, 0.0]]]])
    _check(failures, np.abs(got - oracle).max() < 1e-9,
           "2x2 example disagrees with brute-force oracle")
    _check(failures, np.abs(got - hand).max() < 1e-9,
           "2x2 example disagrees with hand values")

    for trial in range(5):
        k, c, h, w, n = 1 + trial % 2, 3 + trial, 3, 4, 1 + trial % 2
        q = torch.from_numpy(rng.normal(size=(k, c, h, w)))
        s = torch.from_numpy(rng.normal(size=(n, c, h, w)))
        masks = torch.from_numpy(
            (rng.random((n, h, w)) < 0.4).astype(np.float64))
        masks[:, 0, 0] = 1.0
        got = pseudo_mask(FeatureMap(q, 1), FeatureMap(s, 1), masks).data.numpy()
        oracle = _brute_force_pseudo(q.numpy(), s.numpy(), masks.numpy())
        _check(failures, np.abs(got - oracle).max() < 1e-9,
               f"random case {trial} disagrees with brute-force oracle")

    worst_scale = 0.0
    for i in range(1000):
        k = 1 + i % 2
        c = 4 + i % 8
        h = w = 3 + i % 4
        q = torch.from_numpy(rng.normal(size=(k, c, h, w)))
        s = torch.from_numpy(rng.normal(size=(1, c, h, w)))
        masks = torch.from_numpy((rng.random((1, h, w)) < 0.3).astype(np.float64))
        masks[0, 0, 0] = 1.0
        out = pseudo_mask(FeatureMap(q, 1), FeatureMap(s, 1), masks).data
        if out.min() < 0.0 or out.max() > 1.0:
            failures.append(f"pair {i}: output outside [0,1]")
            break
        for img in out[:, 0]:
            degenerate = bool(torch.allclose(img, torch.full_like(img, 0.5)))
            if not degenerate and (img.min().abs() > 1e-9
                                   or (img.max() - 1).abs() > 1e-9):
                failures.append(f"pair {i}: extremes not pinned to 0/1")
                break
        alpha, beta = float(rng.uniform(0.1, 10)), float(rng.uniform(0.1, 10))
        rescaled = pseudo_mask(FeatureMap(q * alpha, 1), FeatureMap(s * beta, 1),
                               masks).data
        worst_scale = max(worst_scale, float((rescaled - out).abs().max()))
    _check(failures, worst_scale < 1e-6,
           f"scale invariance violated by {worst_scale:.2e}")
    _verdict(3, "pseudo-mask range, extremes, scaling, brute-force oracle", failures)


def test_criterion_4_freeze_and_teacher_contracts(trained):
    failures = []
    model, _, _ = trained
    clip = generate_video_clip(SynthConfig(seed=0, frames_per_clip=16,
                                           annotated_prefix=1), "ring")
    torch.manual_seed(0)
    pair = build_teacher_student(model)
    teacher_before = state_bytes(pair.teacher)
    head_before = state_bytes(pair.student.head)
    body_before = state_bytes(pair.student)

    # 15 query frames -> 4 windows per epoch; run exactly 200 update steps.
    # relearn itself raises FreezeViolation if the teacher ever accumulates
    # a gradient, so "teacher gradients identically zero throughout" is
    # enforced at every iteration of this run.
    cfg = Phase2Config(epochs=60, max_iterations=200, early_stop_total=0.0,
                       lr=1e-4)
    student = relearn(pair, clip, cfg=cfg)

    _check(failures, state_bytes(pair.teacher) == teacher_before,
           "teacher parameters drifted")
    _check(failures, state_bytes(student.head) == head_before,
           "student head drifted")
    _check(failures, state_bytes(student) != body_before,
           "student did not update at all (run inert)")
    _check(failures,
           all(p.grad is None for p in pair.teacher.parameters()),
           "teacher accumulated gradients")
    _verdict(4, "200-iteration adaptation leaves teacher and head byte-identical",
             failures)


def test_criterion_5_identity_at_init(trained, rng):
    failures = []
    model, _, _ = trained
    clip = generate_video_clip(SynthConfig(seed=1), "ring")
    support = torch.from_numpy(clip.frames[:1])
    support_mask = torch.from_numpy(
        np.stack([clip.annotation(0)]).astype(np.float32))
    frames = torch.from_numpy(rng.random((20, 1, 64, 64)).astype(np.float32))

    pair = build_teacher_student(model)
    with torch.no_grad():
        teacher_pred = pair.teacher.episode_trace(
            support, support_mask, frames, framewise=True).prediction
        student_pred = pair.student.episode_trace(
            support, support_mask, frames).prediction
    diff = (student_pred.probs - teacher_pred.probs).abs().max().item()
    _check(failures, diff < 1e-5,
           f"max per-pixel disagreement {diff:.2e} before first update")
    _verdict(5, "zero-initialized temporal gate preserves predictions", failures)


def test_criterion_6_phase1_end_to_end(trained):
    failures = []
    model, train_seconds, novel_ds = trained
    t0 = time.time()
    rng = substream_rng(0, "eval-episodes")
    scores = []
    for _ in range(100):
        ep = sample_episode(novel_ds, 1, 1, rng)
        preds = model.forward_episode(ep).masks_numpy()
        for q, pm in zip(ep.query, preds):
            scores.append(fb_iou(pm, q.mask))
    mean_dice = aggregate(scores).mean.dice
    elapsed = train_seconds + (time.time() - t0)

    _check(failures, mean_dice >= 0.75,
           f"novel-class one-shot Dice {mean_dice:.4f} < 0.75")
    # pinned: reference run scored 0.9870; bound with the 0.03 margin
    _check(failures, mean_dice >= 0.957,
           f"Dice {mean_dice:.4f} regressed below pinned 0.957")
    _check(failures, elapsed < 1200.0,
           f"train+eval took {elapsed:.0f}s, budget 1200s")
    _verdict(6, f"synthetic phase 1 reaches Dice {mean_dice:.4f} on novel class",
             failures)


def test_criterion_7_relearning_direction_of_effect(trained, tmp_path):
    from fsvos.ablation import (ABLATION_ROW_NAMES, format_ablation_table,
                                run_ablation, write_ablation_csv)
    failures = []
    model, _, _ = trained
    t0 = time.time()
    data_cfg = SynthConfig(seed=0, frames_per_clip=16, annotated_prefix=1)
    result = run_ablation(model, data_cfg, Phase2Config(),
                          seeds=(0, 1, 2, 3, 4), clips_per_seed=5, slack=0.02)
    elapsed = time.time() - t0
    write_ablation_csv(tmp_path / "ablation.csv", result)

    _check(failures, tuple(r.name for r in result.rows) == ABLATION_ROW_NAMES,
           "table is not the five-row on/off matrix")
    full = result.row("full")
    base = result.row("baseline")
    _check(failures, result.full_vs_baseline_ok,
           f"full {full.dice:.4f} < baseline {base.dice:.4f} - 0.02")
    for name in ("no_temporal", "no_feature", "no_prediction"):
        row = result.row(name)
        _check(failures, full.dice >= row.dice - 0.02,
               f"full {full.dice:.4f} < {name} {row.dice:.4f} - 0.02")
    # qualitative collapse check: the lambda3=0 row must carry the flag
    # exactly when it scores below half of baseline (not a hard bound)
    no_p = result.row("no_prediction")
    _check(failures, no_p.flagged == (no_p.dice < 0.5 * base.dice),
           "collapse flag inconsistent with its definition")
    _check(failures, result.collapse_flagged == no_p.flagged,
           "summary collapse flag disagrees with the row flag")
    _check(failures, elapsed < 1800.0,
           f"ablation took {elapsed:.0f}s, budget 1800s")
    if not failures:
        print(format_ablation_table(result))
    _verdict(7, "adaptation never degrades against baseline or ablations", failures)


def test_criterion_8_metrics_and_checkpoints(rng, tmp_path):
    failures = []

    pred = np.array([[1, 0, 0, 0]], dtype=np.uint8)
    gt = np.array([[1, 1, 0, 0]], dtype=np.uint8)
    s = fb_iou(pred, gt)
    _check(failures, s.fg_iou == 0.5, "hand-counted fg_iou wrong")
    _check(failures, abs(s.bg_iou - 2 / 3) < 1e-12, "hand-counted bg_iou wrong")
    _check(failures, abs(s.fb_iou - 7 / 12) < 1e-12, "hand-counted fb_iou wrong")

    for _ in range(300):
        shape = (int(rng.integers(1, 6)), int(rng.integers(1, 6)))
        a = (rng.random(shape) < 0.5).astype(np.uint8)
        b = (rng.random(shape) < 0.5).astype(np.uint8)
        if dice(a, b) != dice(b, a):
            failures.append("dice not symmetric")
            break
        sc = fb_iou(a, b)
        if np.logical_or(a, b).any():
            relation = 2.0 * sc.fg_iou / (1.0 + sc.fg_iou)
            if abs(sc.dice - relation) > 1e-12:
                failures.append("dice != 2*iou/(1+iou)")
                break

    torch.manual_seed(0)
    plain = FewShotSegNet(ArchConfig())
    adapted = build_teacher_student(plain).student
    for name, net in (("plain", plain), ("adapted", adapted)):
        save_model(tmp_path / name, net)
        restored, _ = load_model(tmp_path / name)
        _check(failures, state_bytes(restored) == state_bytes(net),
               f"{name} checkpoint round trip not bit-exact")
    restored, ckpt = load_model(tmp_path / "adapted")
    _check(failures, ckpt.has_temporal_unit and restored.temporal_unit is not None,
           "temporal unit lost in round trip")
    _verdict(8, "metric properties hold and checkpoints round-trip bit-exact",
             failures)
