"""Segmentation metrics: hand-checked values plus property tests."""

import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from fsvos.errors import ValidationError
from fsvos.metrics import (SCORE_CSV_HEADER, SegScore, aggregate, dice, fb_iou,
                           write_scores_csv)


def masks(max_side=8):
    shapes = st.tuples(st.integers(1, max_side), st.integers(1, max_side))
    return shapes.flatmap(
        lambda s: hnp.arrays(np.uint8, s, elements=st.integers(0, 1)))


def mask_pairs(max_side=8):
    shapes = st.tuples(st.integers(1, max_side), st.integers(1, max_side))
    return shapes.flatmap(lambda s: st.tuples(
        hnp.arrays(np.uint8, s, elements=st.integers(0, 1)),
        hnp.arrays(np.uint8, s, elements=st.integers(0, 1))))


class TestHandValues:
    def test_identical_masks(self):
        m = np.array([[1, 0], [0, 1]], dtype=np.uint8)
        s = fb_iou(m, m)
        assert s.dice == s.fg_iou == s.bg_iou == s.fb_iou == 1.0

    def test_disjoint_full_cover(self):
        pred = np.array([[1, 1, 0, 0]], dtype=np.uint8)
        gt = np.array([[0, 0, 1, 1]], dtype=np.uint8)
        s = fb_iou(pred, gt)
        assert s.dice == 0.0 and s.fg_iou == 0.0 and s.bg_iou == 0.0

    def test_half_overlap_strip(self):
        # tp=1, fp=1, fn=0, tn=2
        pred = np.array([[1, 1, 0, 0]], dtype=np.uint8)
        gt = np.array([[1, 0, 0, 0]], dtype=np.uint8)
        s = fb_iou(pred, gt)
        assert s.fg_iou == pytest.approx(0.5, abs=1e-12)
        assert s.bg_iou == pytest.approx(2.0 / 3.0, abs=1e-12)
        assert s.fb_iou == pytest.approx(7.0 / 12.0, abs=1e-12)
        assert s.dice == pytest.approx(2.0 / 3.0, abs=1e-12)
        assert dice(pred, gt) == pytest.approx(s.dice, abs=1e-12)

    def test_both_empty(self):
        z = np.zeros((3, 3), dtype=np.uint8)
        s = fb_iou(z, z)
        assert s.dice == 1.0 and s.fg_iou == 1.0 and s.bg_iou == 1.0
        assert dice(z, z) == 1.0

    def test_both_full(self):
        o = np.ones((3, 3), dtype=np.uint8)
        s = fb_iou(o, o)
        assert s.dice == 1.0 and s.fg_iou == 1.0 and s.bg_iou == 1.0

    def test_one_empty_one_not(self):
        z = np.zeros((2, 2), dtype=np.uint8)
        o = np.ones((2, 2), dtype=np.uint8)
        assert dice(z, o) == 0.0
        assert fb_iou(z, o).fg_iou == 0.0
        assert fb_iou(z, o).bg_iou == 0.0


class TestValidation:
    def test_shape_mismatch(self):
        with pytest.raises(ValidationError):
            dice(np.zeros((2, 2), np.uint8), np.zeros((2, 3), np.uint8))

    def test_non_binary(self):
        bad = np.array([[0, 2]], dtype=np.uint8)
        with pytest.raises(ValidationError):
            dice(bad, np.zeros((1, 2), np.uint8))

    def test_aggregate_empty(self):
        with pytest.raises(ValidationError):
            aggregate([])


class TestProperties:
    @settings(max_examples=150, deadline=None)
    @given(mask_pairs())
    def test_symmetry(self, pair):
        a, b = pair
        assert dice(a, b) == pytest.approx(dice(b, a), abs=1e-12)
        sa, sb = fb_iou(a, b), fb_iou(b, a)
        assert sa.fg_iou == pytest.approx(sb.fg_iou, abs=1e-12)
        assert sa.bg_iou == pytest.approx(sb.bg_iou, abs=1e-12)

    @settings(max_examples=150, deadline=None)
    @given(mask_pairs())
    def test_ranges_and_dice_iou_relation(self, pair):
        a, b = pair
        s = fb_iou(a, b)
        for v in (s.dice, s.fg_iou, s.bg_iou, s.fb_iou):
            assert 0.0 <= v <= 1.0
        # dice = 2 iou / (1 + iou) whenever the foreground union is non-empty
        if np.logical_or(a, b).any():
            expect = 2.0 * s.fg_iou / (1.0 + s.fg_iou)
            assert s.dice == pytest.approx(expect, abs=1e-12)

    @settings(max_examples=100, deadline=None)
    @given(masks())
    def test_self_is_perfect(self, m):
        s = fb_iou(m, m)
        assert s.dice == 1.0 and s.fg_iou == 1.0 and s.bg_iou == 1.0

    @settings(max_examples=100, deadline=None)
    @given(masks())
    def test_complement_is_worst_foreground(self, m):
        comp = (1 - m).astype(np.uint8)
        s = fb_iou(m, comp)
        assert s.fg_iou == 0.0 and s.dice == 0.0

    def test_monotone_in_overlap(self):
        gt = np.zeros((8, 8), dtype=np.uint8)
        gt[2:6, 2:6] = 1
        prev = -1.0
        for k in range(5):
            pred = np.zeros_like(gt)
            pred[2:2 + k, 2:6] = 1
            d = dice(pred, gt)
            assert d >= prev
            prev = d


class TestAggregate:
    def test_mean_fields(self):
        scores = [SegScore(dice=1.0, fg_iou=1.0, bg_iou=0.0),
                  SegScore(dice=0.0, fg_iou=0.0, bg_iou=1.0)]
        summ = aggregate(scores)
        assert summ.count == 2
        assert summ.mean.dice == pytest.approx(0.5)
        assert summ.mean.fg_iou == pytest.approx(0.5)
        assert summ.mean.bg_iou == pytest.approx(0.5)
        assert summ.mean.fb_iou == pytest.approx(0.5)

    def test_single(self):
        s = SegScore(dice=0.25, fg_iou=0.5, bg_iou=0.75)
        summ = aggregate([s])
        assert summ.count == 1
        assert summ.mean == s


class TestCsv:
    def test_rows_and_summary(self, tmp_path):
        rows = [("clip0", 1, SegScore(dice=1.0, fg_iou=1.0, bg_iou=1.0)),
                ("clip0", 2, SegScore(dice=0.5, fg_iou=0.5, bg_iou=0.5))]
        path = tmp_path / "scores.csv"
        write_scores_csv(path, rows)
        with open(path, newline="") as fh:
            got = list(csv.reader(fh))
        assert tuple(got[0]) == SCORE_CSV_HEADER
        assert len(got) == 4
        assert got[1][0] == "clip0" and got[1][2] == "1.000000"
        assert got[3][0] == "mean" and got[3][1] == "2"
        assert float(got[3][2]) == pytest.approx(0.75)

    def test_empty_rows_header_only(self, tmp_path):
        path = tmp_path / "scores.csv"
        write_scores_csv(path, [])
        with open(path, newline="") as fh:
            got = list(csv.reader(fh))
        assert len(got) == 1
