"""Ablation harness: row structure, weight mapping, flags, CSV output."""

import csv

import pytest
import torch

from fsvos.ablation import (ABLATION_ROW_NAMES, AblationResult, AblationRow,
                            format_ablation_table, row_weights, run_ablation,
                            write_ablation_csv)
from fsvos.config import Phase2Config
from fsvos.data import SynthConfig
from fsvos.errors import ConfigurationError
from fsvos.losses import LossWeights
from fsvos.model import ArchConfig, FewShotSegNet


class TestRowWeights:
    def test_structure(self):
        assert ABLATION_ROW_NAMES == ("baseline", "no_temporal", "no_feature",
                                      "no_prediction", "full")
        base = LossWeights(2.0, 3.0, 4.0)
        assert row_weights("full", base) == base
        assert row_weights("no_temporal", base) == LossWeights(0.0, 3.0, 4.0)
        assert row_weights("no_feature", base) == LossWeights(2.0, 0.0, 4.0)
        assert row_weights("no_prediction", base) == LossWeights(2.0, 3.0, 0.0)

    def test_baseline_has_no_weights(self):
        with pytest.raises(ConfigurationError):
            row_weights("baseline", LossWeights())


def _tiny_result():
    torch.manual_seed(0)
    net = FewShotSegNet(ArchConfig())
    data_cfg = SynthConfig(image_size=(32, 32), seed=0, frames_per_clip=4)
    return run_ablation(net, data_cfg, Phase2Config(epochs=1), seeds=(0,),
                        clips_per_seed=1)


@pytest.fixture(scope="module")
def result():
    return _tiny_result()


class TestRunAblation:
    def test_five_rows_in_order(self, result):
        assert tuple(r.name for r in result.rows) == ABLATION_ROW_NAMES

    def test_on_off_pattern(self, result):
        full = result.row("full")
        assert (full.use_temporal, full.use_feature, full.use_prediction) \
            == (True, True, True)
        base = result.row("baseline")
        assert (base.use_temporal, base.use_feature, base.use_prediction) \
            == (False, False, False)
        no_p = result.row("no_prediction")
        assert not no_p.use_prediction and no_p.use_temporal and no_p.use_feature

    def test_scores_in_range(self, result):
        for r in result.rows:
            for v in (r.dice, r.fg_iou, r.bg_iou, r.fb_iou):
                assert 0.0 <= v <= 1.0

    def test_flag_consistency(self, result):
        base = result.row("baseline").dice
        for r in result.rows[1:]:
            assert r.flagged == (r.dice < 0.5 * base)
        assert not result.row("baseline").flagged
        assert result.collapse_flagged == result.row("no_prediction").flagged

    def test_deterministic(self, result):
        again = _tiny_result()
        assert again == result

    def test_unknown_row_lookup(self, result):
        with pytest.raises(KeyError):
            result.row("no_everything")


class TestReports:
    def test_csv(self, result, tmp_path):
        path = tmp_path / "ablation.csv"
        write_ablation_csv(path, result)
        rows = list(csv.reader(open(path)))
        assert len(rows) == 6
        assert rows[0][0] == "row"
        assert [r[0] for r in rows[1:]] == list(ABLATION_ROW_NAMES)
        flags = {r[0]: r[8] for r in rows[1:]}
        assert set(flags.values()) <= {"0", "1"}

    def test_table_format(self, result):
        table = format_ablation_table(result)
        lines = table.splitlines()
        assert len(lines) == 6
        assert "dice" in lines[0]
        for name in ABLATION_ROW_NAMES:
            assert any(line.startswith(name) for line in lines[1:])

    def test_collapse_marker(self):
        rows = tuple(
            AblationRow(name, True, True, name != "no_prediction",
                        dice=0.1 if name == "no_prediction" else 0.9,
                        fg_iou=0.5, bg_iou=0.5, fb_iou=0.5,
                        flagged=name == "no_prediction")
            for name in ABLATION_ROW_NAMES)
        fake = AblationResult(rows=rows, full_vs_baseline_ok=True,
                              full_vs_leave_one_out_ok=True, collapse_flagged=True)
        assert "COLLAPSE" in format_ablation_table(fake)
