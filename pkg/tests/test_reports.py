import numpy as np
import pandas as pd
import pytest
from numpy.testing import assert_allclose

from grasp_quality.errors import CheckpointIOError, ConfigError, ContractError, FormatError
from grasp_quality.evaluation import calibration
from grasp_quality.reports import (
    ABLATION_COLUMNS,
    CALIBRATION_COLUMNS,
    HISTORY_COLUMNS,
    SPLIT_COLUMNS,
    emit_report,
    read_calibration_csv,
    read_grid_file,
    read_history_csv,
    reliability_points,
)
from utils.data_models import (
    AblationRow,
    HistoryRecord,
    ReportKind,
    SplitComparisonRow,
    SplitKind,
)


@pytest.fixture
def report(rng):
    probs = rng.uniform(0.3, 0.9, size=400)
    labels = (rng.uniform(size=400) < probs).astype(int)
    return calibration(probs, labels)


@pytest.fixture
def history():
    return [
        HistoryRecord(epoch=1, step=4, lr=1e-4, train_loss=0.69, train_acc=52.5, val_acc=50.0),
        HistoryRecord(epoch=2, step=8, lr=1e-4, train_loss=0.61, train_acc=66.25, val_acc=62.5),
    ]


class TestCalibrationReport:
    def test_csv_and_svg_written(self, report, tmp_path):
        written = emit_report(report, tmp_path / "calibration", ReportKind.CALIBRATION)
        assert [path.name for path in written] == ["calibration.csv", "calibration.svg"]
        frame = pd.read_csv(written[0])
        assert list(frame.columns) == CALIBRATION_COLUMNS
        assert len(frame) == report.n_buckets
        assert written[1].read_text().lstrip().startswith("<?xml")

    def test_unwritable_destination(self, report, tmp_path):
        with pytest.raises(CheckpointIOError):
            emit_report(report, tmp_path / "absent" / "calibration", ReportKind.CALIBRATION)

    def test_csv_round_trip(self, report, tmp_path):
        emit_report(report, tmp_path / "calibration", ReportKind.CALIBRATION)
        assert read_calibration_csv(tmp_path / "calibration.csv") == report

    def test_figure_is_reproducible(self, report, tmp_path):
        emit_report(report, tmp_path / "a", ReportKind.CALIBRATION)
        emit_report(report, tmp_path / "b", ReportKind.CALIBRATION)
        assert (tmp_path / "a.svg").read_bytes() == (tmp_path / "b.svg").read_bytes()

    def test_reliability_points_skip_empty_buckets(self, report):
        x, y = reliability_points(report)
        filled = [bucket for bucket in report.buckets if bucket.count]
        assert len(x) == len(y) == len(filled) < report.n_buckets
        assert_allclose(x, [bucket.mean_pred for bucket in filled])

    def test_perfect_calibration_lies_on_the_diagonal(self):
        probs = np.array([0.25] * 4 + [0.75] * 4)
        labels = np.array([1, 0, 0, 0, 1, 1, 1, 0])
        x, y = reliability_points(calibration(probs, labels, n_buckets=4))
        assert_allclose(x, y)

    def test_wrong_columns(self, tmp_path):
        (tmp_path / "c.csv").write_text("a,b\n1,2\n")
        with pytest.raises(FormatError):
            read_calibration_csv(tmp_path / "c.csv")


class TestHistoryReport:
    def test_round_trip_and_figure(self, history, tmp_path):
        written = emit_report(history, tmp_path / "history", ReportKind.HISTORY)
        assert [path.name for path in written] == ["history.csv", "history.svg"]
        assert list(pd.read_csv(written[0]).columns) == HISTORY_COLUMNS
        assert read_history_csv(written[0]) == history

    def test_empty_history_has_only_a_header(self, tmp_path):
        written = emit_report([], tmp_path / "history", ReportKind.HISTORY)
        assert written[0].read_text() == ",".join(HISTORY_COLUMNS) + "\n"


class TestGrids:
    def test_ablation_rows(self, tmp_path):
        rows = [
            AblationRow(
                normalize=True,
                symmetrize=False,
                mult_pixels=False,
                mult_adjust_z=False,
                gp_noise=False,
                val_accuracy=81.25,
                train_accuracy=90.0,
                seed=3,
            )
        ]
        (path,) = emit_report(rows, tmp_path / "ablation", ReportKind.ABLATION)
        frame = pd.read_csv(path)
        assert list(frame.columns) == ABLATION_COLUMNS
        assert frame.loc[0, "val_accuracy"] == 81.25

    def test_split_rows(self, tmp_path):
        rows = [
            SplitComparisonRow(
                split=SplitKind.OBJECT,
                setting="plain",
                val_accuracy=70.0,
                train_accuracy=88.0,
                seed=1,
            )
        ]
        (path,) = emit_report(rows, tmp_path / "splits", ReportKind.SPLITS)
        frame = pd.read_csv(path)
        assert list(frame.columns) == SPLIT_COLUMNS
        assert frame.loc[0, "split"] == "object"

    def test_empty_ablation_grid_keeps_its_schema(self, tmp_path):
        written = emit_report([], tmp_path / "ablation", ReportKind.ABLATION)
        assert [path.name for path in written] == ["ablation.csv"]
        assert written[0].read_text() == ",".join(ABLATION_COLUMNS) + "\n"
        assert not (tmp_path / "ablation.svg").exists()

    def test_rows_must_match_the_declared_kind(self, history, tmp_path):
        with pytest.raises(ContractError):
            emit_report(history, tmp_path / "ablation", ReportKind.ABLATION)

    def test_grid_file(self, tmp_path):
        (tmp_path / "grid.csv").write_text(
            "normalize,symmetrize,mult_pixels\nTrue,False,False\nTrue,True,True\n"
        )
        rows = read_grid_file(tmp_path / "grid.csv")
        assert [row.symmetrize for row in rows] == [False, True]
        assert rows[1].mult_pixels and not rows[1].gp_noise

    def test_grid_file_unknown_column(self, tmp_path):
        (tmp_path / "grid.csv").write_text("normalize,dropout\nTrue,True\n")
        with pytest.raises(ConfigError, match="dropout"):
            read_grid_file(tmp_path / "grid.csv")

    def test_grid_file_invalid_combination(self, tmp_path):
        (tmp_path / "grid.csv").write_text("mult_pixels,mult_adjust_z\nFalse,True\n")
        with pytest.raises(ConfigError):
            read_grid_file(tmp_path / "grid.csv")
