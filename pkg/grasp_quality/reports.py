"""
CSV and SVG emission for calibration reports, training histories and experiment grids

CSV schemas (one header row, comma separated, "\\n" line endings):
  calibration: lower, upper, mean_pred, freq, count   (empty cells for empty buckets)
  history:     epoch, step, lr, train_loss, train_acc, val_acc
  ablation:    normalize, symmetrize, mult_pixels, mult_adjust_z, gp_noise,
               val_accuracy, train_accuracy, seed
  splits:      split, setting, val_accuracy, train_accuracy, seed
"""

import logging
from pathlib import Path
from typing import List, Sequence, Tuple, Union

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
import pandas as pd
from pydantic import ValidationError

from utils.data_models import (
    AblationRow,
    AugmentConfig,
    CalibrationBucket,
    CalibrationReport,
    HistoryRecord,
    ReportKind,
    SplitComparisonRow,
)
from .errors import CheckpointIOError, ConfigError, ContractError, FormatError
from .evaluation import report_from_buckets

logger = logging.getLogger(__name__)

# Fixed SVG element ids and no date stamp keep figures byte-reproducible
plt.rcParams["svg.hashsalt"] = "gqcnn-lab"
SVG_METADATA = {"Date": None}

CALIBRATION_COLUMNS = ["lower", "upper", "mean_pred", "freq", "count"]
HISTORY_COLUMNS = list(HistoryRecord.model_fields)
ABLATION_COLUMNS = list(AblationRow.model_fields)
SPLIT_COLUMNS = list(SplitComparisonRow.model_fields)
ROW_TYPES = {
    ReportKind.HISTORY: HistoryRecord,
    ReportKind.ABLATION: AblationRow,
    ReportKind.SPLITS: SplitComparisonRow,
}

Report = Union[
    CalibrationReport,
    Sequence[HistoryRecord],
    Sequence[AblationRow],
    Sequence[SplitComparisonRow],
]
PathLike = Union[str, Path]


def _write_csv(frame: pd.DataFrame, path: Path) -> Path:
    try:
        frame.to_csv(path, index=False, lineterminator="\n")
    except OSError as e:
        raise CheckpointIOError(f"cannot write {path}: {e}") from e
    return path


def _save_figure(fig, path: Path) -> Path:
    try:
        fig.savefig(path, format="svg", metadata=SVG_METADATA)
    except OSError as e:
        raise CheckpointIOError(f"cannot write {path}: {e}") from e
    finally:
        plt.close(fig)
    return path


def _read_csv(path: PathLike) -> pd.DataFrame:
    try:
        return pd.read_csv(path, float_precision="round_trip")
    except OSError as e:
        raise CheckpointIOError(f"cannot read {path}: {e}") from e
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise FormatError(f"malformed CSV {path}: {e}") from e


# Calibration


def calibration_frame(report: CalibrationReport) -> pd.DataFrame:
    return pd.DataFrame(
        [bucket.model_dump() for bucket in report.buckets], columns=CALIBRATION_COLUMNS
    )


def read_calibration_csv(path: PathLike) -> CalibrationReport:
    frame = _read_csv(path)
    if list(frame.columns) != CALIBRATION_COLUMNS:
        raise FormatError(f"{path} does not have the calibration columns")
    buckets = []
    for row in frame.to_dict(orient="records"):
        buckets.append(
            CalibrationBucket(
                lower=float(row["lower"]),
                upper=float(row["upper"]),
                mean_pred=None if pd.isna(row["mean_pred"]) else float(row["mean_pred"]),
                freq=None if pd.isna(row["freq"]) else float(row["freq"]),
                count=int(row["count"]),
            )
        )
    return report_from_buckets(buckets)


def reliability_points(report: CalibrationReport) -> Tuple[np.ndarray, np.ndarray]:
    """(mean prediction, empirical frequency) of the nonempty buckets"""
    filled = [bucket for bucket in report.buckets if bucket.count]
    return (
        np.array([bucket.mean_pred for bucket in filled], dtype=np.float64),
        np.array([bucket.freq for bucket in filled], dtype=np.float64),
    )


def calibration_figure(report: CalibrationReport):
    """Reliability curve with the diagonal above a bucket-count histogram"""
    fig, (curve, counts) = plt.subplots(
        2, 1, figsize=(6, 7), sharex=True, gridspec_kw={"height_ratios": [2, 1]}
    )
    x, y = reliability_points(report)
    curve.plot([0, 1], [0, 1], linestyle="--", color="gray", label="perfect calibration")
    curve.plot(x, y, marker="o", color="tab:blue", label=f"model (ECE {report.ece:.3f})")
    curve.set_xlim(0, 1)
    curve.set_ylim(0, 1)
    curve.set_ylabel("empirical success frequency")
    curve.legend(loc="upper left")

    width = 1.0 / report.n_buckets
    centers = [(bucket.lower + bucket.upper) / 2 for bucket in report.buckets]
    counts.bar(
        centers,
        [bucket.count for bucket in report.buckets],
        width=width,
        edgecolor="black",
        color="tab:blue",
    )
    counts.set_xlabel("predicted success probability")
    counts.set_ylabel("count")
    fig.tight_layout()
    return fig


# History


def history_frame(history: Sequence[HistoryRecord]) -> pd.DataFrame:
    return pd.DataFrame([record.model_dump() for record in history], columns=HISTORY_COLUMNS)


def read_history_csv(path: PathLike) -> List[HistoryRecord]:
    frame = _read_csv(path)
    try:
        return [HistoryRecord(**row) for row in frame.to_dict(orient="records")]
    except ValidationError as e:
        raise FormatError(f"malformed history row in {path}: {e}") from e


def history_figure(history: Sequence[HistoryRecord]):
    """Train and validation accuracy per epoch"""
    fig, ax = plt.subplots(figsize=(6, 4))
    epochs = [record.epoch for record in history]
    ax.plot(epochs, [record.train_acc for record in history], marker=".", label="train")
    ax.plot(epochs, [record.val_acc for record in history], marker=".", label="validation")
    ax.set_xlabel("epoch")
    ax.set_ylabel("accuracy (%)")
    ax.legend(loc="lower right")
    fig.tight_layout()
    return fig


# Grids


def grid_frame(
    rows: Sequence[Union[AblationRow, SplitComparisonRow]], kind: ReportKind
) -> pd.DataFrame:
    columns = SPLIT_COLUMNS if kind == ReportKind.SPLITS else ABLATION_COLUMNS
    return pd.DataFrame([row.model_dump(mode="json") for row in rows], columns=columns)


def read_grid_file(path: PathLike) -> List[AugmentConfig]:
    """Augmentation rows from a CSV whose columns are AugmentConfig fields"""
    frame = _read_csv(path)
    unknown = set(frame.columns) - set(AugmentConfig.model_fields)
    if unknown:
        raise ConfigError(f"grid file {path} has unknown columns {sorted(unknown)}")
    try:
        return [AugmentConfig(**row) for row in frame.to_dict(orient="records")]
    except ValidationError as e:
        raise ConfigError(f"invalid grid row in {path}: {e}") from e


def emit_report(report: Report, path: PathLike, kind: ReportKind) -> List[Path]:
    """Write <path>.csv, plus <path>.svg for calibration reports and histories

    The declared kind picks the schema, so an empty sequence still gets the
    header of its own kind.
    """
    kind = ReportKind(kind)
    if kind == ReportKind.CALIBRATION:
        if not isinstance(report, CalibrationReport):
            raise ContractError(f"calibration output needs a report, got {type(report).__name__}")
    else:
        row_type = ROW_TYPES[kind]
        strays = [row for row in report if not isinstance(row, row_type)]
        if isinstance(report, CalibrationReport) or strays:
            raise ContractError(f"{kind.value} output needs {row_type.__name__} rows")

    base = Path(path)
    csv_path, svg_path = base.with_suffix(".csv"), base.with_suffix(".svg")
    if kind == ReportKind.CALIBRATION:
        written = [
            _write_csv(calibration_frame(report), csv_path),
            _save_figure(calibration_figure(report), svg_path),
        ]
    elif kind == ReportKind.HISTORY:
        written = [
            _write_csv(history_frame(report), csv_path),
            _save_figure(history_figure(report), svg_path),
        ]
    else:
        written = [_write_csv(grid_frame(report, kind), csv_path)]
    logger.info(f"Wrote {', '.join(p.name for p in written)}")
    return written

