"""Observation-masked forecast scoring and report emission.

Metrics run only over points that were originally observed; imputed
values train models but never score them. Ground truth for a forecast
anchored at frame a with history length S starts at frame a + S of the
evaluation tensor.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from stvl.errors import (
    AlignmentError,
    LengthMismatchError,
    MissingCellError,
    NoObservedPointsError,
    ZeroMeanGroundTruthError,
)
from stvl.grid_data import Region, TrafficTensor, region_cells

Cell = Tuple[int, int]


@dataclass(frozen=True)
class MetricsReport:
    mae: float
    rmse: float
    nrmse: float
    n_points: int
    horizon: Optional[int] = None  # steps-ahead cut this report covers; None = everything scored
    per_cell: Optional[Dict[Cell, "MetricsReport"]] = field(default=None, compare=False)


@dataclass(frozen=True)
class CellForecast:
    """Predicted values for one cell from one anchor, steps 1..K."""

    anchor: int
    cell: Cell
    values: Tuple[float, ...]


def _compute(pred: np.ndarray, gt: np.ndarray, horizon: Optional[int] = None,
             per_cell: Optional[dict] = None) -> MetricsReport:
    if pred.size == 0:
        raise NoObservedPointsError("no observed points to score")
    gt_mean = float(np.mean(gt))
    if gt_mean == 0.0:
        raise ZeroMeanGroundTruthError("ground truth mean is zero; NRMSE undefined")
    err = pred - gt
    mae = float(np.mean(np.abs(err)))
    rmse = float(np.sqrt(np.mean(err * err)))
    return MetricsReport(
        mae=mae, rmse=rmse, nrmse=rmse / gt_mean,
        n_points=int(pred.size), horizon=horizon, per_cell=per_cell,
    )


def metrics(pred: Sequence[float], gt: Sequence[float],
            include: Optional[Sequence[bool]] = None) -> MetricsReport:
    """MAE, RMSE, and mean-normalized RMSE over the included points."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 1:
        raise LengthMismatchError(f"pred has {pred.shape}, gt has {gt.shape}")
    if include is None:
        inc = np.ones(pred.shape, dtype=bool)
    else:
        inc = np.asarray(include, dtype=bool)
        if inc.shape != pred.shape:
            raise LengthMismatchError(f"include has {inc.shape}, pred has {pred.shape}")
    return _compute(pred[inc], gt[inc])


def reconstruct_grid(cell_preds: Dict[Cell, Sequence[float]], region: Region) -> np.ndarray:
    """Assemble per-cell K-step predictions into (K, height, width) frames."""
    cells = region_cells(region)
    lengths = set()
    for cell in cells:
        if cell not in cell_preds:
            raise MissingCellError(f"no prediction for cell {cell}")
        lengths.add(len(cell_preds[cell]))
    if len(lengths) != 1:
        raise AlignmentError(f"prediction lengths disagree: {sorted(lengths)}")
    k = lengths.pop()
    if k == 0:
        raise AlignmentError("predictions are empty")
    (x1, x2), (y1, y2) = region
    out = np.empty((k, x2 - x1 + 1, y2 - y1 + 1), dtype=np.float64)
    for (x, y) in cells:
        out[:, x - x1, y - y1] = np.asarray(cell_preds[(x, y)], dtype=np.float64)
    return out


def evaluate_run(
    forecasts: Iterable[CellForecast],
    test: TrafficTensor,
    s: int,
    horizons: Sequence[int],
    at_step: bool = False,
    per_cell: bool = False,
) -> List[MetricsReport]:
    """Score forecasts against the evaluation tensor, one report per horizon.

    A horizon h report covers steps 1..h by default; ``at_step`` scores
    step h alone. Only originally observed points count. ``per_cell``
    attaches a per-cell breakdown to each report.
    """
    horizons = list(horizons)
    if not horizons or any(h < 1 for h in horizons):
        raise AlignmentError(f"horizons must be positive integers, got {horizons}")
    preds, gts, incs, cells = [], [], [], []
    max_h = max(horizons)
    for fc in forecasts:
        x, y = fc.cell
        if not (1 <= x <= test.h and 1 <= y <= test.w):
            raise AlignmentError(f"cell {fc.cell} outside the {test.h}x{test.w} grid")
        k = len(fc.values)
        if k < max_h:
            raise AlignmentError(
                f"forecast at anchor {fc.anchor} has {k} steps but horizon {max_h} requested"
            )
        t0 = fc.anchor + s
        if fc.anchor < 0 or t0 + k > test.t:
            raise AlignmentError(
                f"forecast at anchor {fc.anchor} runs past the tensor ({test.t} frames)"
            )
        preds.append(np.asarray(fc.values, dtype=np.float64))
        gts.append(test.values[t0:t0 + k, x - 1, y - 1])
        incs.append(test.observed_mask[t0:t0 + k, x - 1, y - 1])
        cells.append(fc.cell)
    if not preds:
        raise AlignmentError("no forecasts supplied")
    width = max(len(p) for p in preds)
    pred_m = np.full((len(preds), width), np.nan)
    gt_m = np.full_like(pred_m, np.nan)
    inc_m = np.zeros(pred_m.shape, dtype=bool)
    for i, (p, g, m) in enumerate(zip(preds, gts, incs)):
        pred_m[i, :len(p)], gt_m[i, :len(p)], inc_m[i, :len(p)] = p, g, m
    cells_arr = np.array(cells)

    reports = []
    for h in horizons:
        sel = inc_m.copy()
        if at_step:
            sel[:, :h - 1] = False
        sel[:, h:] = False
        breakdown = None
        if per_cell:
            breakdown = {}
            for cell in sorted(set(cells)):
                rows = (cells_arr[:, 0] == cell[0]) & (cells_arr[:, 1] == cell[1])
                cell_sel = sel & rows[:, None]
                breakdown[cell] = _compute(pred_m[cell_sel], gt_m[cell_sel], horizon=h)
        reports.append(_compute(pred_m[sel], gt_m[sel], horizon=h, per_cell=breakdown))
    return reports


# --- report files ---

TSV_FIELDS = ("horizon", "mae", "rmse", "nrmse", "n_points")


def _row(report: MetricsReport) -> dict:
    return {
        "horizon": report.horizon if report.horizon is not None else "all",
        "mae": report.mae,
        "rmse": report.rmse,
        "nrmse": report.nrmse,
        "n_points": report.n_points,
    }


def write_report_tsv(reports: Sequence[MetricsReport], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(TSV_FIELDS) + "\n")
        for report in reports:
            row = _row(report)
            fh.write("\t".join(
                f"{row[f]:.17g}" if isinstance(row[f], float) else str(row[f])
                for f in TSV_FIELDS
            ) + "\n")


def write_report_json(reports: Sequence[MetricsReport], path) -> None:
    payload = {"horizons": []}
    for report in reports:
        row = _row(report)
        if report.per_cell is not None:
            row["per_cell"] = {
                f"{x},{y}": _row(sub) for (x, y), sub in sorted(report.per_cell.items())
            }
        payload["horizons"].append(row)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")
