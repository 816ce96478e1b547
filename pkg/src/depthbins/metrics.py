"""Evaluation metrics: RMSE, MAE (cm) and threshold accuracies delta_i (percent)."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .losses import joint_mask
from .types import DepthMap

DELTA_BASE = 1.05


@dataclass(frozen=True)
class MetricReport:
    rmse: float
    mae: float
    delta: tuple[tuple[int, float], ...]
    valid_pixels: int

    def to_record(self) -> dict:
        rec = {"rmse": self.rmse, "mae": self.mae}
        for i, pct in self.delta:
            rec[f"delta{i}"] = pct
        rec["valid_pixels"] = self.valid_pixels
        return rec

    def to_json(self) -> str:
        return json.dumps(self.to_record())


def delta_accuracy(pred: np.ndarray, gt: np.ndarray, threshold: float) -> float:
    """Percent of pixels with max(gt/pred, pred/gt) strictly below ``threshold``.

    Pixels where either depth is zero have no defined ratio and are skipped.
    """
    pos = (pred > 0) & (gt > 0)
    if not pos.any():
        return 0.0
    p, g = pred[pos], gt[pos]
    ratio = np.maximum(g / p, p / g)
    return 100.0 * np.count_nonzero(ratio < threshold) / p.size


def metrics(pred: DepthMap, gt: DepthMap, thresholds=(1, 2, 3)) -> MetricReport:
    mask = joint_mask(pred, gt)
    p, g = pred.values[mask], gt.values[mask]
    err = p - g
    rmse = float(np.sqrt(np.mean(err * err)))
    mae = float(np.mean(np.abs(err)))
    delta = tuple((i, delta_accuracy(p, g, DELTA_BASE ** i)) for i in thresholds)
    return MetricReport(rmse, mae, delta, int(mask.sum()))
