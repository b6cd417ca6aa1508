"""Evaluation metrics: MAE / MAPE / RMSE per attribute, 3D deviation error, latency.

Attribute errors average over samples and horizons up to a cutoff h (the
double-sum convention); an instantaneous variant restricts to horizon j == h
exactly and is labeled as such in reports. Deviation error is the Euclidean
distance in the ECEF frame, reported in kilometers. Latency is mean
wall-clock prediction time per window at batch size one.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field
from typing import Callable, List, Sequence

import numpy as np

from .geodesy import wgs84_to_ecef_array

POSITION_ATTRIBUTES = ("lon", "lat", "alt")


def _select(values: np.ndarray, h: int, cumulative: bool) -> np.ndarray:
    """Entries entering the average for cutoff h: horizons j <= h, or j == h."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise ValueError(f"expected [samples, horizons], got shape {values.shape}")
    if not 1 <= h <= values.shape[1]:
        raise ValueError(f"cutoff {h} outside 1..{values.shape[1]}")
    if cumulative:
        return values[:, :h]
    return values[:, h - 1 : h]


def mae(truth, pred, h: int, cumulative: bool = True) -> float:
    t = _select(truth, h, cumulative)
    p = _select(pred, h, cumulative)
    return float(np.mean(np.abs(t - p)))


def mape(truth, pred, h: int, cumulative: bool = True) -> float:
    """Mean absolute percentage error; entries with zero truth are excluded.

    Returns NaN when every selected truth value is zero.
    """
    t = _select(truth, h, cumulative)
    p = _select(pred, h, cumulative)
    valid = t != 0.0
    if not np.any(valid):
        return float("nan")
    return float(np.mean(np.abs((t[valid] - p[valid]) / t[valid])) * 100.0)


def rmse(truth, pred, h: int, cumulative: bool = True) -> float:
    t = _select(truth, h, cumulative)
    p = _select(pred, h, cumulative)
    return float(np.sqrt(np.mean((t - p) ** 2)))


def mde(truth_lla, pred_lla, h: int, cumulative: bool = True) -> float:
    """Mean 3D ECEF distance between predicted and true positions, in km.

    ``truth_lla`` and ``pred_lla`` have shape [samples, horizons, 3] holding
    (lon degrees, lat degrees, alt meters).
    """
    truth_lla = np.asarray(truth_lla, dtype=np.float64)
    pred_lla = np.asarray(pred_lla, dtype=np.float64)
    if truth_lla.shape != pred_lla.shape or truth_lla.ndim != 3:
        raise ValueError("truth and prediction position arrays must match [N, n, 3]")
    t_ecef = wgs84_to_ecef_array(truth_lla[..., 0], truth_lla[..., 1], truth_lla[..., 2])
    p_ecef = wgs84_to_ecef_array(pred_lla[..., 0], pred_lla[..., 1], pred_lla[..., 2])
    dist_m = np.linalg.norm(t_ecef - p_ecef, axis=-1)
    sel = _select(dist_m, h, cumulative)
    return float(np.mean(sel)) / 1000.0


@dataclass
class MetricRow:
    """Metric cells for one horizon cutoff."""

    horizon: int
    mae: dict
    mape: dict
    rmse: dict
    mde_km: float


@dataclass
class MetricTable:
    """Per-horizon metric report for one predictor."""

    predictor: str
    cumulative: bool
    rows: List[MetricRow] = field(default_factory=list)
    mtc_ms: float | None = None

    def row(self, horizon: int) -> MetricRow:
        for r in self.rows:
            if r.horizon == horizon:
                return r
        raise KeyError(f"no row for horizon {horizon}")

    def to_csv(self, path) -> None:
        header = ["horizon"]
        for metric in ("mae", "mape", "rmse"):
            header += [f"{metric}_{a}" for a in POSITION_ATTRIBUTES]
        header.append("mde_km")
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for r in self.rows:
                row = [r.horizon]
                for metric in ("mae", "mape", "rmse"):
                    row += [f"{getattr(r, metric)[a]:.10g}" for a in POSITION_ATTRIBUTES]
                row.append(f"{r.mde_km:.10g}")
                writer.writerow(row)

    def to_json(self, path) -> None:
        payload = {
            "predictor": self.predictor,
            "cumulative": self.cumulative,
            "mtc_ms": self.mtc_ms,
            "rows": [
                {
                    "horizon": r.horizon,
                    "mae": r.mae,
                    "mape": r.mape,
                    "rmse": r.rmse,
                    "mde_km": r.mde_km,
                }
                for r in self.rows
            ],
        }
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2, allow_nan=True)

    def mde_series(self) -> List[float]:
        return [r.mde_km for r in self.rows]


def build_metric_table(
    predictor: str,
    truth_attrs: dict,
    pred_attrs: dict,
    truth_lla: np.ndarray,
    pred_lla: np.ndarray,
    cumulative: bool = True,
) -> MetricTable:
    """Assemble the full 1..n report from per-attribute [N, n] value arrays."""
    n = np.asarray(truth_lla).shape[1]
    table = MetricTable(predictor=predictor, cumulative=cumulative)
    for h in range(1, n + 1):
        table.rows.append(
            MetricRow(
                horizon=h,
                mae={
                    a: mae(truth_attrs[a], pred_attrs[a], h, cumulative)
                    for a in POSITION_ATTRIBUTES
                },
                mape={
                    a: mape(truth_attrs[a], pred_attrs[a], h, cumulative)
                    for a in POSITION_ATTRIBUTES
                },
                rmse={
                    a: rmse(truth_attrs[a], pred_attrs[a], h, cumulative)
                    for a in POSITION_ATTRIBUTES
                },
                mde_km=mde(truth_lla, pred_lla, h, cumulative),
            )
        )
    return table


def mtc(
    predict_fn: Callable,
    windows: Sequence,
    warmup: int = 5,
    min_windows: int = 30,
) -> float:
    """Mean wall-clock prediction time per window in milliseconds.

    Runs ``warmup`` untimed calls first, then times one call per window on
    the monotonic clock. Requires at least ``min_windows`` windows.
    """
    if len(windows) < min_windows:
        raise ValueError(f"need at least {min_windows} windows, got {len(windows)}")
    for w in windows[:warmup]:
        predict_fn(w)
    total = 0.0
    for w in windows:
        start = time.perf_counter()
        predict_fn(w)
        total += time.perf_counter() - start
    return total / len(windows) * 1000.0
