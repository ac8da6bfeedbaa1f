"""Masked depth evaluation metrics: RMSE, REL, MAE, and threshold ratios.

All statistics are restricted to valid transparent pixels. Dataset-level
numbers pool pixels across samples (pixel-weighted), so aggregation is
independent of sample order. Threshold comparisons are strict (<), and a
non-positive prediction fails every threshold.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .core import ValidRange, _values, valid_pixels

THRESHOLDS = (1.05, 1.10, 1.25)


@dataclass(frozen=True)
class PixelStats:
    """Pooled sufficient statistics over a set of valid pixels."""

    count: int = 0
    sq_err: float = 0.0
    abs_err: float = 0.0
    rel_err: float = 0.0
    within_105: int = 0
    within_110: int = 0
    within_125: int = 0

    def __add__(self, other: "PixelStats") -> "PixelStats":
        return PixelStats(
            self.count + other.count,
            self.sq_err + other.sq_err,
            self.abs_err + other.abs_err,
            self.rel_err + other.rel_err,
            self.within_105 + other.within_105,
            self.within_110 + other.within_110,
            self.within_125 + other.within_125,
        )


@dataclass(frozen=True)
class MetricsReport:
    rmse: float
    rel: float
    mae: float
    delta_105: float
    delta_110: float
    delta_125: float
    pixel_count: int
    sample_count: int

    @property
    def defined(self) -> bool:
        return self.pixel_count > 0

    def as_dict(self) -> dict:
        def clean(v):
            return None if isinstance(v, float) and math.isnan(v) else v

        return {
            "rmse": clean(self.rmse),
            "rel": clean(self.rel),
            "mae": clean(self.mae),
            "delta_105": clean(self.delta_105),
            "delta_110": clean(self.delta_110),
            "delta_125": clean(self.delta_125),
            "pixel_count": self.pixel_count,
            "sample_count": self.sample_count,
            "delta_boundary": "strict",
            "pooling": "pixels",
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2)

    def row(self) -> str:
        """One aligned table row: RMSE REL MAE d1.05 d1.10 d1.25."""
        if not self.defined:
            return "  (no valid pixels)"
        return (
            f"{self.rmse:8.4f} {self.rel:8.4f} {self.mae:8.4f} "
            f"{self.delta_105:8.2f} {self.delta_110:8.2f} {self.delta_125:8.2f}"
        )

    @staticmethod
    def header() -> str:
        return (
            f"{'RMSE':>8} {'REL':>8} {'MAE':>8} "
            f"{'d1.05':>8} {'d1.10':>8} {'d1.25':>8}"
        )


def pixel_stats(pred, gt, mask, valid_range: ValidRange | None = None) -> PixelStats:
    """Sufficient statistics for one sample; pool with + and finish with report()."""
    pred = np.asarray(_values(pred), dtype=np.float64)
    gt = np.asarray(_values(gt), dtype=np.float64)
    valid = np.asarray(valid_pixels(gt, mask, valid_range))
    p = pred[valid]
    g = gt[valid]
    n = p.size
    if n == 0:
        return PixelStats()
    err = p - g
    ratio = np.full(n, np.inf)
    pos = p > 0
    ratio[pos] = np.maximum(p[pos] / g[pos], g[pos] / p[pos])
    return PixelStats(
        count=int(n),
        sq_err=float(np.sum(err**2)),
        abs_err=float(np.sum(np.abs(err))),
        rel_err=float(np.sum(np.abs(err) / g)),
        within_105=int(np.sum(ratio < 1.05)),
        within_110=int(np.sum(ratio < 1.10)),
        within_125=int(np.sum(ratio < 1.25)),
    )


def report(stats: PixelStats, sample_count: int = 1) -> MetricsReport:
    if stats.count == 0:
        nan = float("nan")
        return MetricsReport(nan, nan, nan, nan, nan, nan, 0, sample_count)
    n = stats.count
    return MetricsReport(
        rmse=math.sqrt(stats.sq_err / n),
        rel=stats.rel_err / n,
        mae=stats.abs_err / n,
        delta_105=100.0 * stats.within_105 / n,
        delta_110=100.0 * stats.within_110 / n,
        delta_125=100.0 * stats.within_125 / n,
        pixel_count=n,
        sample_count=sample_count,
    )


def compute_metrics(pred, gt, mask, valid_range: ValidRange | None = None) -> MetricsReport:
    """Masked metrics for a single sample; undefined report when no pixel is valid."""
    return report(pixel_stats(pred, gt, mask, valid_range), sample_count=1)


def aggregate(stats_list) -> MetricsReport:
    """Dataset metrics from per-sample statistics, pooling all valid pixels."""
    total = PixelStats()
    n_samples = 0
    for s in stats_list:
        total = total + s
        n_samples += 1
    return report(total, sample_count=n_samples)
