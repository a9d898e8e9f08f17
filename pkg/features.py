"""
Fixed-length featurization of trends
"""
import logging
from typing import Dict, List, Optional, Sequence

import numpy as np

from models import (
    FEATURE_DIM, FeatureVector, FeaturizationError, TimeSeries, Trend, TrendKind,
)

logger = logging.getLogger(__name__)

FEATURE_LAYOUT_ID = "trend-features-v1-m16"

FEATURE_LAYOUT: List[str] = [
    "is_linear",
    "is_jump",
    "is_cycle",
    "is_anomaly",
    "t_start_norm",
    "t_end_norm",
    "duration_norm",
    "slope_norm",
    "intercept_norm",
    "coverage",
    "magnitude",
    "mean_norm",
    "contains_series_max",
    "fit_quality",
    "period_norm",
    "max_value_norm",
]

assert len(FEATURE_LAYOUT) == FEATURE_DIM

# One-hot slot of each kind; Statistical is encoded as all-zero
KIND_SLOT: Dict[TrendKind, int] = {
    TrendKind.LINEAR: 0,
    TrendKind.JUMP: 1,
    TrendKind.CYCLE: 2,
    TrendKind.ANOMALY: 3,
}


def feature_index(name: str) -> int:
    """Position of a named feature in the layout"""
    try:
        return FEATURE_LAYOUT.index(name)
    except ValueError:
        raise FeaturizationError(f"unknown feature '{name}'") from None


def featurize(trend: Trend, series: TimeSeries) -> FeatureVector:
    """
    Map a trend to its normalized feature vector.

    Times are normalized by the series span and values by the series range,
    so the result is invariant to time translation and to positive affine
    value scaling.
    """
    t = series.times()
    v = series.values()
    t0, t_last = t[0], t[-1]
    span = t_last - t0
    v_min = float(v.min())
    value_range = float(v.max()) - v_min
    if value_range <= 0.0:
        raise FeaturizationError("constant series: featurization undefined")

    first, last = trend.point_indices
    if last >= len(t):
        raise FeaturizationError(
            f"trend point range {trend.point_indices} outside series of {len(t)} points"
        )
    t_start, t_end = trend.interval
    slack = 1e-9 * span
    if t_start < t0 - slack or t_end > t_last + slack:
        raise FeaturizationError(f"trend interval {trend.interval} outside the series time span")

    x = np.zeros(FEATURE_DIM)
    slot = KIND_SLOT.get(trend.kind)
    if slot is not None:
        x[slot] = 1.0

    start_norm = float(np.clip((t_start - t0) / span, 0.0, 1.0))
    end_norm = float(np.clip((t_end - t0) / span, 0.0, 1.0))
    duration = end_norm - start_norm
    x[4] = start_norm
    x[5] = end_norm
    x[6] = duration
    x[9] = (last - first + 1) / len(t)

    window = v[first:last + 1]
    x[11] = (window.mean() - v_min) / value_range
    x[12] = 1.0 if first <= int(np.argmax(v)) <= last else 0.0
    x[15] = (window.max() - v_min) / value_range

    params = trend.params
    if trend.kind == TrendKind.LINEAR:
        slope_norm = params["slope"] * span / value_range
        x[7] = slope_norm
        x[8] = (params["intercept"] - v_min) / value_range
        x[10] = abs(slope_norm) * duration
        x[13] = float(np.clip(params["r_squared"], 0.0, 1.0))
    elif trend.kind == TrendKind.JUMP:
        delta_norm = params["delta"] / value_range
        x[7] = delta_norm
        x[10] = abs(delta_norm)
    elif trend.kind == TrendKind.CYCLE:
        x[10] = params["amplitude"] / value_range
        x[14] = float(np.clip(params["period"] / span, 0.0, 1.0))
    elif trend.kind == TrendKind.ANOMALY:
        deviation_norm = params["deviation"] / value_range
        x[7] = deviation_norm
        x[10] = abs(deviation_norm)

    return FeatureVector(values=tuple(float(value) for value in x))


def featurize_all(trends: Sequence[Trend], series: TimeSeries) -> List[FeatureVector]:
    return [featurize(trend, series) for trend in trends]


def apply_mask(matrix: np.ndarray, feature_indices: Optional[Sequence[int]]) -> np.ndarray:
    """Zero every column not listed in feature_indices (None keeps all)"""
    if feature_indices is None:
        return matrix
    keep = np.zeros(matrix.shape[1], dtype=bool)
    for index in feature_indices:
        if not 0 <= index < matrix.shape[1]:
            raise FeaturizationError(f"feature index {index} out of range")
        keep[index] = True
    return np.where(keep, matrix, 0.0)
