"""
Data models for time-series trend summarization
"""
import math
from enum import Enum
from typing import Dict, List, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from typing_extensions import Annotated, Literal

FORMAT_VERSION = "v1"
FEATURE_DIM = 16


class TrendSummaryError(ValueError):
    """Base error for every failure raised by this package"""


class FeaturizationError(TrendSummaryError):
    pass


class DetectionError(TrendSummaryError):
    pass


class PolicyError(TrendSummaryError):
    pass


class TrainingError(TrendSummaryError):
    pass


class InferenceError(TrendSummaryError):
    pass


class MetricError(TrendSummaryError):
    pass


class DataFormatError(TrendSummaryError):
    pass


class TrendKind(str, Enum):
    """Trend categories, in the order used for deterministic sorting"""
    LINEAR = "linear"
    JUMP = "jump"
    CYCLE = "cycle"
    ANOMALY = "anomaly"
    STATISTICAL = "statistical"


KIND_ORDER = {kind: position for position, kind in enumerate(TrendKind)}

REQUIRED_PARAMS = {
    TrendKind.LINEAR: ("slope", "intercept", "r_squared"),
    TrendKind.JUMP: ("delta", "t_at"),
    TrendKind.CYCLE: ("period", "amplitude"),
    TrendKind.ANOMALY: ("deviation", "t_at"),
    TrendKind.STATISTICAL: ("mean", "std"),
}


class TimeSeries(BaseModel):
    """Ordered (timestamp, value) pairs; timestamps are abstract reals"""
    model_config = ConfigDict(frozen=True)

    id: str
    points: List[Tuple[float, float]]

    @field_validator('points')
    @classmethod
    def check_points(cls, v):
        if len(v) < 2:
            raise ValueError("a time series needs at least 2 points")
        previous = None
        for t, value in v:
            if not (math.isfinite(t) and math.isfinite(value)):
                raise ValueError(f"non-finite point ({t}, {value})")
            if previous is not None and t <= previous:
                raise ValueError(f"timestamps must be strictly increasing (at t={t})")
            previous = t
        return v

    def times(self) -> np.ndarray:
        return np.array([p[0] for p in self.points], dtype=float)

    def values(self) -> np.ndarray:
        return np.array([p[1] for p in self.points], dtype=float)

    def __len__(self) -> int:
        return len(self.points)


class Trend(BaseModel):
    """One detected pattern with its interval and kind-specific parameters.

    Parameters are stored in series units: Linear slope per time unit and
    intercept as the fitted value at t_start; Jump delta and Anomaly deviation
    in value units; Cycle period in time units.
    """
    model_config = ConfigDict(frozen=True)

    kind: TrendKind
    interval: Tuple[float, float]
    point_indices: Tuple[int, int]
    params: Dict[str, float]

    @model_validator(mode='after')
    def check_trend(self):
        t_start, t_end = self.interval
        if not (math.isfinite(t_start) and math.isfinite(t_end)) or t_start > t_end:
            raise ValueError(f"invalid interval {self.interval}")
        first, last = self.point_indices
        if first < 0 or first > last:
            raise ValueError(f"invalid point index range {self.point_indices}")
        missing = [name for name in REQUIRED_PARAMS[self.kind] if name not in self.params]
        if missing:
            raise ValueError(f"{self.kind.value} trend is missing params {missing}")
        if any(not math.isfinite(value) for value in self.params.values()):
            raise ValueError("trend params must be finite")
        if self.kind in (TrendKind.JUMP, TrendKind.ANOMALY):
            if not t_start <= self.params["t_at"] <= t_end:
                raise ValueError("t_at must lie inside the trend interval")
        if self.kind == TrendKind.CYCLE:
            if self.params["period"] <= 0 or self.params["amplitude"] < 0:
                raise ValueError("cycle period must be > 0 and amplitude >= 0")
        return self

    def sort_key(self) -> Tuple[float, int, float, int]:
        return (self.interval[0], KIND_ORDER[self.kind], self.interval[1], self.point_indices[0])


class FeatureVector(BaseModel):
    """Fixed-length (m = 16) numeric description of a trend; layout in features.py"""
    model_config = ConfigDict(frozen=True)

    values: Tuple[float, ...]

    @field_validator('values')
    @classmethod
    def check_layout(cls, v):
        if len(v) != FEATURE_DIM:
            raise ValueError(f"feature vector must have exactly {FEATURE_DIM} entries")
        if any(not math.isfinite(x) for x in v):
            raise ValueError("feature vector entries must be finite")
        kinds = v[0:4]
        if any(x not in (0.0, 1.0) for x in kinds) or sum(kinds) > 1:
            raise ValueError("kind slots must be one-hot or all zero")
        if v[12] not in (0.0, 1.0):
            raise ValueError("contains_series_max must be 0 or 1")
        for index in (4, 5, 6, 9, 14):
            if not 0.0 <= v[index] <= 1.0:
                raise ValueError(f"feature {index} must lie in [0, 1]")
        if v[4] > v[5]:
            raise ValueError("t_start_norm must not exceed t_end_norm")
        return v

    def as_array(self) -> np.ndarray:
        return np.array(self.values, dtype=float)


class TrendSet(BaseModel):
    """Trends of one series with their parallel feature vectors"""
    version: Literal["v1"] = FORMAT_VERSION
    series_id: str
    trends: List[Trend] = Field(default_factory=list)
    features: List[FeatureVector] = Field(default_factory=list)

    @model_validator(mode='after')
    def check_parallel(self):
        if len(self.trends) != len(self.features):
            raise ValueError("trends and features must have equal length")
        return self

    def feature_matrix(self) -> np.ndarray:
        if not self.features:
            return np.zeros((0, FEATURE_DIM))
        return np.array([f.values for f in self.features], dtype=float)

    def __len__(self) -> int:
        return len(self.trends)


UnitFloat = Annotated[float, Field(ge=0.0, le=1.0)]


class DetectionConfig(BaseModel):
    """Knobs of the trend detectors; defaults come from the default constructor"""
    model_config = ConfigDict(frozen=True)

    max_segments: int = Field(default=8, gt=0)
    segment_merge_tolerance: float = Field(default=0.05, ge=0.0)
    # a merge may raise the combined SSE by at most merge_penalty * ln(n) * noise variance
    merge_penalty: float = Field(default=3.0, gt=0.0)
    jump_threshold: float = Field(default=0.15, ge=0.0)
    anomaly_z: float = Field(default=3.0, gt=0.0)
    min_cycle_periods: int = Field(default=2, gt=0)
    cycle_autocorr_threshold: float = Field(default=0.5, gt=0.0, lt=1.0)


class GenConfig(BaseModel):
    """Synthetic corpus settings; value quantities are fractions of the series range"""
    model_config = ConfigDict(frozen=True)

    n_series: int = Field(default=2000, gt=0)
    points_per_series: Tuple[int, int] = (60, 200)
    segments_per_series: Tuple[int, int] = (2, 6)
    slope_range: Tuple[float, float] = (-1.0, 1.0)
    offset_range: Tuple[float, float] = (-0.5, 0.5)
    noise_sigma: float = Field(default=0.02, ge=0.0)
    label_noise: float = Field(default=0.0, ge=0.0, le=0.5)
    outlier_prob: UnitFloat = 0.0
    outlier_scale: float = Field(default=10.0, ge=0.0)
    cycle_prob: UnitFloat = 0.0
    cycle_period: Tuple[float, float] = (8.0, 24.0)
    cycle_amplitude: float = Field(default=0.1, ge=0.0)

    @model_validator(mode='after')
    def check_ranges(self):
        for name in ('points_per_series', 'segments_per_series', 'slope_range',
                     'offset_range', 'cycle_period'):
            low, high = getattr(self, name)
            if low > high:
                raise ValueError(f"{name} bounds must be ordered, got ({low}, {high})")
        if self.points_per_series[0] < 4:
            raise ValueError("points_per_series must allow at least 4 points")
        if self.segments_per_series[0] < 1:
            raise ValueError("segments_per_series must allow at least one segment")
        if self.cycle_period[0] <= 0:
            raise ValueError("cycle_period must be positive")
        return self


class LabeledExample(BaseModel):
    """One trend with its context (all other trends of the series) and its label"""
    series_id: str
    trend_index: int = Field(ge=0)
    feature: FeatureVector
    context: List[FeatureVector] = Field(default_factory=list)
    y: int

    @field_validator('y')
    @classmethod
    def check_binary(cls, v):
        if v not in (0, 1):
            raise ValueError("labels must be 0 or 1")
        return v


class DatasetRecord(BaseModel):
    """One line of a dataset JSON-lines file"""
    version: Literal["v1"] = FORMAT_VERSION
    series_id: str
    points: List[Tuple[float, float]]
    ground_truth_trends: List[Trend] = Field(default_factory=list)
    labels_by_scenario: Dict[str, List[int]] = Field(default_factory=dict)

    def to_series(self) -> TimeSeries:
        return TimeSeries(id=self.series_id, points=self.points)
