"""
Trend detection: bottom-up piecewise-linear segmentation, jumps, cycles,
anomalies and a whole-series statistical summary.

All thresholds of DetectionConfig are compared in normalized units
(time divided by the series span, values divided by the value range);
the emitted Trend params are in series units.
"""
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from statsmodels import robust
from statsmodels.tsa.stattools import acf

from features import featurize_all
from models import (
    DetectionConfig, DetectionError, TimeSeries, Trend, TrendKind, TrendSet,
)

logger = logging.getLogger(__name__)

# residuals / scales at or below these (normalized) count as exactly zero
ZERO_RESIDUAL = 1e-9
ZERO_SCALE = 1e-12
MIN_CYCLE_POINTS = 8
MAX_GAP_RATIO = 3.0
MIN_SEGMENT_POINTS = 4
# lower bound on the normalized noise sigma, above prefix-sum rounding
NOISE_FLOOR = 3e-6
REFINE_EPS = 1e-12


@dataclass(frozen=True)
class Segment:
    """Inclusive point range with its least-squares line in series units"""
    start: int
    end: int
    slope: float
    intercept: float
    r_squared: float

    def value_at(self, t: float, t_start: float) -> float:
        return self.intercept + self.slope * (t - t_start)


def _line_from_sums(n, st, sv, stt, svv, stv) -> Tuple[float, float, float, float]:
    """(slope, intercept at t=0, r_squared, sse) from running sums"""
    sxx = stt - st * st / n
    if sxx <= 1e-12 * max(stt, 1.0):
        raise DetectionError("degenerate abscissa")
    sxy = stv - st * sv / n
    syy = svv - sv * sv / n
    slope = sxy / sxx
    intercept = (sv - slope * st) / n
    sse = max(syy - slope * sxy, 0.0)
    if syy <= 1e-15 * max(svv, 1.0):
        r_squared = 1.0
    else:
        r_squared = min(max(1.0 - sse / syy, 0.0), 1.0)
    return slope, intercept, r_squared, sse


def fit_least_squares(points: Sequence[Tuple[float, float]]) -> Tuple[float, float, float]:
    """
    Ordinary least squares over (t, value) pairs.

    Returns (slope, intercept, r_squared); intercept is the value at t = 0
    and r_squared is 1.0 when the values are constant.
    """
    arr = np.asarray(points, dtype=float)
    if arr.ndim != 2 or len(arr) < 2:
        raise DetectionError("at least 2 points are needed for a line fit")
    # centre the abscissa for numerical stability, then shift the intercept back
    t_mean = arr[:, 0].mean()
    t = arr[:, 0] - t_mean
    v = arr[:, 1]
    slope, intercept, r_squared, _ = _line_from_sums(
        len(arr), t.sum(), v.sum(), (t * t).sum(), (v * v).sum(), (t * v).sum()
    )
    return slope, intercept - slope * t_mean, r_squared


class _PrefixSums:
    """Cumulative sums of normalized t, v, t², v², t·v for O(1) range fits"""

    def __init__(self, tn: np.ndarray, vn: np.ndarray):
        columns = np.stack([np.ones_like(tn), tn, vn, tn * tn, vn * vn, tn * vn], axis=1)
        self.table = np.vstack([np.zeros(6), np.cumsum(columns, axis=0)])

    def fit(self, start: int, end: int) -> Tuple[float, float, float, float]:
        n, st, sv, stt, svv, stv = self.table[end + 1] - self.table[start]
        return _line_from_sums(n, st, sv, stt, svv, stv)

    def sse(self, start: int, end: int) -> float:
        return self.fit(start, end)[3]

    def rms(self, start: int, end: int) -> float:
        return math.sqrt(self.sse(start, end) / (end - start + 1))


def _normalized(series: TimeSeries) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, float, float]:
    t = series.times()
    v = series.values()
    span = t[-1] - t[0]
    value_range = float(v.max() - v.min())
    scale = value_range if value_range > 0 else 1.0
    return t, v, (t - t[0]) / span, (v - v.min()) / scale, span, scale


def noise_scale(vn: np.ndarray) -> float:
    """
    Robust noise sigma of normalized values from second differences; a
    line has none and white noise of sigma s has second differences of
    variance 6 s².
    """
    if len(vn) < 3:
        return 0.0
    return float(robust.mad(np.diff(vn, 2), center=0.0)) / math.sqrt(6.0)


class _Segmenter:
    """Bottom-up merging, short-segment dissolution and boundary refinement over inclusive ranges"""

    def __init__(self, sums: _PrefixSums, n: int, cfg: DetectionConfig, sigma: float):
        self.sums = sums
        self.n = n
        self.cfg = cfg
        self.limit = cfg.merge_penalty * math.log(n) * max(sigma, NOISE_FLOOR) ** 2
        self.bounds = [[i, i + 1] for i in range(0, n - 1, 2)]
        if n % 2 == 1:
            self.bounds[-1][1] = n - 1

    def merge_increase(self, k: int) -> float:
        (a, b), (c, d) = self.bounds[k], self.bounds[k + 1]
        return self.sums.sse(a, d) - self.sums.sse(a, b) - self.sums.sse(c, d)

    def acceptable(self, k: int, increase: float) -> bool:
        return (increase <= self.limit
                and self.sums.rms(self.bounds[k][0], self.bounds[k + 1][1]) <= self.cfg.segment_merge_tolerance)

    def _join(self, k: int):
        self.bounds[k][1] = self.bounds[k + 1][1]
        del self.bounds[k + 1]

    def merge(self, enforce_max: bool):
        cost = [self.merge_increase(k) for k in range(len(self.bounds) - 1)]
        while len(self.bounds) > 1:
            k = int(np.argmin(cost))
            if not self.acceptable(k, cost[k]) and not (enforce_max and len(self.bounds) > self.cfg.max_segments):
                break
            self._join(k)
            del cost[k]
            if k > 0:
                cost[k - 1] = self.merge_increase(k - 1)
            if k < len(cost):
                cost[k] = self.merge_increase(k)

    def dissolve_short(self):
        """Join every segment shorter than MIN_SEGMENT_POINTS into the cheaper neighbour"""
        while len(self.bounds) > 1:
            lengths = [end - start + 1 for start, end in self.bounds]
            k = int(np.argmin(lengths))
            if lengths[k] >= MIN_SEGMENT_POINTS:
                break
            if k == 0:
                self._join(0)
            elif k == len(self.bounds) - 1:
                self._join(k - 1)
            elif self.merge_increase(k - 1) <= self.merge_increase(k):
                self._join(k - 1)
            else:
                self._join(k)

    def _pair_sse(self, k: int, split: int) -> float:
        return self.sums.sse(self.bounds[k][0], split - 1) + self.sums.sse(split, self.bounds[k + 1][1])

    def refine(self):
        """Shift each boundary by one point while that strictly lowers the SSE of its two segments"""
        for _ in range(self.n):
            moved = False
            for k in range(len(self.bounds) - 1):
                split = self.bounds[k + 1][0]
                best, best_sse = split, self._pair_sse(k, split)
                for candidate in (split - 1, split + 1):
                    if candidate - self.bounds[k][0] < MIN_SEGMENT_POINTS:
                        continue
                    if self.bounds[k + 1][1] - candidate + 1 < MIN_SEGMENT_POINTS:
                        continue
                    candidate_sse = self._pair_sse(k, candidate)
                    if candidate_sse < best_sse - REFINE_EPS:
                        best, best_sse = candidate, candidate_sse
                if best != split:
                    self.bounds[k][1] = best - 1
                    self.bounds[k + 1][0] = best
                    moved = True
            if not moved:
                return

    def run(self) -> List[List[int]]:
        self.merge(enforce_max=False)
        self.dissolve_short()
        self.refine()
        self.merge(enforce_max=True)
        self.refine()
        return self.bounds


def _segments(series: TimeSeries, cfg: DetectionConfig) -> List[Segment]:
    n = len(series)
    if n < 4:
        raise DetectionError("series too short to segment")
    t, v, tn, vn, span, scale = _normalized(series)
    sums = _PrefixSums(tn, vn)
    bounds = _Segmenter(sums, n, cfg, noise_scale(vn)).run()

    segments = []
    for start, end in bounds:
        slope_n, intercept_n, r_squared, _ = sums.fit(start, end)
        slope = slope_n * scale / span
        intercept = v.min() + scale * (intercept_n + slope_n * tn[start])
        segments.append(Segment(start, end, float(slope), float(intercept), float(r_squared)))
    logger.debug(f"Series {series.id}: {len(segments)} segments")
    return segments


def _linear_trend(segment: Segment, t: np.ndarray) -> Trend:
    return Trend(
        kind=TrendKind.LINEAR,
        interval=(float(t[segment.start]), float(t[segment.end])),
        point_indices=(segment.start, segment.end),
        params={
            "slope": segment.slope,
            "intercept": segment.intercept,
            "r_squared": segment.r_squared,
        },
    )


def segment_piecewise_linear(series: TimeSeries, cfg: DetectionConfig = None) -> List[Trend]:
    """
    Bottom-up segmentation on adjacent point pairs.

    The neighbouring pair whose merge raises the SSE the least is merged
    while that increase stays within merge_penalty * ln(n) times the robust
    noise variance and the merged RMS residual within
    segment_merge_tolerance. Segments shorter than MIN_SEGMENT_POINTS are
    then joined to a neighbour, every boundary is shifted point by point
    while that lowers the local SSE, merging resumes until at most
    max_segments remain, and boundaries are refined once more.

    The returned Linear trends tile [0, n-1] without overlap.
    """
    cfg = cfg or DetectionConfig()
    t = series.times()
    return [_linear_trend(segment, t) for segment in _segments(series, cfg)]


def _segments_from_trends(trends: Sequence[Trend]) -> List[Segment]:
    return [
        Segment(tr.point_indices[0], tr.point_indices[1], tr.params["slope"],
                tr.params["intercept"], tr.params["r_squared"])
        for tr in trends
    ]


def detect_jumps(segments: Sequence[Trend], series: TimeSeries, cfg: DetectionConfig = None) -> List[Trend]:
    """
    A Jump at each segment boundary where the right segment's fitted start
    differs from the left segment's fitted end by at least jump_threshold
    (fraction of the value range).
    """
    cfg = cfg or DetectionConfig()
    t = series.times()
    v = series.values()
    value_range = float(v.max() - v.min())
    if value_range <= 0:
        return []
    jumps = []
    lines = _segments_from_trends(segments)
    for left, right in zip(lines, lines[1:]):
        left_end = left.value_at(t[left.end], t[left.start])
        right_start = right.intercept
        delta = right_start - left_end
        if abs(delta) / value_range >= cfg.jump_threshold:
            jumps.append(Trend(
                kind=TrendKind.JUMP,
                interval=(float(t[left.start]), float(t[right.end])),
                point_indices=(left.start, right.end),
                params={"delta": float(delta), "t_at": float(t[right.start])},
            ))
    return jumps


def detect_cycles(series: TimeSeries, cfg: DetectionConfig = None) -> List[Trend]:
    """
    Autocorrelation of the globally detrended series; the highest local
    maximum at lag >= 2 within n / min_cycle_periods is reported as a Cycle
    when it reaches cycle_autocorr_threshold.
    """
    cfg = cfg or DetectionConfig()
    n = len(series)
    if n < MIN_CYCLE_POINTS:
        return []
    t = series.times()
    v = series.values()
    gaps = np.diff(t)
    median_gap = float(np.median(gaps))
    if gaps.max() > MAX_GAP_RATIO * median_gap:
        logger.warning(f"Series {series.id}: non-uniform sampling, skipping cycle detection")
        return []

    slope, intercept, _ = fit_least_squares(series.points)
    residual = v - (intercept + slope * t)
    value_range = float(v.max() - v.min())
    if residual.std() <= ZERO_RESIDUAL * max(value_range, 1.0):
        return []

    max_lag = n // cfg.min_cycle_periods
    if max_lag < 3:
        return []
    nlags = min(max_lag + 1, n - 1)
    correlation = acf(residual, nlags=nlags, fft=True)

    best_lag, best_value = None, -np.inf
    for lag in range(2, min(max_lag, nlags - 1) + 1):
        value = correlation[lag]
        if value > correlation[lag - 1] and value >= correlation[lag + 1] and value > best_value:
            best_lag, best_value = lag, value
    if best_lag is None or best_value < cfg.cycle_autocorr_threshold:
        return []

    logger.debug(f"Series {series.id}: cycle at lag {best_lag} (acf {best_value:.3f})")
    return [Trend(
        kind=TrendKind.CYCLE,
        interval=(float(t[0]), float(t[-1])),
        point_indices=(0, n - 1),
        params={
            "period": float(best_lag * median_gap),
            "amplitude": float(math.sqrt(2.0) * residual.std()),
        },
    )]


def detect_anomalies(series: TimeSeries, segments: Sequence[Trend], cfg: DetectionConfig = None) -> List[Trend]:
    """
    Points whose residual from their segment's line has robust z-score
    |z| >= anomaly_z, the scale being 1.4826 x the segment's median absolute
    residual. A zero scale flags every point with a nonzero residual.
    """
    cfg = cfg or DetectionConfig()
    t = series.times()
    v = series.values()
    value_range = float(v.max() - v.min())
    if value_range <= 0:
        return []
    anomalies = []
    for segment in _segments_from_trends(segments):
        idx = np.arange(segment.start, segment.end + 1)
        fitted = segment.intercept + segment.slope * (t[idx] - t[segment.start])
        residual = (v[idx] - fitted) / value_range
        scale = float(robust.mad(residual, center=0.0))
        for offset, r in enumerate(residual):
            if abs(r) <= ZERO_RESIDUAL:
                continue
            z = math.inf if scale <= ZERO_SCALE else r / scale
            if abs(z) >= cfg.anomaly_z:
                i = int(idx[offset])
                anomalies.append(Trend(
                    kind=TrendKind.ANOMALY,
                    interval=(float(t[segment.start]), float(t[segment.end])),
                    point_indices=(i, i),
                    params={"deviation": float(r * value_range), "t_at": float(t[i])},
                ))
    return anomalies


def statistical_trend(series: TimeSeries) -> Trend:
    t = series.times()
    v = series.values()
    return Trend(
        kind=TrendKind.STATISTICAL,
        interval=(float(t[0]), float(t[-1])),
        point_indices=(0, len(series) - 1),
        params={"mean": float(v.mean()), "std": float(v.std())},
    )


def detect_all(series: TimeSeries, cfg: DetectionConfig = None) -> TrendSet:
    """
    Run every detector and featurize the union.

    Trends are ordered by t_start, then kind (Linear, Jump, Cycle, Anomaly,
    Statistical), then t_end. A constant series fails in featurize.
    """
    cfg = cfg or DetectionConfig()
    segments = segment_piecewise_linear(series, cfg)
    trends = list(segments)
    trends += detect_jumps(segments, series, cfg)
    trends += detect_cycles(series, cfg)
    trends += detect_anomalies(series, segments, cfg)
    trends.append(statistical_trend(series))
    trends.sort(key=Trend.sort_key)
    return TrendSet(series_id=series.id, trends=trends, features=featurize_all(trends, series))


def _detect_one(args: Tuple[TimeSeries, DetectionConfig]) -> TrendSet:
    series, cfg = args
    return detect_all(series, cfg)


def detect_many(series_list: Sequence[TimeSeries], cfg: DetectionConfig = None,
                workers: Optional[int] = None) -> List[TrendSet]:
    """detect_all over many series, optionally on a process pool; output order follows input"""
    cfg = cfg or DetectionConfig()
    if not workers or workers <= 1 or len(series_list) < 2:
        return [detect_all(series, cfg) for series in series_list]
    logger.info(f"Detecting trends in {len(series_list)} series with {workers} workers")
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_detect_one, [(series, cfg) for series in series_list], chunksize=16))
