"""
Synthetic corpus: randomly segmented series with one linear trend per span,
inter-segment offsets, Gaussian noise, and ground-truth labels from scenario
policies.

Every series draws from its own PCG64 stream seeded with
blake2b("<master seed>:<series index>"), so corpora do not depend on
generation order or on the number of worker processes.
"""
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from features import featurize
from models import (
    DatasetRecord, DetectionConfig, GenConfig, LabeledExample, TimeSeries, Trend,
    TrendKind, TrendSet,
)
from policies import evaluate_structures
from scenarios import Scenario
from utils import derive_seed, make_rng

logger = logging.getLogger(__name__)

MIN_SEGMENT_POINTS = 5

Dataset = List[Tuple[TimeSeries, TrendSet]]


def _segment_lengths(rng: np.random.Generator, n: int, k: int) -> List[int]:
    """k lengths >= MIN_SEGMENT_POINTS summing to n, with uniform random breakpoints"""
    free = n - k * MIN_SEGMENT_POINTS
    cuts = np.sort(rng.integers(0, free + 1, size=k - 1))
    edges = np.concatenate([[0], cuts, [free]])
    return [int(extra) + MIN_SEGMENT_POINTS for extra in np.diff(edges)]


def generate_series(seed: int, cfg: GenConfig = None, series_id: Optional[str] = None) -> Tuple[TimeSeries, TrendSet]:
    """
    One synthetic series and its ground-truth trends.

    Slopes are drawn in value per normalized time (the full span) and offsets
    in base units; noise sigma, outliers and cycles are scaled by the value
    range of the clean piecewise-linear signal.
    """
    cfg = cfg or GenConfig()
    rng = make_rng(seed)
    series_id = series_id or f"series-{seed}"

    n = int(rng.integers(cfg.points_per_series[0], cfg.points_per_series[1], endpoint=True))
    k = int(rng.integers(cfg.segments_per_series[0], cfg.segments_per_series[1], endpoint=True))
    k = max(1, min(k, n // MIN_SEGMENT_POINTS))
    lengths = _segment_lengths(rng, n, k)

    t = np.arange(n, dtype=float)
    span = float(n - 1)
    clean = np.empty(n)
    starts = np.cumsum([0] + lengths[:-1])
    slopes = []
    offsets = []
    level = 0.0
    for j, (start, length) in enumerate(zip(starts, lengths)):
        slope = float(rng.uniform(*cfg.slope_range))
        if j > 0:
            previous_end = clean[start - 1]
            offset = float(rng.uniform(*cfg.offset_range))
            level = previous_end + offset
            offsets.append(offset)
        idx = np.arange(start, start + length)
        clean[idx] = level + slope * (t[idx] - t[start]) / span
        slopes.append(slope)

    clean_range = float(clean.max() - clean.min()) or 1.0
    values = clean.copy()

    cycle = None
    if rng.random() < cfg.cycle_prob:
        period = float(rng.uniform(*cfg.cycle_period))
        phase = float(rng.uniform(0.0, 2.0 * math.pi))
        amplitude = cfg.cycle_amplitude * clean_range
        values = values + amplitude * np.sin(2.0 * math.pi * t / period + phase)
        cycle = (period, amplitude)

    noise_scale = cfg.noise_sigma * clean_range
    if noise_scale > 0:
        values = values + rng.normal(0.0, noise_scale, size=n)

    outlier = None
    if rng.random() < cfg.outlier_prob and noise_scale > 0:
        index = int(rng.integers(0, n))
        deviation = float(rng.choice([-1.0, 1.0])) * cfg.outlier_scale * noise_scale
        values[index] += deviation
        outlier = (index, deviation)

    series = TimeSeries(id=series_id, points=[(float(a), float(b)) for a, b in zip(t, values)])
    # jumps are judged against the range of the emitted values, as the detector sees them
    series_range = float(values.max() - values.min()) or 1.0
    jump_threshold = DetectionConfig().jump_threshold

    trends: List[Trend] = []
    for j, (start, length) in enumerate(zip(starts, lengths)):
        end = start + length - 1
        trends.append(Trend(
            kind=TrendKind.LINEAR,
            interval=(float(t[start]), float(t[end])),
            point_indices=(int(start), int(end)),
            params={"slope": slopes[j] / span, "intercept": float(clean[start]), "r_squared": 1.0},
        ))
        if j > 0 and abs(offsets[j - 1]) / series_range >= jump_threshold:
            left_start = starts[j - 1]
            trends.append(Trend(
                kind=TrendKind.JUMP,
                interval=(float(t[left_start]), float(t[end])),
                point_indices=(int(left_start), int(end)),
                params={"delta": offsets[j - 1], "t_at": float(t[start])},
            ))
    if cycle is not None:
        trends.append(Trend(
            kind=TrendKind.CYCLE,
            interval=(float(t[0]), float(t[-1])),
            point_indices=(0, n - 1),
            params={"period": cycle[0], "amplitude": cycle[1]},
        ))
    if outlier is not None:
        index, deviation = outlier
        segment = int(np.searchsorted(starts, index, side='right')) - 1
        first = int(starts[segment])
        last = first + lengths[segment] - 1
        trends.append(Trend(
            kind=TrendKind.ANOMALY,
            interval=(float(t[first]), float(t[last])),
            point_indices=(index, index),
            params={"deviation": deviation, "t_at": float(t[index])},
        ))
    trends.sort(key=Trend.sort_key)

    features = [featurize(trend, series) for trend in trends]
    logger.debug(f"Generated {series_id}: {n} points, {k} segments, {len(trends)} trends")
    return series, TrendSet(series_id=series_id, trends=trends, features=features)


def _generate_indexed(args: Tuple[int, int, GenConfig]) -> Tuple[TimeSeries, TrendSet]:
    seed, index, cfg = args
    return generate_series(derive_seed(seed, index), cfg, series_id=f"s{index:05d}")


def generate_dataset(seed: int, cfg: GenConfig = None, workers: int = 1) -> Dataset:
    """n_series series with per-index derived seeds; output order follows the index"""
    cfg = cfg or GenConfig()
    jobs = [(seed, index, cfg) for index in range(cfg.n_series)]
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            dataset = list(pool.map(_generate_indexed, jobs, chunksize=32))
    else:
        dataset = [_generate_indexed(job) for job in jobs]
    logger.info(f"Generated {len(dataset)} series (seed {seed})")
    return dataset


def gold_labels(trend_set: TrendSet, scenario: Scenario) -> np.ndarray:
    """Disjunction of the scenario's complex policies, per trend (hard)"""
    values = evaluate_structures(scenario.structures, trend_set, scenario.catalog(), mode="hard")
    if values.shape[1] == 0:
        return np.zeros(len(trend_set), dtype=int)
    return values.max(axis=1).astype(int)


def label_dataset(dataset: Sequence[Tuple[TimeSeries, TrendSet]], scenario: Scenario,
                  label_noise: float = 0.0, seed: int = 0) -> List[LabeledExample]:
    """
    One LabeledExample per trend of every trend set, labelled by the
    scenario's ground truth; each label is flipped with probability
    label_noise from a stream derived from (seed, scenario id).
    """
    if not 0.0 <= label_noise <= 0.5:
        raise ValueError("label_noise must lie in [0, 0.5]")
    flips = make_rng(derive_seed(seed, "labels", scenario.id))
    examples = []
    for series, trend_set in dataset:
        labels = gold_labels(trend_set, scenario)
        draws = flips.random(len(trend_set))
        for index, feature in enumerate(trend_set.features):
            y = int(labels[index])
            if draws[index] < label_noise:
                y = 1 - y
            examples.append(LabeledExample(
                series_id=trend_set.series_id,
                trend_index=index,
                feature=feature,
                context=trend_set.features[:index] + trend_set.features[index + 1:],
                y=y,
            ))
    logger.info(f"Labelled {len(examples)} trends for scenario {scenario.id} "
                f"({sum(e.y for e in examples)} positive)")
    return examples


def to_record(series: TimeSeries, ground_truth: TrendSet,
              labels_by_scenario: Optional[Dict[str, List[int]]] = None) -> DatasetRecord:
    return DatasetRecord(
        series_id=series.id,
        points=series.points,
        ground_truth_trends=ground_truth.trends,
        labels_by_scenario=labels_by_scenario or {},
    )


def scenario_labels(trend_set: TrendSet, scenarios: Sequence[Scenario]) -> Dict[str, List[int]]:
    """Noise-free gold labels of one trend set under each scenario, keyed by scenario id"""
    return {scenario.id: gold_labels(trend_set, scenario).tolist() for scenario in scenarios}
