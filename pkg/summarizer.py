"""
Template-based rendering of the highest-utility trends
"""
import json
import logging
import string
from pathlib import Path
from typing import Dict, List, Optional

from pydantic import BaseModel, model_validator

import config
from features import featurize
from inference import UtilityModel, rank_trends
from models import DataFormatError, DetectionConfig, TimeSeries, Trend, TrendKind, TrendSummaryError
from trend_detection import detect_all

logger = logging.getLogger(__name__)

SHARP_SLOPE = 0.5

SLOTS = {
    TrendKind.LINEAR: {"start", "end", "direction", "slope_qual"},
    TrendKind.JUMP: {"start", "end", "direction", "delta", "time"},
    TrendKind.CYCLE: {"start", "end", "period"},
    TrendKind.ANOMALY: {"start", "end", "direction", "value", "time"},
    TrendKind.STATISTICAL: {"start", "end", "mean"},
}


class Template(BaseModel):
    kind: TrendKind
    pattern: str

    @model_validator(mode='after')
    def check_slots(self):
        used = {name for _, name, _, _ in string.Formatter().parse(self.pattern) if name}
        unknown = used - SLOTS[self.kind]
        if unknown:
            raise ValueError(f"{self.kind.value} template uses undefined slots {sorted(unknown)}")
        return self


_templates: Optional[Dict[TrendKind, Template]] = None


def load_templates(path: Path = None) -> Dict[TrendKind, Template]:
    """Read the kind -> pattern mapping (UTF-8 JSON)"""
    path = Path(path or config.TEMPLATES_PATH)
    try:
        raw = json.loads(path.read_text(encoding='utf-8'))
    except json.JSONDecodeError as e:
        raise DataFormatError(f"{path}: invalid template file: {e.msg}") from e
    templates = {}
    for kind in TrendKind:
        if kind.value not in raw:
            raise DataFormatError(f"{path}: no template for '{kind.value}' trends")
        templates[kind] = Template(kind=kind, pattern=raw[kind.value])
    return templates


def default_templates() -> Dict[TrendKind, Template]:
    global _templates
    if _templates is None:
        _templates = load_templates()
    return _templates


def format_number(value: float) -> str:
    """Two significant digits, without exponent notation for ordinary magnitudes"""
    rounded = float(f"{value:.2g}")
    if rounded.is_integer() and abs(rounded) < 1e15:
        return str(int(rounded))
    return f"{rounded:g}"


def format_time(t: float) -> str:
    return str(int(t)) if float(t).is_integer() else f"{t:g}"


def render_trend(trend: Trend, series: TimeSeries, templates: Dict[TrendKind, Template] = None) -> str:
    templates = templates or default_templates()
    start, end = trend.interval
    slots = {"start": format_time(start), "end": format_time(end)}
    params = trend.params
    if trend.kind == TrendKind.LINEAR:
        slope_norm = featurize(trend, series).values[7]
        slots["direction"] = "increasing" if slope_norm >= 0 else "decreasing"
        slots["slope_qual"] = "sharply" if abs(slope_norm) >= SHARP_SLOPE else "gradually"
    elif trend.kind == TrendKind.JUMP:
        slots["direction"] = "jump" if params["delta"] >= 0 else "drop"
        slots["delta"] = format_number(abs(params["delta"]))
        slots["time"] = format_time(params["t_at"])
    elif trend.kind == TrendKind.CYCLE:
        slots["period"] = format_number(params["period"])
    elif trend.kind == TrendKind.ANOMALY:
        first = trend.point_indices[0]
        slots["direction"] = "high" if params["deviation"] >= 0 else "low"
        slots["value"] = format_number(series.points[first][1])
        slots["time"] = format_time(params["t_at"])
    else:
        slots["mean"] = format_number(params["mean"])
    return templates[trend.kind].pattern.format(**slots)


def _overlaps(a: Trend, b: Trend) -> bool:
    return a.interval[0] <= b.interval[1] and b.interval[0] <= a.interval[1]


def select_trends(model: UtilityModel, series: TimeSeries, cfg: DetectionConfig = None,
                  k: int = 3, diverse: bool = False) -> List[Trend]:
    """
    Top-k trends by utility, returned in chronological order. With diverse,
    a candidate overlapping an already chosen trend of the same kind is skipped.
    """
    if k <= 0:
        raise TrendSummaryError("k must be positive")
    model.check_layout()
    trend_set = detect_all(series, cfg)
    ranking = rank_trends(model, trend_set)
    chosen: List[Trend] = []
    for index in ranking.indices():
        candidate = trend_set.trends[index]
        if diverse and any(c.kind == candidate.kind and _overlaps(c, candidate) for c in chosen):
            continue
        chosen.append(candidate)
        if len(chosen) == k:
            break
    chosen.sort(key=Trend.sort_key)
    logger.debug(f"Selected {len(chosen)} of {len(trend_set)} trends for {series.id}")
    return chosen


def summarize(series: TimeSeries, model: UtilityModel, cfg: DetectionConfig = None,
              k: int = 3, diverse: bool = False, templates: Dict[TrendKind, Template] = None) -> str:
    """Render the selected trends as sentences joined with ". " """
    sentences = [render_trend(trend, series, templates)
                 for trend in select_trends(model, series, cfg, k, diverse)]
    return ". ".join(s[:1].upper() + s[1:] for s in sentences) + "."
