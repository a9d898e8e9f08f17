"""
Tests for template rendering and summary generation
"""
import json
import math

import pytest
from pydantic import ValidationError

from inference import UtilityModel
from learning import LogisticModel, UtilityHead
from models import DataFormatError, TimeSeries, Trend, TrendKind, TrendSummaryError
from policies import NamedStructure, builtin_leaf, leaf
from summarizer import Template, format_number, load_templates, render_trend, select_trends, summarize


def tenths():
    return TimeSeries(id="tenths", points=[(float(t), t / 10.0) for t in range(11)])


def wavy_decline():
    return TimeSeries(id="wavy", points=[
        (float(t), -t / 200.0 + 0.03 * math.sin(2 * math.pi * t / 50.0)) for t in range(200)
    ])


def kind_model():
    """Utility is high for linear and cycle trends alike"""
    kinds = ["pi4:linear", "pi4:cycle"]
    return UtilityModel(
        leaf_policies=[builtin_leaf(k) for k in kinds],
        structures=[NamedStructure(name=k, structure=leaf(k)) for k in kinds],
        head=UtilityHead(kind="logistic", logistic=LogisticModel(
            weights=[6.0, 6.0, -3.0], feature_mean=[0.0, 0.0], feature_scale=[1.0, 1.0])),
    )


def test_linear_sentence():
    trend = Trend(kind=TrendKind.LINEAR, interval=(0.0, 10.0), point_indices=(0, 10),
                  params={"slope": 0.1, "intercept": 0.0, "r_squared": 1.0})
    assert render_trend(trend, tenths()) == "a sharply increasing trend from 0 to 10"
    gentle = trend.model_copy(update={"params": {"slope": -0.02, "intercept": 1.0, "r_squared": 1.0}})
    assert render_trend(gentle, tenths()) == "a gradually decreasing trend from 0 to 10"


def test_other_kind_sentences():
    series = tenths()
    drop = Trend(kind=TrendKind.JUMP, interval=(0.0, 10.0), point_indices=(0, 10),
                 params={"delta": -0.5, "t_at": 5.0})
    assert render_trend(drop, series) == "a drop of 0.5 at 5"
    cycle = Trend(kind=TrendKind.CYCLE, interval=(0.0, 10.0), point_indices=(0, 10),
                  params={"period": 12.0, "amplitude": 0.1})
    assert "period of 12" in render_trend(cycle, series)
    spike = Trend(kind=TrendKind.ANOMALY, interval=(0.0, 10.0), point_indices=(5, 5),
                  params={"deviation": 0.3, "t_at": 5.0})
    assert render_trend(spike, series) == "an unusually high value of 0.5 at 5"


def test_number_formatting():
    assert format_number(12.0) == "12"
    assert format_number(0.456) == "0.46"
    assert format_number(1234.0) == "1200"
    assert format_number(-0.5) == "-0.5"


def test_summary_mentions_decline_and_cycle():
    text = summarize(wavy_decline(), kind_model(), k=2)
    assert "decreasing" in text
    assert "cycle" in text
    assert text.endswith(".")
    assert len(text.split(". ")) == 2
    assert text[0].isupper()


def test_selected_trends_are_chronological():
    chosen = select_trends(kind_model(), wavy_decline(), k=3)
    assert [t.sort_key() for t in chosen] == sorted(t.sort_key() for t in chosen)
    assert {t.kind for t in chosen} >= {TrendKind.LINEAR, TrendKind.CYCLE}


def test_k_must_be_positive():
    with pytest.raises(TrendSummaryError, match="k must be positive"):
        summarize(wavy_decline(), kind_model(), k=0)


def test_templates_are_checked(tmp_path):
    with pytest.raises(ValidationError):
        Template(kind=TrendKind.JUMP, pattern="a {direction} at {bogus}")

    partial = tmp_path / "templates.json"
    partial.write_text(json.dumps({"linear": "a {direction} trend"}), encoding="utf-8")
    with pytest.raises(DataFormatError, match="no template"):
        load_templates(partial)

    custom = {kind: Template(kind=kind, pattern="{start}-{end}") for kind in TrendKind}
    trend = Trend(kind=TrendKind.STATISTICAL, interval=(0.0, 10.0), point_indices=(0, 10),
                  params={"mean": 0.5, "std": 0.3})
    assert render_trend(trend, tenths(), custom) == "0-10"


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
