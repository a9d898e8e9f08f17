"""
Utility inference and trend ranking
"""
import itertools
import logging
from typing import Any, Dict, List, Sequence, Union

import numpy as np
from pydantic import BaseModel, Field, model_validator
from typing_extensions import Annotated, Literal

from features import FEATURE_LAYOUT_ID
from learning import NaiveBayesLeaf, UtilityHead
from models import FORMAT_VERSION, InferenceError, TrendSet
from policies import (
    DerivedPolicy, LeafPolicy, NamedStructure, evaluate_structures, make_catalog,
    validate_structure,
)

logger = logging.getLogger(__name__)

MAX_EXACT_POLICIES = 16

LearnedLeaf = Annotated[Union[LeafPolicy, NaiveBayesLeaf], Field(discriminator="learner")]


class UtilityModel(BaseModel):
    """Learned leaves, the complex policy structures over them and the utility head"""
    version: Literal["v1"] = FORMAT_VERSION
    feature_layout_id: str = FEATURE_LAYOUT_ID
    leaf_policies: List[LearnedLeaf]
    derived_policies: List[DerivedPolicy] = Field(default_factory=list)
    structures: List[NamedStructure]
    head: UtilityHead
    training_metadata: Dict[str, Any] = Field(default_factory=dict)

    @model_validator(mode='after')
    def check_model(self):
        catalog = self.catalog()
        for named in self.structures:
            validate_structure(named.structure, catalog)
        if self.head.kind == "logistic" and self.head.logistic.dim != len(self.structures):
            raise ValueError("utility head dimension must equal the number of structures")
        return self

    def catalog(self) -> Dict[str, object]:
        return make_catalog(self.leaf_policies, self.derived_policies)

    def check_layout(self) -> None:
        if self.feature_layout_id != FEATURE_LAYOUT_ID:
            raise InferenceError(
                f"model feature layout '{self.feature_layout_id}' does not match '{FEATURE_LAYOUT_ID}'"
            )


class RankedTrend(BaseModel):
    trend_index: int
    utility: float


class RankedTrends(BaseModel):
    series_id: str
    entries: List[RankedTrend]

    def indices(self) -> List[int]:
        return [entry.trend_index for entry in self.entries]


def complex_values(model: UtilityModel, trend_set: TrendSet, mode: str = "soft") -> np.ndarray:
    """Matrix [trend, complex policy] of hard or soft values under the learned leaves"""
    return evaluate_structures([n.structure for n in model.structures], trend_set, model.catalog(), mode)


def _clamp(value: float) -> float:
    return float(min(max(value, 0.0), 1.0))


def utility_from_probabilities(head: UtilityHead, probabilities: Sequence[float]) -> float:
    """
    Single-assignment approximation: the head evaluated at the most likely
    assignment q (p >= 0.5 -> 1) times that assignment's probability.
    """
    p = np.asarray(probabilities, dtype=float)
    q = (p >= 0.5).astype(float)
    mass = float(np.prod(np.maximum(p, 1.0 - p)))
    return _clamp(head.probability(q) * mass)


def exact_utility_from_probabilities(head: UtilityHead, probabilities: Sequence[float],
                                     max_policies: int = MAX_EXACT_POLICIES) -> float:
    """Sum of head(q) * P(q) over all 2^k' assignments q"""
    p = np.asarray(probabilities, dtype=float)
    if len(p) > max_policies:
        raise InferenceError("enumeration bound exceeded")
    total = 0.0
    for assignment in itertools.product((0.0, 1.0), repeat=len(p)):
        q = np.array(assignment)
        weight = float(np.prod(np.where(q == 1.0, p, 1.0 - p)))
        if weight == 0.0:
            continue
        total += head.probability(q) * weight
    return _clamp(total)


def infer_utility(model: UtilityModel, target_index: int, trend_set: TrendSet) -> float:
    _check_target(target_index, trend_set)
    values = complex_values(model, trend_set)[target_index]
    return utility_from_probabilities(model.head, values)


def infer_utility_exact(model: UtilityModel, target_index: int, trend_set: TrendSet,
                        max_policies: int = MAX_EXACT_POLICIES) -> float:
    _check_target(target_index, trend_set)
    if len(model.structures) > max_policies:
        raise InferenceError("enumeration bound exceeded")
    values = complex_values(model, trend_set)[target_index]
    return exact_utility_from_probabilities(model.head, values, max_policies)


def _check_target(target_index: int, trend_set: TrendSet) -> None:
    if not 0 <= target_index < len(trend_set):
        raise InferenceError(f"target index {target_index} outside trend set of {len(trend_set)}")


def trend_utilities(model: UtilityModel, trend_set: TrendSet, exact: bool = False) -> np.ndarray:
    """Utility of every trend of a set, sharing one structure evaluation"""
    values = complex_values(model, trend_set)
    infer = exact_utility_from_probabilities if exact else utility_from_probabilities
    return np.array([infer(model.head, row) for row in values])


def rank_trends(model: UtilityModel, trend_set: TrendSet, exact: bool = False) -> RankedTrends:
    """Trends by descending utility; ties keep ascending trend index"""
    utilities = trend_utilities(model, trend_set, exact)
    order = sorted(range(len(utilities)), key=lambda i: (-utilities[i], i))
    return RankedTrends(
        series_id=trend_set.series_id,
        entries=[RankedTrend(trend_index=i, utility=float(utilities[i])) for i in order],
    )
