"""
Policy engine: linear-separator leaf policies, boolean structures over them
(with quantifiers over the other trends of a series), and the built-in
policy catalog used by the experiment scenarios.

Soft semantics treat children as independent: AND is a product, OR is
1 - prod(1 - p), XOR is p + q - 2pq, NOT is 1 - p, FORALL_OTHER is the
product over other trends and EXISTS_OTHER is 1 - prod(1 - p).
"""
import logging
from enum import Enum
from typing import Dict, List, Mapping, Optional, Protocol, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy.special import expit
from typing_extensions import Literal

from features import KIND_SLOT, feature_index
from models import FEATURE_DIM, FeatureVector, PolicyError, TrendKind, TrendSet
from utils import normalize_policy_id

logger = logging.getLogger(__name__)

DEFAULT_SHARPNESS = 8.0
# margin added when a kind gate is open; dominates any normalized feature difference
KIND_GATE = 4.0
SLOPE_GATE = 16.0
DEFAULT_INCREASE_THRESHOLD = 0.3
DEFAULT_HIGH_VALUE = 0.8


class Arity(str, Enum):
    SINGLE = "single"
    PAIRWISE = "pairwise"


class LeafEvaluator(Protocol):
    """Anything that yields leaf margins; margin >= 0 means the leaf holds"""
    id: str
    arity: Arity
    sharpness: float

    def single_margins(self, matrix: np.ndarray) -> np.ndarray: ...

    def pair_margins(self, matrix: np.ndarray) -> np.ndarray: ...

    def row_margins(self, rows: np.ndarray) -> np.ndarray: ...


def soft_from_margin(margin, sharpness: float = DEFAULT_SHARPNESS):
    """sigmoid(sharpness * margin); infinite margins map to exactly 0 or 1"""
    return expit(sharpness * np.asarray(margin, dtype=float))


class LeafPolicy(BaseModel):
    """
    Linear separator over one trend (a.v + b >= 0) or an ordered pair
    (a.v + b_vec.v' + c >= 0).
    """
    model_config = ConfigDict(frozen=True)

    learner: Literal["linear"] = "linear"
    id: str
    arity: Arity
    a: Tuple[float, ...]
    b: float = 0.0
    b_vec: Optional[Tuple[float, ...]] = None
    c: float = 0.0
    sharpness: float = Field(default=DEFAULT_SHARPNESS, gt=0.0)

    @field_validator('a')
    @classmethod
    def check_a(cls, v):
        if len(v) != FEATURE_DIM:
            raise ValueError(f"weight vector a must have {FEATURE_DIM} entries")
        return v

    @model_validator(mode='after')
    def check_arity(self):
        if self.arity == Arity.PAIRWISE:
            if self.b_vec is None or len(self.b_vec) != FEATURE_DIM:
                raise ValueError(f"pairwise leaf '{self.id}' needs b_vec with {FEATURE_DIM} entries")
        elif self.b_vec is not None:
            raise ValueError(f"single leaf '{self.id}' must not carry b_vec")
        return self

    def margin(self, v: FeatureVector, v_other: Optional[FeatureVector] = None) -> float:
        x = np.asarray(v.values)
        if self.arity == Arity.SINGLE:
            if v_other is not None:
                raise PolicyError(f"leaf '{self.id}' is single but was given a pair")
            return float(np.dot(self.a, x) + self.b)
        if v_other is None:
            raise PolicyError(f"leaf '{self.id}' is pairwise but was given one trend")
        return float(np.dot(self.a, x) + np.dot(self.b_vec, np.asarray(v_other.values)) + self.c)

    def single_margins(self, matrix: np.ndarray) -> np.ndarray:
        return matrix @ np.asarray(self.a) + self.b

    def pair_margins(self, matrix: np.ndarray) -> np.ndarray:
        """[i, j] = margin of the ordered pair (trend i, trend j)"""
        own = matrix @ np.asarray(self.a)
        other = matrix @ np.asarray(self.b_vec)
        return own[:, None] + other[None, :] + self.c

    def row_margins(self, rows: np.ndarray) -> np.ndarray:
        """Margins of design-matrix rows: v, or concatenated (v, v') for pairs"""
        if self.arity == Arity.SINGLE:
            return self.single_margins(rows)
        return rows[:, :FEATURE_DIM] @ np.asarray(self.a) + rows[:, FEATURE_DIM:] @ np.asarray(self.b_vec) + self.c


def eval_leaf_hard(policy: LeafEvaluator, v: FeatureVector, v_other: Optional[FeatureVector] = None) -> int:
    """1 iff the margin is >= 0 (ties resolve to 1)"""
    return int(_leaf_margin(policy, v, v_other) >= 0.0)


def eval_leaf_soft(policy: LeafEvaluator, v: FeatureVector, v_other: Optional[FeatureVector] = None) -> float:
    return float(soft_from_margin(_leaf_margin(policy, v, v_other), policy.sharpness))


def _leaf_margin(policy: LeafEvaluator, v: FeatureVector, v_other: Optional[FeatureVector]) -> float:
    if policy.arity == Arity.SINGLE:
        if v_other is not None:
            raise PolicyError(f"leaf '{policy.id}' is single but was given a pair")
        return float(policy.single_margins(np.array([v.values]))[0])
    if v_other is None:
        raise PolicyError(f"leaf '{policy.id}' is pairwise but was given one trend")
    return float(policy.pair_margins(np.array([v.values, v_other.values]))[0, 1])


StructureOp = Literal["leaf", "not", "and", "or", "xor", "forall_other", "exists_other"]
PairOp = Literal["self", "other", "pair", "not", "and", "or", "xor"]

_CHILD_COUNT = {"not": (1, 1), "and": (2, None), "or": (2, None), "xor": (2, 2)}


def _check_node(op: str, leaf_id: Optional[str], children: list, leaf_ops: Tuple[str, ...]):
    if op in leaf_ops:
        if not leaf_id or children:
            raise ValueError(f"'{op}' node needs a leaf_id and no children")
        return
    if leaf_id is not None:
        raise ValueError(f"'{op}' node must not carry a leaf_id")
    low, high = _CHILD_COUNT[op]
    if len(children) < low or (high is not None and len(children) > high):
        raise ValueError(f"'{op}' node has {len(children)} children")


class Structure(BaseModel):
    """Boolean expression over leaf policies of one target trend"""
    model_config = ConfigDict(frozen=True)

    op: StructureOp
    leaf_id: Optional[str] = None
    children: List["Structure"] = Field(default_factory=list)

    @model_validator(mode='after')
    def check_shape(self):
        _check_node(self.op, self.leaf_id, self.children, ("leaf", "forall_other", "exists_other"))
        return self

    def referenced_ids(self) -> List[str]:
        if self.leaf_id is not None:
            return [self.leaf_id]
        ids = []
        for child in self.children:
            ids.extend(i for i in child.referenced_ids() if i not in ids)
        return ids


class PairExpr(BaseModel):
    """Boolean expression over an ordered pair (target, other)"""
    model_config = ConfigDict(frozen=True)

    op: PairOp
    leaf_id: Optional[str] = None
    children: List["PairExpr"] = Field(default_factory=list)

    @model_validator(mode='after')
    def check_shape(self):
        _check_node(self.op, self.leaf_id, self.children, ("self", "other", "pair"))
        return self

    def referenced_ids(self) -> List[str]:
        if self.leaf_id is not None:
            return [self.leaf_id]
        ids = []
        for child in self.children:
            ids.extend(i for i in child.referenced_ids() if i not in ids)
        return ids


class DerivedPolicy(BaseModel):
    """A pairwise policy defined as a boolean expression rather than a separator"""
    model_config = ConfigDict(frozen=True)

    id: str
    expr: PairExpr
    arity: Arity = Arity.PAIRWISE


class NamedStructure(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str
    structure: Structure


def leaf(leaf_id: str) -> Structure:
    return Structure(op="leaf", leaf_id=leaf_id)


def negate(child):
    return type(child)(op="not", children=[child])


def conj(*children):
    return type(children[0])(op="and", children=list(children))


def disj(*children):
    return type(children[0])(op="or", children=list(children))


def exclusive(left, right):
    return type(left)(op="xor", children=[left, right])


def forall_other(pair_id: str) -> Structure:
    return Structure(op="forall_other", leaf_id=pair_id)


def exists_other(pair_id: str) -> Structure:
    return Structure(op="exists_other", leaf_id=pair_id)


def self_leaf(leaf_id: str) -> PairExpr:
    return PairExpr(op="self", leaf_id=leaf_id)


def other_leaf(leaf_id: str) -> PairExpr:
    return PairExpr(op="other", leaf_id=leaf_id)


def pair_leaf(leaf_id: str) -> PairExpr:
    return PairExpr(op="pair", leaf_id=leaf_id)


Catalog = Mapping[str, Union[LeafEvaluator, DerivedPolicy]]


def make_catalog(leaves: Sequence[LeafEvaluator], derived: Sequence[DerivedPolicy] = ()) -> Dict[str, object]:
    catalog: Dict[str, object] = {}
    for policy in list(leaves) + list(derived):
        if policy.id in catalog:
            raise PolicyError(f"duplicate policy id '{policy.id}'")
        catalog[policy.id] = policy
    return catalog


def _lookup(catalog: Catalog, policy_id: str, arity: Arity, derived_ok: bool = False):
    policy = catalog.get(policy_id)
    if policy is None:
        raise PolicyError(f"unknown policy '{policy_id}'")
    if isinstance(policy, DerivedPolicy) and not derived_ok:
        raise PolicyError(f"derived policy '{policy_id}' used where a leaf is required")
    if policy.arity != arity:
        raise PolicyError(f"policy '{policy_id}' has arity {policy.arity.value}, expected {arity.value}")
    return policy


def validate_pair_expr(expr: PairExpr, catalog: Catalog) -> None:
    if expr.op in ("self", "other"):
        _lookup(catalog, expr.leaf_id, Arity.SINGLE)
    elif expr.op == "pair":
        _lookup(catalog, expr.leaf_id, Arity.PAIRWISE)
    for child in expr.children:
        validate_pair_expr(child, catalog)


def validate_structure(structure: Structure, catalog: Catalog) -> None:
    """Every reference must exist with the arity its position requires"""
    if structure.op == "leaf":
        _lookup(catalog, structure.leaf_id, Arity.SINGLE)
    elif structure.op in ("forall_other", "exists_other"):
        policy = _lookup(catalog, structure.leaf_id, Arity.PAIRWISE, derived_ok=True)
        if isinstance(policy, DerivedPolicy):
            validate_pair_expr(policy.expr, catalog)
    for child in structure.children:
        validate_structure(child, catalog)


def _combine(op: str, values: List[np.ndarray], hard: bool) -> np.ndarray:
    if op == "not":
        return 1.0 - values[0]
    if op == "and":
        result = values[0]
        for value in values[1:]:
            result = result * value
        return result
    if op == "or":
        if hard:
            return np.maximum.reduce(values)
        remaining = 1.0 - values[0]
        for value in values[1:]:
            remaining = remaining * (1.0 - value)
        return 1.0 - remaining
    if op == "xor":
        p, q = values
        return p + q - 2.0 * p * q
    raise PolicyError(f"unknown operator '{op}'")


class _Evaluator:
    """Vectorized evaluation of structures over every trend of one trend set"""

    def __init__(self, catalog: Catalog, matrix: np.ndarray, hard: bool):
        self.catalog = catalog
        self.matrix = matrix
        self.hard = hard
        self._single: Dict[str, np.ndarray] = {}
        self._pair: Dict[str, np.ndarray] = {}

    def _activate(self, margins: np.ndarray, sharpness: float) -> np.ndarray:
        if self.hard:
            return (margins >= 0.0).astype(float)
        return soft_from_margin(margins, sharpness)

    def single(self, policy_id: str) -> np.ndarray:
        if policy_id not in self._single:
            policy = _lookup(self.catalog, policy_id, Arity.SINGLE)
            self._single[policy_id] = self._activate(policy.single_margins(self.matrix), policy.sharpness)
        return self._single[policy_id]

    def pair(self, policy_id: str) -> np.ndarray:
        if policy_id not in self._pair:
            policy = _lookup(self.catalog, policy_id, Arity.PAIRWISE, derived_ok=True)
            if isinstance(policy, DerivedPolicy):
                values = self.pair_expr(policy.expr)
            else:
                values = self._activate(policy.pair_margins(self.matrix), policy.sharpness)
            self._pair[policy_id] = values
        return self._pair[policy_id]

    def pair_expr(self, expr: PairExpr) -> np.ndarray:
        count = len(self.matrix)
        if expr.op == "self":
            return np.broadcast_to(self.single(expr.leaf_id)[:, None], (count, count))
        if expr.op == "other":
            return np.broadcast_to(self.single(expr.leaf_id)[None, :], (count, count))
        if expr.op == "pair":
            return self.pair(expr.leaf_id)
        return _combine(expr.op, [self.pair_expr(child) for child in expr.children], self.hard)

    def structure(self, structure: Structure) -> np.ndarray:
        if structure.op == "leaf":
            return self.single(structure.leaf_id)
        if structure.op in ("forall_other", "exists_other"):
            values = np.array(self.pair(structure.leaf_id), dtype=float)
            # the target itself is not one of the "others"; empty quantifiers are vacuous
            if structure.op == "forall_other":
                np.fill_diagonal(values, 1.0)
                return values.prod(axis=1)
            np.fill_diagonal(values, 0.0)
            return 1.0 - (1.0 - values).prod(axis=1)
        return _combine(structure.op, [self.structure(child) for child in structure.children], self.hard)


def evaluate_structures(structures: Sequence[Structure], trend_set: TrendSet,
                        catalog: Catalog, mode: str = "hard") -> np.ndarray:
    """Matrix [trend, structure] of hard (0/1) or soft values"""
    if mode not in ("hard", "soft"):
        raise PolicyError(f"unknown evaluation mode '{mode}'")
    matrix = trend_set.feature_matrix()
    evaluator = _Evaluator(catalog, matrix, hard=(mode == "hard"))
    columns = [evaluator.structure(structure) for structure in structures]
    if not columns:
        return np.zeros((len(matrix), 0))
    return np.stack(columns, axis=1).astype(float)


def eval_structure(structure: Structure, target_index: int, trend_set: TrendSet,
                   catalog: Catalog, mode: str = "hard") -> float:
    """
    Value of a structure for one target trend. FORALL_OTHER over an empty
    set of other trends is 1 and EXISTS_OTHER is 0.
    """
    if not 0 <= target_index < len(trend_set):
        raise PolicyError(f"target index {target_index} outside trend set of {len(trend_set)}")
    validate_structure(structure, catalog)
    value = evaluate_structures([structure], trend_set, catalog, mode)[target_index, 0]
    return int(value) if mode == "hard" else float(value)


def _unit(index: int, weight: float = 1.0) -> np.ndarray:
    vector = np.zeros(FEATURE_DIM)
    vector[index] = weight
    return vector


def _kind_gate(kind: TrendKind, gate: float) -> Tuple[np.ndarray, float]:
    """Linear term adding gate * (1 - is_kind(x)) to a margin"""
    if kind == TrendKind.STATISTICAL:
        weights = np.zeros(FEATURE_DIM)
        weights[list(KIND_SLOT.values())] = gate
        return weights, 0.0
    return _unit(KIND_SLOT[kind], -gate), gate


def _kind_test(kind: TrendKind) -> Tuple[np.ndarray, float]:
    """is_kind(x) - 0.5 as (weights, bias)"""
    if kind == TrendKind.STATISTICAL:
        weights = np.zeros(FEATURE_DIM)
        weights[list(KIND_SLOT.values())] = -1.0
        return weights, 0.5
    return _unit(KIND_SLOT[kind]), -0.5


def _parse_kind(name: str) -> TrendKind:
    try:
        return TrendKind(name)
    except ValueError:
        raise PolicyError(f"unknown trend kind '{name}'") from None


def _single(policy_id: str, a: np.ndarray, b: float, sharpness: float) -> LeafPolicy:
    return LeafPolicy(id=policy_id, arity=Arity.SINGLE, a=tuple(float(x) for x in a),
                      b=float(b), sharpness=sharpness)


def _pairwise(policy_id: str, a: np.ndarray, b_vec: np.ndarray, c: float,
              peer: Optional[TrendKind], sharpness: float, gate: float = KIND_GATE) -> LeafPolicy:
    if peer is not None:
        gate_weights, gate_bias = _kind_gate(peer, gate)
        b_vec = b_vec + gate_weights
        c = c + gate_bias
    return LeafPolicy(id=policy_id, arity=Arity.PAIRWISE, a=tuple(float(x) for x in a),
                      b_vec=tuple(float(x) for x in b_vec), c=float(c), sharpness=sharpness)


def builtin_leaf(policy_id: str, theta: float = DEFAULT_INCREASE_THRESHOLD,
                 high_value: float = DEFAULT_HIGH_VALUE,
                 sharpness: float = DEFAULT_SHARPNESS) -> Union[LeafPolicy, DerivedPolicy]:
    """
    Built-in leaf by id. Pairwise ids accept an optional peer-kind suffix
    ("pi6:linear") restricting the comparison to peers of that kind; pi4
    takes the kind it tests for ("pi4:jump").
    """
    policy_id = normalize_policy_id(policy_id)
    name, _, suffix = policy_id.partition(":")
    peer = _parse_kind(suffix) if suffix else None
    slope = feature_index("slope_norm")
    linear_gate, linear_bias = _kind_gate(TrendKind.LINEAR, KIND_GATE)

    if name == "pi1":
        return _single(policy_id, _unit(slope) - linear_gate, -linear_bias, sharpness)
    if name == "pi2":
        return _single(policy_id, _unit(slope) - linear_gate, -linear_bias - theta, sharpness)
    if name == "pi3":
        return _single(policy_id, _unit(feature_index("contains_series_max")), -0.5, sharpness)
    if name == "pi4":
        weights, bias = _kind_test(peer or TrendKind.LINEAR)
        return _single(policy_id, weights, bias, sharpness)
    if name in ("pi5", "pi6", "pi7", "slope_cmp"):
        feature, default_peer, gate = {
            "pi5": ("t_end_norm", None, KIND_GATE),
            "pi6": ("duration_norm", None, KIND_GATE),
            "pi7": ("magnitude", TrendKind.JUMP, KIND_GATE),
            "slope_cmp": ("slope_norm", TrendKind.LINEAR, SLOPE_GATE),
        }[name]
        column = feature_index(feature)
        return _pairwise(policy_id, _unit(column), -_unit(column), 0.0,
                         peer or default_peer, sharpness, gate)
    if name == "pi8":
        kinds = list(TrendKind)
        expr = disj(*[
            exclusive(self_leaf(f"pi4:{kind.value}"), other_leaf(f"pi4:{kind.value}"))
            for kind in kinds
        ])
        return DerivedPolicy(id=policy_id, expr=expr)
    if name == "neg_delta":
        return _single(policy_id, -_unit(slope), 0.0, sharpness)
    if name == "high_value":
        return _single(policy_id, _unit(feature_index("mean_norm")), -high_value, sharpness)
    raise PolicyError(f"unknown built-in leaf '{policy_id}'")


BUILTIN_COMPLEX = {
    "p1": lambda: conj(leaf("pi4:linear"), leaf("pi1")),
    "p2": lambda: conj(leaf("pi4:jump"), leaf("neg_delta")),
    "p3": lambda: conj(leaf("pi3"), leaf("high_value")),
    "p4": lambda: conj(leaf("pi4:linear"), forall_other("pi6:linear")),
    "p5": lambda: conj(leaf("pi4:linear"), forall_other("slope_cmp:linear")),
    "p6": lambda: conj(leaf("pi4:jump"), forall_other("pi7")),
    "p7": lambda: conj(leaf("pi4:jump"), forall_other("pi5:jump")),
    "p8": lambda: conj(leaf("pi4:jump"), forall_other("pi8")),
    "p9": lambda: conj(leaf("pi4:linear"), forall_other("pi5:linear")),
}


def builtin_complex(policy_id: str, catalog: Optional[Catalog] = None) -> Structure:
    """
    Built-in complex policy p1..p9. When a catalog is given the structure is
    validated against it.
    """
    key = normalize_policy_id(policy_id)
    if key not in BUILTIN_COMPLEX:
        raise PolicyError(f"unknown complex policy '{policy_id}'")
    structure = BUILTIN_COMPLEX[key]()
    if catalog is not None:
        validate_structure(structure, catalog)
    return structure


def catalog_for(structures: Sequence[Structure], **leaf_options) -> Dict[str, object]:
    """Built-in catalog holding every policy the structures reference, transitively"""
    catalog: Dict[str, object] = {}
    pending = [i for s in structures for i in s.referenced_ids()]
    while pending:
        policy_id = pending.pop(0)
        if policy_id in catalog:
            continue
        policy = builtin_leaf(policy_id, **leaf_options)
        catalog[policy_id] = policy
        if isinstance(policy, DerivedPolicy):
            pending.extend(policy.expr.referenced_ids())
    return catalog
