"""
Experiment scenarios: named bundles of ground-truth complex policies
"""
import logging
from typing import Dict, List, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

from models import PolicyError
from policies import (
    DerivedPolicy, LeafPolicy, NamedStructure, Structure, builtin_complex,
    catalog_for, forall_other, leaf, make_catalog, validate_structure,
)
from utils import normalize_policy_id

logger = logging.getLogger(__name__)


class Scenario(BaseModel):
    """Ground-truth labelling: a trend is positive iff any complex policy holds"""
    model_config = ConfigDict(frozen=True)

    id: str
    experiment: int = Field(ge=1, le=2)
    complex_policies: List[NamedStructure]
    leaf_catalog: List[LeafPolicy]
    derived_policies: List[DerivedPolicy] = Field(default_factory=list)

    @model_validator(mode='after')
    def check_policies(self):
        names = [named.name for named in self.complex_policies]
        if len(set(names)) != len(names):
            raise ValueError(f"scenario '{self.id}' has duplicate complex policy names")
        catalog = self.catalog()
        for named in self.complex_policies:
            validate_structure(named.structure, catalog)
        return self

    def catalog(self) -> Dict[str, object]:
        return make_catalog(self.leaf_catalog, self.derived_policies)

    @property
    def structures(self) -> List[Structure]:
        return [named.structure for named in self.complex_policies]


def build_scenario(scenario_id: str, experiment: int, named: List[Tuple[str, Structure]]) -> Scenario:
    structures = [structure for _, structure in named]
    catalog = catalog_for(structures)
    return Scenario(
        id=scenario_id,
        experiment=experiment,
        complex_policies=[NamedStructure(name=name, structure=s) for name, s in named],
        leaf_catalog=[p for p in catalog.values() if isinstance(p, LeafPolicy)],
        derived_policies=[p for p in catalog.values() if isinstance(p, DerivedPolicy)],
    )


# single-leaf scenarios; pairwise leaves are quantified over the other trends
EXPERIMENT_1 = {
    "exp1-pi1": lambda: leaf("pi1"),
    "exp1-pi2": lambda: leaf("pi2"),
    "exp1-pi3": lambda: leaf("pi3"),
    "exp1-pi4": lambda: leaf("pi4:linear"),
    "exp1-pi5": lambda: forall_other("pi5"),
    "exp1-pi6": lambda: forall_other("pi6:linear"),
    "exp1-pi7": lambda: forall_other("pi7"),
}

EXPERIMENT_2 = {
    "exp2-p1p2": ("p1", "p2"),
    "exp2-p1p2p3": ("p1", "p2", "p3"),
    "exp2-p1p4": ("p1", "p4"),
    "exp2-p5p6": ("p5", "p6"),
    "exp2-p3p5p7": ("p3", "p5", "p7"),
    "exp2-p3p5p8": ("p3", "p5", "p8"),
    "exp2-p4p5p9": ("p4", "p5", "p9"),
}

SCENARIO_IDS = list(EXPERIMENT_1) + list(EXPERIMENT_2)


def get_scenario(scenario_id: str) -> Scenario:
    """Preset scenario by id; Greek spellings such as "exp1-π₁" are accepted"""
    key = normalize_policy_id(scenario_id)
    if key in EXPERIMENT_1:
        return build_scenario(key, 1, [(key.split("-", 1)[1], EXPERIMENT_1[key]())])
    if key in EXPERIMENT_2:
        return build_scenario(key, 2, [(name, builtin_complex(name)) for name in EXPERIMENT_2[key]])
    raise PolicyError(f"unknown scenario '{scenario_id}' (known: {', '.join(SCENARIO_IDS)})")
