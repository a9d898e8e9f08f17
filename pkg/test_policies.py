"""
Tests for leaf policies, boolean structures and the built-in catalog
"""
import numpy as np
import pytest

from features import KIND_SLOT, feature_index
from models import FEATURE_DIM, FeatureVector, PolicyError, Trend, TrendKind, TrendSet
from policies import (
    Arity, DerivedPolicy, LeafPolicy, builtin_complex, builtin_leaf, catalog_for, conj,
    eval_leaf_hard, eval_leaf_soft, eval_structure, evaluate_structures, exclusive,
    exists_other, forall_other, leaf, make_catalog, negate, other_leaf, pair_leaf,
    validate_structure,
)


def vec(kind=TrendKind.LINEAR, **named):
    values = [0.0] * FEATURE_DIM
    if kind in KIND_SLOT:
        values[KIND_SLOT[kind]] = 1.0
    named.setdefault("t_end_norm", 1.0)
    for name, value in named.items():
        values[feature_index(name)] = value
    return FeatureVector(values=tuple(values))


def trend_set(*vectors):
    """Trend set over synthetic feature vectors; the trends themselves are placeholders"""
    placeholder = Trend(kind=TrendKind.STATISTICAL, interval=(0.0, 1.0), point_indices=(0, 1),
                        params={"mean": 0.0, "std": 0.0})
    return TrendSet(series_id="synthetic", trends=[placeholder] * len(vectors), features=list(vectors))


def column(name, *vectors):
    structure = builtin_complex(name)
    return list(evaluate_structures([structure], trend_set(*vectors), catalog_for([structure]))[:, 0])


def constant_leaf(policy_id, b):
    return LeafPolicy(id=policy_id, arity=Arity.SINGLE, a=(0.0,) * FEATURE_DIM, b=b)


def test_increasing_linear_leaf():
    pi1 = builtin_leaf("π₁")
    assert eval_leaf_hard(pi1, vec(slope_norm=0.2)) == 1
    assert eval_leaf_hard(pi1, vec(slope_norm=-0.2)) == 0
    assert eval_leaf_hard(pi1, vec(TrendKind.JUMP, slope_norm=0.9)) == 0
    assert eval_leaf_hard(pi1, vec(TrendKind.STATISTICAL)) == 0
    assert eval_leaf_hard(pi1, vec(slope_norm=0.0)) == 1
    assert eval_leaf_soft(pi1, vec(slope_norm=0.0)) == 0.5


def test_sharp_increase_threshold():
    pi2 = builtin_leaf("pi2")
    assert eval_leaf_hard(pi2, vec(slope_norm=0.5)) == 1
    assert eval_leaf_hard(pi2, vec(slope_norm=0.1)) == 0


def test_ends_later_pair_leaf():
    pi5 = builtin_leaf("pi5")
    late, early = vec(t_end_norm=0.8, t_start_norm=0.1), vec(t_end_norm=0.5)
    assert eval_leaf_hard(pi5, late, early) == 1
    assert eval_leaf_hard(pi5, early, late) == 0
    assert eval_leaf_hard(pi5, early, early) == 1


def test_soft_values():
    assert eval_leaf_soft(constant_leaf("always", float("inf")), vec()) == 1.0
    assert eval_leaf_soft(constant_leaf("never", float("-inf")), vec()) == 0.0
    assert eval_leaf_soft(constant_leaf("quarter", 0.25), vec()) == pytest.approx(0.8808, abs=1e-4)


def test_arity_mismatch_is_rejected():
    with pytest.raises(PolicyError, match="pairwise"):
        eval_leaf_hard(builtin_leaf("pi5"), vec())
    with pytest.raises(PolicyError, match="single"):
        eval_leaf_hard(builtin_leaf("pi1"), vec(), vec())
    with pytest.raises(PolicyError, match="arity"):
        validate_structure(leaf("pi5"), catalog_for([forall_other("pi5")]))


def test_quantifiers_over_no_other_trends():
    catalog = catalog_for([forall_other("pi5")])
    single = trend_set(vec(t_end_norm=0.2))
    assert eval_structure(forall_other("pi5"), 0, single, catalog) == 1
    assert eval_structure(exists_other("pi5"), 0, single, catalog) == 0
    assert eval_structure(forall_other("pi5"), 0, single, catalog, mode="soft") == 1.0


def test_soft_xor_of_even_odds():
    catalog = make_catalog([constant_leaf("a", 0.0), constant_leaf("b", 0.0)])
    value = eval_structure(exclusive(leaf("a"), leaf("b")), 0, trend_set(vec()), catalog, mode="soft")
    assert value == pytest.approx(0.5)


def test_latest_linear_trend():
    vectors = [
        vec(t_end_norm=0.3),
        vec(t_start_norm=0.3, t_end_norm=0.6),
        vec(t_start_norm=0.6, t_end_norm=1.0),
        vec(TrendKind.JUMP, t_start_norm=0.5, t_end_norm=1.0),
    ]
    assert column("p9", *vectors) == [0.0, 0.0, 1.0, 0.0]


def test_forall_ends_later_selects_one_trend():
    rng = np.random.default_rng(3)
    kinds = [TrendKind.LINEAR, TrendKind.JUMP, TrendKind.STATISTICAL, TrendKind.CYCLE]
    for _ in range(20):
        ends = rng.permutation(np.linspace(0.2, 1.0, 6))
        vectors = [vec(kinds[i % 4], t_end_norm=float(e)) for i, e in enumerate(ends)]
        structure = forall_other("pi5")
        values = evaluate_structures([structure], trend_set(*vectors), catalog_for([structure]))[:, 0]
        assert values.sum() == 1.0
        assert int(np.argmax(values)) == int(np.argmax(ends))


def test_upward_jump_is_not_a_drop():
    assert column("p2", vec(TrendKind.JUMP, slope_norm=0.3)) == [0.0]
    assert column("p2", vec(TrendKind.JUMP, slope_norm=-0.3)) == [1.0]
    assert column("p2", vec(slope_norm=-0.3)) == [0.0]


def test_longest_linear_trend():
    vectors = [
        vec(duration_norm=0.2, t_start_norm=0.0, t_end_norm=0.2),
        vec(duration_norm=0.5, t_start_norm=0.2, t_end_norm=0.7),
        vec(TrendKind.STATISTICAL, duration_norm=1.0, t_start_norm=0.0, t_end_norm=1.0),
    ]
    assert column("p4", *vectors) == [0.0, 1.0, 0.0]


def test_only_jump_of_its_kind():
    assert column("p8", vec(TrendKind.JUMP), vec(), vec(TrendKind.STATISTICAL)) == [1.0, 0.0, 0.0]
    assert column("p8", vec(TrendKind.JUMP), vec(TrendKind.JUMP), vec()) == [0.0, 0.0, 0.0]


def test_custom_derived_policy():
    # some other linear trend ends later
    ends_earlier = DerivedPolicy(id="ends_earlier",
                                 expr=conj(negate(pair_leaf("pi5")), other_leaf("pi4:linear")))
    catalog = make_catalog([builtin_leaf("pi5"), builtin_leaf("pi4:linear")], [ends_earlier])
    structure = exists_other("ends_earlier")
    validate_structure(structure, catalog)
    ts = trend_set(vec(t_end_norm=0.4), vec(TrendKind.JUMP, t_end_norm=0.9), vec(t_end_norm=0.7))
    values = evaluate_structures([structure], ts, catalog)[:, 0]
    assert list(values) == [1.0, 0.0, 0.0]


def test_hard_and_soft_agree_on_leaves():
    rng = np.random.default_rng(11)
    pi1 = builtin_leaf("pi1")
    for slope in rng.uniform(-1.0, 1.0, size=200):
        v = vec(slope_norm=float(slope))
        assert eval_leaf_hard(pi1, v) == int(eval_leaf_soft(pi1, v) >= 0.5)


def test_soft_leaves_sharpen_toward_hard_values():
    sharpnesses = [0.5, 1.0, 2.0, 8.0, 32.0, 128.0]
    for slope in np.linspace(-1.0, 1.0, 41):
        v = vec(slope_norm=float(slope))
        for policy_id in ("pi1", "pi2", "neg_delta"):
            hard = eval_leaf_hard(builtin_leaf(policy_id), v)
            gaps = [abs(eval_leaf_soft(builtin_leaf(policy_id, sharpness=s), v) - hard)
                    for s in sharpnesses]
            assert all(later <= earlier for earlier, later in zip(gaps, gaps[1:]))


def grid_trend_set(rng, n):
    """Random trends whose features never tie and never sit on a leaf threshold"""
    kinds = [TrendKind.LINEAR, TrendKind.JUMP, TrendKind.CYCLE, TrendKind.STATISTICAL]
    signed = np.linspace(-0.95, 0.95, 20)
    unit = np.linspace(0.025, 0.975, 20)
    columns = {
        "slope_norm": rng.choice(signed, n, replace=False),
        "t_start_norm": rng.choice(unit, n, replace=False),
        "t_end_norm": rng.choice(unit, n, replace=False),
        "duration_norm": rng.choice(unit, n, replace=False),
        "magnitude": rng.choice(unit, n, replace=False),
        "mean_norm": rng.choice(unit, n, replace=False),
        "contains_series_max": rng.integers(0, 2, size=n),
    }
    return trend_set(*[
        vec(kinds[int(rng.integers(0, len(kinds)))], **{k: float(c[i]) for k, c in columns.items()})
        for i in range(n)
    ])


def test_sharp_soft_structures_match_hard_structures():
    names = [f"p{i}" for i in range(1, 10)]
    structures = [builtin_complex(name) for name in names]
    sharp = catalog_for(structures, sharpness=1e6)
    rng = np.random.default_rng(12)
    for _ in range(100):
        ts = grid_trend_set(rng, int(rng.integers(1, 7)))
        hard = evaluate_structures(structures, ts, sharp)
        soft = evaluate_structures(structures, ts, sharp, mode="soft")
        assert np.allclose(soft, hard, atol=1e-9)


def test_results_follow_trend_order():
    vectors = [
        vec(duration_norm=0.2, slope_norm=0.4, t_end_norm=0.2),
        vec(TrendKind.JUMP, slope_norm=-0.5, t_start_norm=0.1, t_end_norm=0.4),
        vec(duration_norm=0.6, slope_norm=-0.1, t_start_norm=0.4, t_end_norm=1.0),
        vec(TrendKind.STATISTICAL),
    ]
    structures = [builtin_complex(name) for name in ("p1", "p2", "p4", "p5", "p8", "p9")]
    catalog = catalog_for(structures)
    base = evaluate_structures(structures, trend_set(*vectors), catalog)
    order = [2, 0, 3, 1]
    permuted = evaluate_structures(structures, trend_set(*[vectors[i] for i in order]), catalog)
    assert np.array_equal(permuted, base[order])
    soft = evaluate_structures(structures, trend_set(*vectors), catalog, mode="soft")
    assert np.all((soft >= 0.0) & (soft <= 1.0))


def test_unknown_ids_and_targets():
    with pytest.raises(PolicyError, match="unknown"):
        builtin_leaf("pi99")
    with pytest.raises(PolicyError, match="unknown"):
        builtin_complex("p10")
    with pytest.raises(PolicyError, match="unknown policy"):
        validate_structure(leaf("missing"), make_catalog([builtin_leaf("pi1")]))
    with pytest.raises(PolicyError, match="unknown trend kind"):
        builtin_leaf("pi4:spiral")
    with pytest.raises(PolicyError, match="target index"):
        eval_structure(leaf("pi1"), 3, trend_set(vec()), make_catalog([builtin_leaf("pi1")]))
    with pytest.raises(PolicyError, match="duplicate"):
        make_catalog([builtin_leaf("pi1"), builtin_leaf("pi1")])


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
