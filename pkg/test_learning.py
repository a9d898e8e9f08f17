"""
Tests for logistic regression, naive Bayes, leaf training and structure learning
"""
import itertools
import math

import numpy as np
import pytest
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from features import feature_index
from models import FEATURE_DIM, FeatureVector, GenConfig, LabeledExample, TrainingError
from policies import Arity, builtin_leaf, eval_leaf_hard
from learning import (
    LogisticHyper, LogisticModel, chow_liu, example_rows, greedy_structure_search,
    logistic_gradient, logistic_loss, mutual_information, train_leaf_policy, train_logistic,
    train_naive_bayes, train_utility_head,
)
from scenarios import get_scenario
from synthetic_data import generate_dataset, label_dataset


def random_model(rng, dim, l2=1e-3):
    return LogisticModel(
        weights=rng.normal(size=dim + 1).tolist(),
        feature_mean=rng.normal(size=dim).tolist(),
        feature_scale=rng.uniform(0.5, 2.0, size=dim).tolist(),
        hyper=LogisticHyper(l2=l2),
    )


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    h = 1e-6
    for _ in range(100):
        model = random_model(rng, 3)
        x = rng.normal(size=(20, 3))
        y = rng.integers(0, 2, size=20)
        grad = logistic_gradient(model, x, y)
        for k in range(len(model.weights)):
            up, down = list(model.weights), list(model.weights)
            up[k] += h
            down[k] -= h
            numeric = (logistic_loss(model.model_copy(update={"weights": up}), x, y)
                       - logistic_loss(model.model_copy(update={"weights": down}), x, y)) / (2 * h)
            assert grad[k] == pytest.approx(numeric, rel=1e-5, abs=1e-6)


def test_symmetric_batch_has_zero_gradient():
    model = LogisticModel.zeros(1)
    grad = logistic_gradient(model, [[1.0], [-1.0], [1.0], [-1.0]], [1, 0, 0, 1])
    assert np.allclose(grad, 0.0)


def test_gradient_norm_is_bounded_by_inputs():
    rng = np.random.default_rng(1)
    for _ in range(50):
        model = random_model(rng, 4, l2=0.0)
        x = rng.normal(size=(30, 4))
        grad = logistic_gradient(model, x, rng.integers(0, 2, size=30))
        bound = np.linalg.norm(model.standardize(x), axis=1).max()
        assert np.linalg.norm(grad[:-1]) <= bound + 1e-12
        assert abs(grad[-1]) <= 1.0


def test_training_rejects_single_class():
    with pytest.raises(TrainingError, match="degenerate labels"):
        train_logistic([[0.0], [1.0], [2.0]], [1, 1, 1])
    with pytest.raises(TrainingError, match="degenerate labels"):
        train_naive_bayes([[0.0], [1.0]], [0, 0])


def test_logistic_separates_a_threshold():
    x = np.linspace(-1.0, 1.0, 200)[:, None]
    y = (x[:, 0] > 0.1).astype(int)
    model = train_logistic(x, y, LogisticHyper(epochs=2000, learning_rate=0.5))
    accuracy = np.mean((model.predict_proba(x) >= 0.5) == y)
    assert accuracy >= 0.97
    assert model.final_loss < logistic_loss(LogisticModel.zeros(1), x, y)


def test_linear_model_cannot_fit_xor():
    corners = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])
    x = np.repeat(corners, 50, axis=0)
    y = np.logical_xor(x[:, 0], x[:, 1]).astype(int)
    for solver in ("gd", "lbfgs"):
        model = train_logistic(x, y, LogisticHyper(solver=solver, epochs=2000))
        assert np.mean((model.predict_proba(x) >= 0.5) == y) <= 0.75


def test_lbfgs_converges_to_a_loss_no_worse_than_descent():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(300, 4))
    y = (x @ np.array([1.0, -2.0, 0.5, 0.0]) + rng.normal(0.0, 1.0, size=300) > 0).astype(int)
    descent = train_logistic(x, y, LogisticHyper(epochs=200))
    lbfgs = train_logistic(x, y, LogisticHyper(solver="lbfgs", epochs=5000))
    assert lbfgs.converged
    assert lbfgs.iterations < 5000
    assert lbfgs.final_loss <= descent.final_loss + 1e-9
    assert descent.iterations == 200


def test_naive_bayes_recovers_bernoulli_parameters():
    rng = np.random.default_rng(2)
    y = rng.integers(0, 2, size=20000)
    x = np.where(y[:, None] == 1, rng.random((20000, 2)) < [0.8, 0.3], rng.random((20000, 2)) < [0.2, 0.6])
    model = train_naive_bayes(x.astype(float), y)
    assert model.feature_kinds == ["bernoulli", "bernoulli"]
    assert model.bernoulli_p[1] == pytest.approx([0.8, 0.3], abs=0.02)
    assert model.bernoulli_p[0] == pytest.approx([0.2, 0.6], abs=0.02)
    assert model.class_priors[1] == pytest.approx(0.5, abs=0.02)


def test_naive_bayes_gaussian_columns():
    rng = np.random.default_rng(4)
    y = np.repeat([0, 1], 500)
    x = np.where(y == 1, rng.normal(2.0, 1.0, 1000), rng.normal(-2.0, 1.0, 1000))[:, None]
    model = train_naive_bayes(x, y)
    assert model.feature_kinds == ["gaussian"]
    assert model.means[1][0] == pytest.approx(2.0, abs=0.15)
    assert model.probability([3.0]) > 0.99
    assert model.probability([-3.0]) < 0.01


def end_vector(t_end):
    values = [0.0] * FEATURE_DIM
    values[0] = 1.0
    values[feature_index("t_end_norm")] = t_end
    values[feature_index("duration_norm")] = t_end
    return FeatureVector(values=tuple(values))


def test_learned_ends_later_leaf_has_expected_signs():
    rng = np.random.default_rng(5)
    examples = []
    for _ in range(600):
        own, other = rng.uniform(0.05, 1.0, size=2)
        examples.append(LabeledExample(series_id="s", trend_index=0, feature=end_vector(float(own)),
                                       context=[end_vector(float(other))], y=int(own >= other)))
    column = feature_index("t_end_norm")
    policy = train_leaf_policy(examples, Arity.PAIRWISE, "pi5", feature_indices=[column],
                               hyper=LogisticHyper(epochs=1500))
    assert policy.a[column] > 0.0
    assert policy.b_vec[column] < 0.0
    assert all(w == 0.0 for i, w in enumerate(policy.a) if i != column)
    agreement = np.mean([eval_leaf_hard(policy, e.feature, e.context[0]) == e.y for e in examples])
    assert agreement >= 0.95


def test_pairwise_examples_need_one_partner():
    example = LabeledExample(series_id="s", trend_index=0, feature=end_vector(0.5), context=[], y=1)
    with pytest.raises(TrainingError, match="partner"):
        train_leaf_policy([example, example], Arity.PAIRWISE, "pi5")


def test_labelled_dataset_trains_a_pairwise_leaf():
    dataset = generate_dataset(5, GenConfig(n_series=12))
    examples = label_dataset(dataset, get_scenario("exp1-pi5"))
    truth = builtin_leaf("pi5")
    hyper = LogisticHyper(solver="lbfgs", epochs=5000, l2=1e-8)
    policy, fit = train_leaf_policy(examples, Arity.PAIRWISE, "pi5", hyper=hyper,
                                    label_policy=truth, return_fit=True)
    x, y = example_rows(examples, Arity.PAIRWISE, truth)
    assert len(x) == sum(len(e.context) for e in examples)
    assert np.mean((policy.row_margins(x) >= 0.0) == y) >= 0.98
    assert fit.final_loss is not None

    sampled, _ = example_rows(examples, Arity.PAIRWISE, truth, max_partners=2, seed=1)
    assert len(sampled) == sum(min(2, len(e.context)) for e in examples)
    again, _ = example_rows(examples, Arity.PAIRWISE, truth, max_partners=2, seed=1)
    assert np.array_equal(sampled, again)


def test_mutual_information_examples():
    assert mutual_information([0, 0, 1, 1], [0, 0, 1, 1], alpha=0.0) == pytest.approx(math.log(2))
    assert mutual_information([0, 0, 1, 1], [0, 1, 0, 1], alpha=0.0) == 0.0
    smoothed = 0.75 * math.log(1.5) + 0.25 * math.log(0.5)
    assert mutual_information([0, 0, 1, 1], [0, 0, 1, 1], alpha=1.0) == pytest.approx(smoothed, rel=1e-9)
    assert mutual_information([1, 0, 1], [0, 1, 1]) == mutual_information([0, 1, 1], [1, 0, 1])


def noisy_copy(rng, source, flip):
    return np.where(rng.random(len(source)) < flip, 1 - source, source)


def test_chow_liu_links_dependent_pair():
    rng = np.random.default_rng(6)
    x0 = rng.integers(0, 2, size=2000)
    samples = np.column_stack([x0, noisy_copy(rng, x0, 0.05), rng.integers(0, 2, size=2000)])
    tree = chow_liu(samples)
    assert (0, 1) in tree.edge_set()
    assert len(tree.edges) == 2


def test_chow_liu_recovers_chain():
    rng = np.random.default_rng(7)
    x0 = rng.integers(0, 2, size=5000)
    x1 = noisy_copy(rng, x0, 0.1)
    x2 = noisy_copy(rng, x1, 0.1)
    tree = chow_liu(np.column_stack([x0, x1, x2]), names=["a", "b", "c"])
    assert tree.edge_set() == {(0, 1), (1, 2)}
    assert tree.parents == [None, 0, 1]
    assert tree.variables == ["a", "b", "c"]


def spanning_trees(n):
    pairs = list(itertools.combinations(range(n), 2))
    for edges in itertools.combinations(pairs, n - 1):
        graph = np.zeros((n, n))
        for i, j in edges:
            graph[i, j] = graph[j, i] = 1.0
        if connected_components(csr_matrix(graph), directed=False)[0] == 1:
            yield edges


def test_chow_liu_weight_is_maximal():
    rng = np.random.default_rng(100)
    for _ in range(100):
        n = int(rng.integers(2, 6))
        base = rng.integers(0, 2, size=200)
        samples = np.column_stack([noisy_copy(rng, base, flip) for flip in rng.uniform(0.0, 0.5, size=n)])
        tree = chow_liu(samples)
        weight = {(i, j): mutual_information(samples[:, i], samples[:, j])
                  for i, j in itertools.combinations(range(n), 2)}
        best = max(math.fsum(sorted(weight[e] for e in edges)) for edges in spanning_trees(n))
        assert tree.total_weight == pytest.approx(best, abs=1e-12)
        assert len(tree.edges) == n - 1


def test_chow_liu_breaks_ties_lexicographically():
    column = np.array([0, 1, 1, 0, 1, 0, 0, 1])
    assert chow_liu(np.column_stack([column] * 3)).edge_set() == {(0, 1), (0, 2)}
    assert chow_liu(np.column_stack([column] * 4)).edge_set() == {(0, 1), (0, 2), (0, 3)}
    # a flipped copy carries as much information as an exact one
    flipped = 1 - column
    tree = chow_liu(np.column_stack([column, column, flipped, flipped]))
    assert tree.edge_set() == {(0, 1), (0, 2), (0, 3)}


def test_greedy_search_recovers_chain():
    rng = np.random.default_rng(8)
    x0 = rng.integers(0, 2, size=5000)
    x1 = noisy_copy(rng, x0, 0.1)
    x2 = noisy_copy(rng, x1, 0.1)
    forest = greedy_structure_search(np.column_stack([x0, x1, x2]))
    assert forest.edge_set() == {(0, 1), (1, 2)}
    assert forest.score is not None


def test_greedy_search_keeps_independent_variables_apart():
    factorial = np.array(list(itertools.product([0, 1], repeat=3)) * 50)
    assert greedy_structure_search(factorial).edges == []

    rng = np.random.default_rng(9)
    x0 = rng.integers(0, 2, size=1000)
    pair = greedy_structure_search(np.column_stack([x0, noisy_copy(rng, x0, 0.05)]))
    assert pair.edge_set() == {(0, 1)}


def test_head_weights_follow_the_informative_policy():
    rng = np.random.default_rng(10)
    values = rng.integers(0, 2, size=(500, 2)).astype(float)
    head = train_utility_head(values, values[:, 0], hyper=LogisticHyper(epochs=1000))
    weights = head.logistic.weights
    assert abs(weights[0]) > 5 * abs(weights[1])
    assert head.probability([1.0, 0.0]) > 0.9
    with pytest.raises(TrainingError, match="degenerate labels"):
        train_utility_head(values, np.ones(500))
    with pytest.raises(TrainingError, match="unknown head"):
        train_utility_head(values, values[:, 0], kind="forest")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
