"""
Learning: logistic regression and naive Bayes for leaf policies and the
utility head, plus mutual-information structure learning (Chow-Liu tree and
greedy BIC forest search).
"""
import itertools
import logging
import math
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.cluster.hierarchy import DisjointSet
from scipy.optimize import minimize
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import breadth_first_order, connected_components
from scipy.special import expit, log_expit, xlogy
from typing_extensions import Literal

from features import apply_mask
from models import FEATURE_DIM, LabeledExample, TrainingError
from policies import Arity, LeafPolicy
from utils import derive_seed, make_rng

logger = logging.getLogger(__name__)

VARIANCE_FLOOR = 1e-9


class LogisticHyper(BaseModel):
    """
    solver "gd" runs `epochs` full-batch steps of size learning_rate;
    "lbfgs" runs scipy's L-BFGS-B for at most `epochs` iterations. Both stop
    once every gradient entry is within tolerance.
    """
    model_config = ConfigDict(frozen=True)

    learning_rate: float = Field(default=0.1, gt=0.0)
    epochs: int = Field(default=500, ge=1)
    l2: float = Field(default=1e-4, ge=0.0)
    solver: Literal["gd", "lbfgs"] = "gd"
    tolerance: float = Field(default=1e-8, gt=0.0)
    seed: int = 0


class LogisticModel(BaseModel):
    """
    Binary logistic regression; inputs are standardized with the stored
    mean/scale before the weights apply. weights[-1] is the bias.
    """
    weights: List[float]
    feature_mean: List[float]
    feature_scale: List[float]
    hyper: LogisticHyper = Field(default_factory=LogisticHyper)
    final_loss: Optional[float] = None
    iterations: Optional[int] = None
    converged: Optional[bool] = None

    @model_validator(mode='after')
    def check_dims(self):
        dim = len(self.weights) - 1
        if dim < 1 or len(self.feature_mean) != dim or len(self.feature_scale) != dim:
            raise ValueError("weights must have one entry per feature plus a bias")
        if any(s <= 0 for s in self.feature_scale):
            raise ValueError("feature scales must be positive")
        return self

    @classmethod
    def zeros(cls, dim: int, hyper: LogisticHyper = None) -> "LogisticModel":
        return cls(weights=[0.0] * (dim + 1), feature_mean=[0.0] * dim,
                   feature_scale=[1.0] * dim, hyper=hyper or LogisticHyper())

    @property
    def dim(self) -> int:
        return len(self.weights) - 1

    def standardize(self, matrix: np.ndarray) -> np.ndarray:
        return (np.asarray(matrix, dtype=float) - np.asarray(self.feature_mean)) / np.asarray(self.feature_scale)

    def decision_function(self, matrix: np.ndarray) -> np.ndarray:
        w = np.asarray(self.weights)
        return self.standardize(matrix) @ w[:-1] + w[-1]

    def predict_proba(self, matrix: np.ndarray) -> np.ndarray:
        return expit(self.decision_function(matrix))

    def probability(self, row: Sequence[float]) -> float:
        """P(y = 1) for one input through a fixed 1-D code path"""
        w = np.asarray(self.weights)
        x = (np.asarray(row, dtype=float) - np.asarray(self.feature_mean)) / np.asarray(self.feature_scale)
        return float(expit(np.dot(x, w[:-1]) + w[-1]))

    def raw_weights(self) -> Tuple[np.ndarray, float]:
        """Weights and bias acting on unstandardized inputs"""
        w = np.asarray(self.weights)
        scale = np.asarray(self.feature_scale)
        raw = w[:-1] / scale
        return raw, float(w[-1] - np.dot(raw, self.feature_mean))


def _as_batch(features, labels) -> Tuple[np.ndarray, np.ndarray]:
    x = np.atleast_2d(np.asarray(features, dtype=float))
    y = np.asarray(labels, dtype=float).reshape(-1)
    if len(x) != len(y):
        raise TrainingError(f"{len(x)} inputs but {len(y)} labels")
    return x, y


def logistic_loss(model: LogisticModel, features, labels) -> float:
    """Mean negative log-likelihood plus (l2 / 2) * ||w||² (bias not penalized)"""
    x, y = _as_batch(features, labels)
    z = model.decision_function(x)
    nll = -np.mean(y * log_expit(z) + (1.0 - y) * log_expit(-z))
    w = np.asarray(model.weights[:-1])
    return float(nll + 0.5 * model.hyper.l2 * np.dot(w, w))


def logistic_gradient(model: LogisticModel, features, labels) -> np.ndarray:
    """Gradient of logistic_loss with respect to (weights..., bias)"""
    x, y = _as_batch(features, labels)
    xs = model.standardize(x)
    w = np.asarray(model.weights)
    residual = expit(xs @ w[:-1] + w[-1]) - y
    grad = np.empty_like(w)
    grad[:-1] = xs.T @ residual / len(y) + model.hyper.l2 * w[:-1]
    grad[-1] = residual.mean()
    return grad


def _penalized_nll(theta: np.ndarray, xs: np.ndarray, y: np.ndarray, l2: float) -> Tuple[float, np.ndarray]:
    """logistic_loss and its gradient over already standardized inputs"""
    w, bias = theta[:-1], theta[-1]
    z = xs @ w + bias
    loss = -np.mean(y * log_expit(z) + (1.0 - y) * log_expit(-z)) + 0.5 * l2 * np.dot(w, w)
    residual = expit(z) - y
    grad = np.append(xs.T @ residual / len(y) + l2 * w, residual.mean())
    return float(loss), grad


def _descend(xs: np.ndarray, y: np.ndarray, hyper: LogisticHyper) -> Tuple[np.ndarray, int, bool]:
    theta = np.zeros(xs.shape[1] + 1)
    for epoch in range(1, hyper.epochs + 1):
        grad = _penalized_nll(theta, xs, y, hyper.l2)[1]
        if np.abs(grad).max() <= hyper.tolerance:
            return theta, epoch - 1, True
        theta -= hyper.learning_rate * grad
    grad = _penalized_nll(theta, xs, y, hyper.l2)[1]
    return theta, hyper.epochs, bool(np.abs(grad).max() <= hyper.tolerance)


def _lbfgs(xs: np.ndarray, y: np.ndarray, hyper: LogisticHyper) -> Tuple[np.ndarray, int, bool]:
    result = minimize(
        _penalized_nll, np.zeros(xs.shape[1] + 1), args=(xs, y, hyper.l2), jac=True,
        method="L-BFGS-B",
        options={"maxiter": hyper.epochs, "gtol": hyper.tolerance, "ftol": hyper.tolerance * 1e-4},
    )
    return result.x, int(result.nit), bool(result.success)


def train_logistic(features, labels, hyper: LogisticHyper = None) -> LogisticModel:
    """
    Minimize logistic_loss from zero weights on standardized inputs, by
    full-batch gradient descent or L-BFGS-B. Requires at least two examples
    covering both classes.
    """
    hyper = hyper or LogisticHyper()
    x, y = _as_batch(features, labels)
    if len(y) < 2 or y.min() == y.max():
        raise TrainingError("degenerate labels")
    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    scale[scale <= 0] = 1.0
    xs = (x - mean) / scale

    fit = _lbfgs if hyper.solver == "lbfgs" else _descend
    theta, iterations, converged = fit(xs, y, hyper)

    model = LogisticModel(weights=theta.tolist(), feature_mean=mean.tolist(),
                          feature_scale=scale.tolist(), hyper=hyper,
                          iterations=iterations, converged=converged)
    model.final_loss = logistic_loss(model, x, y)
    if hyper.solver == "lbfgs" and not converged:
        logger.warning(f"L-BFGS stopped after {iterations} iterations without converging "
                       f"(loss {model.final_loss:.6g})")
    logger.debug(f"Logistic fit on {len(y)} rows: loss {model.final_loss:.5f} after {iterations} iterations")
    return model


class NaiveBayesModel(BaseModel):
    """
    Naive Bayes with Bernoulli likelihoods for 0/1 columns (Laplace
    smoothing alpha) and Gaussian likelihoods otherwise.
    """
    class_priors: List[float]
    feature_kinds: List[Literal["bernoulli", "gaussian"]]
    bernoulli_p: List[List[float]]
    means: List[List[float]]
    variances: List[List[float]]
    alpha: float = Field(default=1.0, ge=0.0)

    @model_validator(mode='after')
    def check_priors(self):
        if len(self.class_priors) != 2 or abs(sum(self.class_priors) - 1.0) > 1e-9:
            raise ValueError("class priors must be two probabilities summing to 1")
        return self

    def log_odds(self, matrix: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(matrix, dtype=float))
        priors = np.asarray(self.class_priors)
        with np.errstate(divide='ignore'):
            scores = np.tile(np.log(priors), (len(x), 1))
        bernoulli = np.array([k == "bernoulli" for k in self.feature_kinds])
        for c in (0, 1):
            p = np.asarray(self.bernoulli_p[c])
            mu = np.asarray(self.means[c])
            var = np.asarray(self.variances[c])
            with np.errstate(divide='ignore'):
                bern = xlogy(x, p) + xlogy(1.0 - x, 1.0 - p)
            gauss = -0.5 * (np.log(2.0 * math.pi * var) + (x - mu) ** 2 / var)
            scores[:, c] += np.where(bernoulli, bern, gauss).sum(axis=1)
        return scores[:, 1] - scores[:, 0]

    def predict_proba(self, matrix: np.ndarray) -> np.ndarray:
        return expit(self.log_odds(matrix))

    def probability(self, row: Sequence[float]) -> float:
        return float(self.predict_proba(np.asarray(row, dtype=float)[None, :])[0])


def train_naive_bayes(features, labels, alpha: float = 1.0) -> NaiveBayesModel:
    x, y = _as_batch(features, labels)
    if len(y) < 2 or y.min() == y.max():
        raise TrainingError("degenerate labels")
    binary = np.all((x == 0.0) | (x == 1.0), axis=0)
    priors, bernoulli_p, means, variances = [], [], [], []
    for c in (0, 1):
        rows = x[y == c]
        priors.append(len(rows) / len(y))
        bernoulli_p.append(((rows.sum(axis=0) + alpha) / (len(rows) + 2.0 * alpha)).tolist())
        means.append(rows.mean(axis=0).tolist())
        variances.append(np.maximum(rows.var(axis=0), VARIANCE_FLOOR).tolist())
    return NaiveBayesModel(
        class_priors=priors,
        feature_kinds=["bernoulli" if b else "gaussian" for b in binary],
        bernoulli_p=bernoulli_p, means=means, variances=variances, alpha=alpha,
    )


class NaiveBayesLeaf(BaseModel):
    """Leaf policy whose margin is a naive Bayes posterior log-odds"""
    model_config = ConfigDict(frozen=True)

    learner: Literal["naive_bayes"] = "naive_bayes"
    id: str
    arity: Arity
    model: NaiveBayesModel
    feature_indices: Optional[List[int]] = None
    sharpness: float = 1.0

    def _mask(self, matrix: np.ndarray) -> np.ndarray:
        if self.feature_indices is None:
            return matrix
        return matrix[:, self.feature_indices]

    def single_margins(self, matrix: np.ndarray) -> np.ndarray:
        return self.model.log_odds(self._mask(matrix))

    def row_margins(self, rows: np.ndarray) -> np.ndarray:
        return self.model.log_odds(self._mask(rows))

    def pair_margins(self, matrix: np.ndarray) -> np.ndarray:
        count = len(matrix)
        if count == 0:
            return np.zeros((0, 0))
        left = np.repeat(matrix, count, axis=0)
        right = np.tile(matrix, (count, 1))
        pairs = self._mask(np.hstack([left, right]))
        return self.model.log_odds(pairs).reshape(count, count)


def _partners(example: LabeledExample, max_partners: int, seed: int) -> List[Tuple[float, ...]]:
    context = [v.values for v in example.context]
    if not max_partners or len(context) <= max_partners:
        return context
    rng = make_rng(derive_seed(seed, "pairs", example.series_id, example.trend_index))
    return [context[i] for i in np.sort(rng.choice(len(context), size=max_partners, replace=False))]


def example_rows(examples: Sequence[LabeledExample], arity: Arity, label_policy=None,
                 max_partners: int = 0, seed: int = 0) -> Tuple[np.ndarray, np.ndarray]:
    """
    Design matrix and labels of labelled examples.

    With a label_policy (a ground-truth leaf evaluator) every row is
    labelled by that policy's hard value, and pairwise examples expand into
    one concatenated (v, v') row per context trend, at most max_partners of
    them sampled per example. Without one, rows carry the examples' own y and
    a pairwise example must hold exactly one partner in its context.
    """
    width = FEATURE_DIM if arity == Arity.SINGLE else 2 * FEATURE_DIM
    rows, labels = [], []
    for example in examples:
        if arity == Arity.SINGLE:
            rows.append(example.feature.values)
            labels.append(example.y)
        elif label_policy is not None:
            rows.extend(example.feature.values + partner
                        for partner in _partners(example, max_partners, seed))
        else:
            if len(example.context) != 1:
                raise TrainingError("pairwise examples need exactly one partner in context "
                                    "unless a label policy expands them")
            rows.append(example.feature.values + example.context[0].values)
            labels.append(example.y)
    x = np.array(rows, dtype=float).reshape(-1, width)
    if label_policy is not None:
        return x, (label_policy.row_margins(x) >= 0.0).astype(float)
    return x, np.array(labels, dtype=float)


def _expand_mask(feature_indices: Optional[Sequence[int]], arity: Arity) -> Optional[List[int]]:
    if feature_indices is None:
        return None
    indices = list(feature_indices)
    if arity == Arity.PAIRWISE:
        indices += [i + FEATURE_DIM for i in feature_indices if i < FEATURE_DIM]
    return sorted(set(indices))


def leaf_from_logistic(policy_id: str, arity: Arity, model: LogisticModel) -> LeafPolicy:
    """
    Fold standardization into (a, b) and normalize to unit weight norm;
    the norm becomes the sharpness so soft values equal the model's
    probabilities.
    """
    raw, bias = model.raw_weights()
    norm = float(np.linalg.norm(raw))
    if norm == 0.0:
        raise TrainingError(f"leaf '{policy_id}' learned an all-zero separator")
    raw = raw / norm
    if arity == Arity.SINGLE:
        return LeafPolicy(id=policy_id, arity=arity, a=tuple(raw.tolist()), b=bias / norm, sharpness=norm)
    return LeafPolicy(id=policy_id, arity=arity, a=tuple(raw[:FEATURE_DIM].tolist()),
                      b_vec=tuple(raw[FEATURE_DIM:].tolist()), c=bias / norm, sharpness=norm)


def train_leaf_policy(examples: Sequence[LabeledExample], arity: Arity, policy_id: str,
                      feature_indices: Optional[Sequence[int]] = None,
                      hyper: LogisticHyper = None, learner: str = "logistic",
                      label_policy=None, max_partners: int = 0, seed: int = 0,
                      return_fit: bool = False):
    """
    Learn one leaf policy from labelled examples (see example_rows for how
    label_policy and max_partners shape the rows). Features outside
    feature_indices are masked to zero (or dropped, for naive Bayes).

    With return_fit the result is (leaf, logistic model or None).
    """
    x, y = example_rows(examples, arity, label_policy, max_partners, seed)
    leaf, model = _fit_leaf(x, y, arity, policy_id, feature_indices, hyper, learner)
    return (leaf, model) if return_fit else leaf


def _fit_leaf(x: np.ndarray, y: np.ndarray, arity: Arity, policy_id: str,
              feature_indices: Optional[Sequence[int]], hyper: Optional[LogisticHyper],
              learner: str) -> Tuple[object, Optional[LogisticModel]]:
    if len(y) < 2 or y.min() == y.max():
        raise TrainingError(f"degenerate labels for leaf '{policy_id}'")
    mask = _expand_mask(feature_indices, arity)
    if learner == "naive_bayes":
        nb_input = x if mask is None else x[:, mask]
        leaf = NaiveBayesLeaf(id=policy_id, arity=arity, model=train_naive_bayes(nb_input, y),
                              feature_indices=mask)
        logger.info(f"Trained naive Bayes leaf {policy_id} on {len(y)} rows")
        return leaf, None
    if learner != "logistic":
        raise TrainingError(f"unknown leaf learner '{learner}'")
    model = train_logistic(apply_mask(x, mask), y, hyper)
    logger.info(f"Trained leaf {policy_id} on {len(y)} rows "
                f"(loss {model.final_loss:.5g}, {model.iterations} iterations)")
    return leaf_from_logistic(policy_id, arity, model), model


class UtilityHead(BaseModel):
    """Classifier replacing the table P(Y | complex policy values)"""
    kind: Literal["logistic", "naive_bayes"]
    logistic: Optional[LogisticModel] = None
    naive_bayes: Optional[NaiveBayesModel] = None

    @model_validator(mode='after')
    def check_payload(self):
        if getattr(self, self.kind) is None:
            raise ValueError(f"{self.kind} head is missing its parameters")
        return self

    @property
    def classifier(self):
        return self.logistic if self.kind == "logistic" else self.naive_bayes

    def probability(self, row: Sequence[float]) -> float:
        return self.classifier.probability(row)

    def predict_proba(self, matrix: np.ndarray) -> np.ndarray:
        return self.classifier.predict_proba(matrix)


def train_utility_head(complex_values: np.ndarray, labels, kind: str = "logistic",
                       hyper: LogisticHyper = None) -> UtilityHead:
    """Fit the head on per-trend complex policy values (hard 0/1 columns)"""
    if kind == "logistic":
        return UtilityHead(kind=kind, logistic=train_logistic(complex_values, labels, hyper))
    if kind == "naive_bayes":
        return UtilityHead(kind=kind, naive_bayes=train_naive_bayes(complex_values, labels))
    raise TrainingError(f"unknown head classifier '{kind}'")


def mutual_information(xs, ys, alpha: float = 1.0) -> float:
    """
    Empirical MI (nats) of two binary variables with Laplace smoothing
    alpha added to each joint cell.
    """
    x = np.asarray(xs, dtype=int)
    y = np.asarray(ys, dtype=int)
    if len(x) == 0 or len(x) != len(y):
        raise TrainingError("mutual information needs two equal-length, non-empty samples")
    counts = np.zeros((2, 2))
    np.add.at(counts, (x, y), 1.0)
    joint = (counts + alpha) / (len(x) + 4.0 * alpha)
    px = joint.sum(axis=1)
    py = joint.sum(axis=0)
    # summing sorted terms makes permuted tables give bit-identical values
    terms = sorted(
        float(xlogy(joint[i, j], joint[i, j]) - xlogy(joint[i, j], px[i] * py[j]))
        for i in (0, 1) for j in (0, 1)
    )
    return max(math.fsum(terms), 0.0)


class PolicyTree(BaseModel):
    """Undirected forest over policy variables; parents follow a BFS from each component's lowest node"""
    variables: List[str]
    parents: List[Optional[int]]
    edges: List[Tuple[int, int, float]]
    score: Optional[float] = None

    @model_validator(mode='after')
    def check_forest(self):
        n = len(self.variables)
        if len(self.parents) != n:
            raise ValueError("one parent entry per variable is required")
        graph = _adjacency(n, [(i, j) for i, j, _ in self.edges])
        components = connected_components(graph, directed=False)[0] if n else 0
        if len(self.edges) != n - components:
            raise ValueError("policy tree edges must form a forest")
        return self

    @property
    def total_weight(self) -> float:
        return math.fsum(sorted(weight for _, _, weight in self.edges))

    def edge_set(self) -> set:
        return {(min(i, j), max(i, j)) for i, j, _ in self.edges}


def _adjacency(n: int, edges: Sequence[Tuple[int, int]]) -> csr_matrix:
    matrix = np.zeros((n, n))
    for i, j in edges:
        matrix[i, j] = matrix[j, i] = 1.0
    return csr_matrix(matrix)


def _mi_matrix(samples: np.ndarray, alpha: float) -> np.ndarray:
    d = samples.shape[1]
    weights = np.zeros((d, d))
    for i, j in itertools.combinations(range(d), 2):
        weights[i, j] = weights[j, i] = mutual_information(samples[:, i], samples[:, j], alpha)
    return weights


def _as_samples(samples) -> np.ndarray:
    data = np.asarray(samples)
    if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 2:
        raise TrainingError("structure learning needs >= 1 sample of >= 2 variables")
    if not np.all((data == 0) | (data == 1)):
        raise TrainingError("structure learning needs binary samples")
    return data.astype(int)


def _forest(n: int, edges: List[Tuple[int, int]], weights: np.ndarray,
            names: Optional[Sequence[str]], score: Optional[float] = None) -> PolicyTree:
    graph = _adjacency(n, edges)
    parents: List[Optional[int]] = [None] * n
    seen = set()
    for root in range(n):
        if root in seen:
            continue
        order, predecessors = breadth_first_order(graph, root, directed=False, return_predecessors=True)
        for node in order:
            seen.add(int(node))
            if node != root:
                parents[int(node)] = int(predecessors[node])
    ordered = sorted((min(i, j), max(i, j)) for i, j in edges)
    return PolicyTree(
        variables=list(names) if names else [f"x{i}" for i in range(n)],
        parents=parents,
        edges=[(i, j, float(weights[i, j])) for i, j in ordered],
        score=score,
    )


def chow_liu(samples, alpha: float = 1.0, names: Optional[Sequence[str]] = None) -> PolicyTree:
    """
    Maximum-weight spanning tree of pairwise mutual information by Kruskal's
    algorithm; equal weights are taken in lexicographic (i, j) order.
    Parents follow a BFS from variable 0.
    """
    data = _as_samples(samples)
    n = data.shape[1]
    weights = _mi_matrix(data, alpha)
    candidates = sorted(itertools.combinations(range(n), 2), key=lambda e: (-weights[e], e[0], e[1]))
    components = DisjointSet(range(n))
    edges: List[Tuple[int, int]] = []
    for i, j in candidates:
        if components.merge(i, j):
            edges.append((i, j))
            if len(edges) == n - 1:
                break
    result = _forest(n, edges, weights, names)
    logger.debug(f"Chow-Liu tree over {n} variables, weight {result.total_weight:.5f}")
    return result


def greedy_structure_search(samples, names: Optional[Sequence[str]] = None) -> PolicyTree:
    """
    Hill-climbing over forests with the BIC score: adding edge (i, j)
    changes the score by n * MI_ml(i, j) - ln(n) / 2. Edges are added or
    removed one at a time while the score strictly improves.
    """
    data = _as_samples(samples)
    rows, n = data.shape
    mi = _mi_matrix(data, alpha=0.0)
    gain = rows * mi - 0.5 * math.log(rows)
    edges: List[Tuple[int, int]] = []
    while True:
        labels = connected_components(_adjacency(n, edges), directed=False)[1]
        best, best_delta = None, 1e-12
        for i, j in itertools.combinations(range(n), 2):
            if (i, j) in edges:
                delta = -gain[i, j]
            elif labels[i] != labels[j]:
                delta = gain[i, j]
            else:
                continue
            if delta > best_delta:
                best, best_delta = (i, j), delta
        if best is None:
            break
        if best in edges:
            edges.remove(best)
        else:
            edges.append(best)

    p1 = np.clip(data.mean(axis=0), 0.0, 1.0)
    independent = rows * float(np.sum(xlogy(p1, p1) + xlogy(1.0 - p1, 1.0 - p1)))
    score = independent - 0.5 * n * math.log(rows) + math.fsum(gain[i, j] for i, j in edges)
    return _forest(n, edges, mi, names, score=score)
