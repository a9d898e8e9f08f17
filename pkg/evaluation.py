"""
Evaluation metrics and the experiment runner that trains and scores a
scenario end to end.
"""
import logging
import math
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field
from sklearn.svm import LinearSVC
from sklearn.tree import DecisionTreeClassifier

import config
from features import FEATURE_LAYOUT_ID
from inference import UtilityModel, trend_utilities
from learning import LogisticHyper, example_rows, train_leaf_policy, train_utility_head
from models import DetectionConfig, MetricError, TimeSeries, TrainingError, TrendSet
from policies import DerivedPolicy, evaluate_structures, make_catalog
from scenarios import Scenario
from synthetic_data import gold_labels, label_dataset
from trend_detection import detect_many

logger = logging.getLogger(__name__)

TRAIN_FRACTION = 0.8
CLASSIFIERS = ("logistic", "naive_bayes")
KENDALL_CHUNK = 2048

Corpus = List[Tuple[TimeSeries, TrendSet]]


def precision_recall_f1(predicted: Sequence[float], gold: Sequence[int],
                        threshold: float = 0.5) -> Tuple[float, float, float]:
    """
    Predictions are positive when >= threshold. Empty predicted positives
    give precision 1.0 when there are no gold positives and 0.0 otherwise;
    recall is defined the same way on gold positives.
    """
    pred = np.asarray(predicted, dtype=float) >= threshold
    truth = np.asarray(gold) == 1
    if pred.shape != truth.shape:
        raise MetricError("predictions and gold labels differ in length")
    tp = int(np.sum(pred & truth))
    fp = int(np.sum(pred & ~truth))
    fn = int(np.sum(~pred & truth))
    if tp + fp == 0:
        precision = 1.0 if tp + fn == 0 else 0.0
    else:
        precision = tp / (tp + fp)
    if tp + fn == 0:
        recall = 1.0 if tp + fp == 0 else 0.0
    else:
        recall = tp / (tp + fn)
    f1 = 0.0 if precision + recall == 0 else 2.0 * precision * recall / (precision + recall)
    return precision, recall, f1


def kendall_tau(a: Sequence[float], b: Sequence[float]) -> float:
    """Tie-corrected Kendall tau-b by explicit counting over all pairs"""
    x = np.asarray(a, dtype=float)
    y = np.asarray(b, dtype=float)
    if len(x) != len(y) or len(x) < 2:
        raise MetricError("kendall_tau needs two equal-length sequences of >= 2 items")
    n = len(x)
    concordance = 0.0
    tied_x = tied_y = 0
    for start in range(0, n, KENDALL_CHUNK):
        rows = slice(start, min(start + KENDALL_CHUNK, n))
        sx = np.sign(x[rows, None] - x[None, :])
        sy = np.sign(y[rows, None] - y[None, :])
        upper = np.arange(rows.start, rows.stop)[:, None] < np.arange(n)[None, :]
        concordance += float(np.sum((sx * sy)[upper]))
        tied_x += int(np.sum((sx == 0) & upper))
        tied_y += int(np.sum((sy == 0) & upper))
    total = n * (n - 1) // 2
    denominator = math.sqrt((total - tied_x) * (total - tied_y))
    if denominator == 0.0:
        raise MetricError("undefined correlation")
    return concordance / denominator


def _safe_tau(a: Sequence[float], b: Sequence[float], label: str) -> Optional[float]:
    try:
        return kendall_tau(a, b)
    except MetricError as e:
        logger.warning(f"Kendall tau ({label}) reported as null: {e}")
        return None


class LeafReport(BaseModel):
    policy_id: str
    arity: str
    train_rows: int
    train_agreement: float
    final_loss: Optional[float] = None
    iterations: Optional[int] = None
    converged: Optional[bool] = None
    test_agreement: Optional[float] = None
    test_f1: Optional[float] = None


class MetricsReport(BaseModel):
    scenario: str
    classifier: str
    f1: float
    precision: float
    recall: float
    kendall_tau: Optional[float]
    kendall_tau_raw: Optional[float] = None
    n_examples: int
    seed: int
    threshold: float = 0.5
    leaves: List[LeafReport] = Field(default_factory=list)
    baselines: Dict[str, float] = Field(default_factory=dict)


def build_corpus(series_list: Sequence[TimeSeries], cfg: DetectionConfig = None,
                 workers: int = None) -> Corpus:
    """Pair every series with its detected trends"""
    trend_sets = detect_many(series_list, cfg, workers if workers is not None else config.WORKERS)
    return list(zip(series_list, trend_sets))


def split_corpus(corpus: Sequence, train_fraction: float = TRAIN_FRACTION) -> Tuple[list, list]:
    """Deterministic split by series index; trends of one series never straddle folds"""
    cut = int(round(len(corpus) * train_fraction))
    if len(corpus) >= 2:
        cut = min(max(cut, 1), len(corpus) - 1)
    return list(corpus[:cut]), list(corpus[cut:])


def _leaf_ids(scenario: Scenario) -> List[str]:
    """Learnable leaves referenced by the scenario, derived policies expanded"""
    catalog = scenario.catalog()
    ordered: List[str] = []
    pending = [i for s in scenario.structures for i in s.referenced_ids()]
    while pending:
        policy_id = pending.pop(0)
        if policy_id in ordered:
            continue
        policy = catalog[policy_id]
        if isinstance(policy, DerivedPolicy):
            pending.extend(policy.expr.referenced_ids())
            continue
        ordered.append(policy_id)
    return ordered


def _leaf_predictions(leaf, x: np.ndarray) -> np.ndarray:
    return (leaf.row_margins(x) >= 0.0).astype(float)


def _gold_matrix(corpus: Corpus, scenario: Scenario) -> np.ndarray:
    return np.concatenate([gold_labels(ts, scenario) for _, ts in corpus]) if corpus else np.zeros(0)


def default_hypers(seed: int = 0) -> Tuple[LogisticHyper, LogisticHyper]:
    """(leaf, head) training settings from the TRENDSUM_* configuration"""
    common = dict(solver=config.LEAF_SOLVER, epochs=config.LEAF_EPOCHS,
                  learning_rate=config.LEAF_LEARNING_RATE, seed=seed)
    return LogisticHyper(l2=config.LEAF_L2, **common), LogisticHyper(l2=config.HEAD_L2, **common)


def train_scenario_model(train: Corpus, scenario: Scenario, classifier: str = "logistic",
                         seed: int = 0, label_noise: float = 0.0,
                         leaf_hyper: LogisticHyper = None, head_hyper: LogisticHyper = None,
                         max_partners: int = None) -> Tuple[UtilityModel, List[LeafReport]]:
    """
    Learn every part of a scenario's model separately from the scenario's
    labelled examples: each referenced leaf on rows labelled by its
    ground-truth policy, then the utility head on hard complex values
    computed with the learned leaves against the (possibly noisy) labels.

    In experiment 1 the classifier under study is the leaf learner (the head
    stays logistic); in experiment 2 it is the head.
    """
    if classifier not in CLASSIFIERS:
        raise TrainingError(f"unknown classifier '{classifier}' (known: {', '.join(CLASSIFIERS)})")
    leaf_learner = classifier if scenario.experiment == 1 else "logistic"
    head_kind = classifier if scenario.experiment == 2 else "logistic"
    default_leaf, default_head = default_hypers(seed)
    leaf_hyper = leaf_hyper or default_leaf
    head_hyper = head_hyper or default_head
    max_partners = config.MAX_PARTNERS_PER_TREND if max_partners is None else max_partners
    truth = scenario.catalog()
    examples = label_dataset(train, scenario, label_noise, seed)

    learned, reports = [], []
    for policy_id in _leaf_ids(scenario):
        policy = truth[policy_id]
        try:
            leaf, fit = train_leaf_policy(examples, policy.arity, policy_id, hyper=leaf_hyper,
                                          learner=leaf_learner, label_policy=policy,
                                          max_partners=max_partners, seed=seed, return_fit=True)
        except TrainingError as e:
            raise TrainingError(f"{e} (scenario {scenario.id})") from e
        x, y = example_rows(examples, policy.arity, policy, max_partners, seed)
        agreement = float(np.mean(_leaf_predictions(leaf, x) == y))
        reports.append(LeafReport(
            policy_id=policy_id, arity=leaf.arity.value, train_rows=len(y), train_agreement=agreement,
            final_loss=fit.final_loss if fit else None,
            iterations=fit.iterations if fit else None,
            converged=fit.converged if fit else None,
        ))
        learned.append(leaf)
        logger.info(f"Leaf {policy_id}: {len(y)} rows, train agreement {agreement:.4f}")

    catalog = make_catalog(learned, scenario.derived_policies)
    values = np.vstack([evaluate_structures(scenario.structures, ts, catalog, mode="hard")
                        for _, ts in train])
    labels = np.array([e.y for e in examples], dtype=float)
    try:
        head = train_utility_head(values, labels, head_kind, head_hyper)
    except TrainingError as e:
        raise TrainingError(f"{e} for the utility head of scenario {scenario.id}") from e

    model = UtilityModel(
        leaf_policies=learned,
        derived_policies=scenario.derived_policies,
        structures=list(scenario.complex_policies),
        head=head,
        training_metadata={
            "scenario": scenario.id,
            "classifier": classifier,
            "leaf_learner": leaf_learner,
            "head": head_kind,
            "seed": seed,
            "label_noise": label_noise,
            "train_series": len(train),
            "train_trends": int(len(labels)),
            "solver": leaf_hyper.solver,
            "leaf_epochs": leaf_hyper.epochs,
            "leaf_learning_rate": leaf_hyper.learning_rate,
            "leaf_l2": leaf_hyper.l2,
            "head_l2": head_hyper.l2,
            "max_partners_per_trend": max_partners,
            "feature_layout_id": FEATURE_LAYOUT_ID,
        },
    )
    return model, reports


def evaluate_model(model: UtilityModel, test: Corpus, scenario: Scenario, seed: int = 0,
                   threshold: float = 0.5, leaf_reports: Sequence[LeafReport] = ()) -> MetricsReport:
    """Held-out F1 / precision / recall and Kendall tau of utilities against gold labels"""
    model.check_layout()
    gold = _gold_matrix(test, scenario)
    utilities = np.concatenate([trend_utilities(model, ts) for _, ts in test]) if test else np.zeros(0)
    precision, recall, f1 = precision_recall_f1(utilities, gold, threshold)
    quantized = (utilities >= threshold).astype(float)

    truth = scenario.catalog()
    learned = model.catalog()
    examples = label_dataset(test, scenario) if leaf_reports else []
    reports = []
    for report in leaf_reports:
        policy = truth[report.policy_id]
        x, y = example_rows(examples, policy.arity, policy)
        if len(y) == 0:
            reports.append(report)
            continue
        predicted = _leaf_predictions(learned[report.policy_id], x)
        reports.append(report.model_copy(update={
            "test_agreement": float(np.mean(predicted == y)),
            "test_f1": precision_recall_f1(predicted, y.astype(int))[2],
        }))

    return MetricsReport(
        scenario=scenario.id,
        classifier=model.training_metadata.get("classifier", model.head.kind),
        f1=f1, precision=precision, recall=recall,
        kendall_tau=_safe_tau(quantized, gold, "quantized"),
        kendall_tau_raw=_safe_tau(utilities, gold, "raw"),
        n_examples=int(len(gold)),
        seed=seed,
        threshold=threshold,
        leaves=reports,
    )


def evaluate_baselines(train: Corpus, test: Corpus, scenario: Scenario, seed: int = 0) -> Dict[str, float]:
    """
    Leaf-level F1 of non-probabilistic baselines (decision tree, linear SVM)
    trained on the same rows as the leaf learners; keyed "<model>:<leaf>".
    """
    truth = scenario.catalog()
    train_examples = label_dataset(train, scenario, seed=seed)
    test_examples = label_dataset(test, scenario, seed=seed)
    scores = {}
    for policy_id in _leaf_ids(scenario):
        policy = truth[policy_id]
        x_train, y_train = example_rows(train_examples, policy.arity, policy,
                                        config.MAX_PARTNERS_PER_TREND, seed)
        x_test, y_test = example_rows(test_examples, policy.arity, policy)
        if len(np.unique(y_train)) < 2 or len(y_test) == 0:
            logger.warning(f"Skipping baselines for leaf {policy_id}: degenerate rows")
            continue
        for name, estimator in (
            ("decision_tree", DecisionTreeClassifier(random_state=seed % (2 ** 32))),
            ("linear_svm", LinearSVC(random_state=seed % (2 ** 32), dual=False, max_iter=5000)),
        ):
            estimator.fit(x_train, y_train)
            scores[f"{name}:{policy_id}"] = precision_recall_f1(estimator.predict(x_test), y_test.astype(int))[2]
    return scores


def run_experiment(series_list: Sequence[TimeSeries], scenario: Scenario, classifier: str = "logistic",
                   seed: int = 0, label_noise: float = 0.0, detection: DetectionConfig = None,
                   baselines: bool = False, workers: int = None) -> Tuple[UtilityModel, MetricsReport]:
    """Detect, split, train and evaluate one scenario"""
    corpus = build_corpus(series_list, detection, workers)
    train, test = split_corpus(corpus)
    logger.info(f"Scenario {scenario.id}: {len(train)} training / {len(test)} held-out series")
    model, leaf_reports = train_scenario_model(train, scenario, classifier, seed, label_noise)
    report = evaluate_model(model, test, scenario, seed, leaf_reports=leaf_reports)
    if baselines:
        report = report.model_copy(update={"baselines": evaluate_baselines(train, test, scenario, seed)})
    logger.info(f"Scenario {scenario.id} ({classifier}): F1 {report.f1:.4f}, Kendall {report.kendall_tau}")
    return model, report
