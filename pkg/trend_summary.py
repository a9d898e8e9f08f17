"""
Time-series trend summarization tool - generates corpora, detects trends,
trains and evaluates utility models, and writes natural-language summaries.
"""
import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np
from pydantic import BaseModel, Field, ValidationError, model_validator
from typing_extensions import Literal

import config
from evaluation import (
    CLASSIFIERS, build_corpus, evaluate_baselines, evaluate_model, split_corpus,
    train_scenario_model,
)
from inference import UtilityModel
from learning import chow_liu, greedy_structure_search
from models import DetectionConfig, GenConfig, TrendSummaryError
from policies import Arity, evaluate_structures, leaf
from scenarios import SCENARIO_IDS, get_scenario
from summarizer import summarize
from synthetic_data import gold_labels, generate_dataset, scenario_labels, to_record
from trend_detection import detect_all
from utils import (
    canonical_json, read_dataset, read_json, read_series_csv, write_dataset, write_json,
)

logger = logging.getLogger(__name__)

SUBCOMMANDS = ("generate", "detect", "train", "eval", "summarize", "structure")


class RunConfig(BaseModel):
    """Validated command-line settings; input paths are checked before any work starts"""
    subcommand: Literal["generate", "detect", "train", "eval", "summarize", "structure"]
    input: Optional[Path] = None
    model: Optional[Path] = None
    out: Optional[Path] = None
    report: Optional[Path] = None
    seed: Optional[int] = Field(default=None, ge=0, lt=2 ** 64)
    scenario: Optional[str] = None
    classifier: str = "logistic"
    k: int = 3
    n: Optional[int] = Field(default=None, gt=0)
    force: bool = False
    diverse: bool = False
    baselines: bool = False
    label_noise: float = Field(default=0.0, ge=0.0, le=0.5)
    workers: int = Field(default=config.WORKERS, ge=1)

    @model_validator(mode='after')
    def check_requirements(self):
        if self.subcommand in ("generate", "train") and self.seed is None:
            raise ValueError(f"--seed is required for {self.subcommand}")
        needs_input = self.subcommand in ("detect", "train", "eval", "summarize", "structure")
        if needs_input and (self.input is None or not self.input.is_file()):
            raise ValueError(f"input file not found: {self.input}")
        if self.subcommand in ("eval", "summarize") and (self.model is None or not self.model.is_file()):
            raise ValueError(f"model file not found: {self.model}")
        if self.subcommand in ("train", "structure") and not self.scenario:
            raise ValueError(f"--scenario is required for {self.subcommand}")
        if self.subcommand in ("generate", "train") and self.out is None:
            raise ValueError(f"--out is required for {self.subcommand}")
        if self.classifier not in CLASSIFIERS:
            raise ValueError(f"unknown classifier '{self.classifier}' (known: {', '.join(CLASSIFIERS)})")
        return self


def emit(payload) -> None:
    """Machine-readable result to stdout"""
    print(canonical_json(payload))


def load_series(run: RunConfig):
    return [record.to_series() for record in read_dataset(run.input)]


def cmd_generate(run: RunConfig) -> None:
    cfg = GenConfig(n_series=run.n) if run.n else GenConfig()
    dataset = generate_dataset(run.seed, cfg, run.workers)
    scenarios = [get_scenario(scenario_id) for scenario_id in SCENARIO_IDS]
    records = (to_record(s, gt, scenario_labels(gt, scenarios)) for s, gt in dataset)
    count = write_dataset(run.out, records, force=run.force)
    print(f"Generated {count} series -> {run.out}", file=sys.stderr)


def cmd_detect(run: RunConfig) -> None:
    trend_set = detect_all(read_series_csv(run.input), DetectionConfig())
    if run.out:
        write_json(run.out, trend_set, force=run.force)
    else:
        emit(trend_set.model_dump(mode='json'))


def cmd_train(run: RunConfig) -> None:
    scenario = get_scenario(run.scenario)
    corpus = build_corpus(load_series(run), DetectionConfig(), run.workers)
    train, test = split_corpus(corpus)
    model, leaf_reports = train_scenario_model(train, scenario, run.classifier, run.seed, run.label_noise)
    report = evaluate_model(model, test, scenario, run.seed, leaf_reports=leaf_reports)
    if run.baselines:
        report = report.model_copy(update={"baselines": evaluate_baselines(train, test, scenario, run.seed)})

    write_json(run.out, model, force=run.force)
    report_path = run.report or run.out.with_suffix(".report.json")
    write_json(report_path, report, force=run.force)

    print("=" * 60, file=sys.stderr)
    print(f"Scenario {scenario.id} ({run.classifier})", file=sys.stderr)
    print(f"  Held-out F1:      {report.f1:.4f}", file=sys.stderr)
    print(f"  Kendall tau:      {report.kendall_tau}", file=sys.stderr)
    print(f"  Model:            {run.out}", file=sys.stderr)
    print(f"  Report:           {report_path}", file=sys.stderr)
    print("=" * 60, file=sys.stderr)
    emit(report.model_dump(mode='json'))


def cmd_eval(run: RunConfig) -> None:
    model = UtilityModel.model_validate(read_json(run.model))
    model.check_layout()
    scenario = get_scenario(run.scenario or model.training_metadata.get("scenario", ""))
    corpus = build_corpus(load_series(run), DetectionConfig(), run.workers)
    _, test = split_corpus(corpus)
    seed = run.seed if run.seed is not None else int(model.training_metadata.get("seed", 0))
    report = evaluate_model(model, test, scenario, seed)
    if run.out:
        write_json(run.out, report, force=run.force)
    emit(report.model_dump(mode='json'))


def cmd_summarize(run: RunConfig) -> None:
    model = UtilityModel.model_validate(read_json(run.model))
    series = read_series_csv(run.input)
    print(summarize(series, model, DetectionConfig(), k=run.k, diverse=run.diverse))


def cmd_structure(run: RunConfig) -> None:
    """Chow-Liu and greedy BIC structures over policy values and the label of every trend"""
    scenario = get_scenario(run.scenario)
    corpus = build_corpus(load_series(run), DetectionConfig(), run.workers)
    catalog = scenario.catalog()
    single = [p.id for p in scenario.leaf_catalog if p.arity == Arity.SINGLE]
    structures = [leaf(i) for i in single] + scenario.structures
    names = single + [n.name for n in scenario.complex_policies] + ["Y"]
    rows = [
        np.hstack([evaluate_structures(structures, ts, catalog, mode="hard"),
                   gold_labels(ts, scenario)[:, None]])
        for _, ts in corpus if len(ts)
    ]
    samples = np.vstack(rows).astype(int)
    emit({
        "scenario": scenario.id,
        "n_samples": int(len(samples)),
        "chow_liu": chow_liu(samples, names=names).model_dump(mode='json'),
        "greedy": greedy_structure_search(samples, names=names).model_dump(mode='json'),
    })


COMMANDS = {
    "generate": cmd_generate,
    "detect": cmd_detect,
    "train": cmd_train,
    "eval": cmd_eval,
    "summarize": cmd_summarize,
    "structure": cmd_structure,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="Trend summarization tool - detects, ranks and describes trends in time series"
    )
    parser.add_argument('--log-level', default=config.LOG_LEVEL, help='Logging level (default from TRENDSUM_LOG_LEVEL)')
    sub = parser.add_subparsers(dest='subcommand', required=True)

    generate = sub.add_parser('generate', help='Generate a synthetic labelled corpus (JSON lines)')
    generate.add_argument('--seed', type=int, help='Master seed (required)')
    generate.add_argument('--n', type=int, help='Number of series (default 2000)')
    generate.add_argument('--out', '-o', type=Path, help='Dataset file to write')

    detect = sub.add_parser('detect', help='Detect trends in a CSV series (t,value)')
    detect.add_argument('--input', '-i', type=Path, help='CSV file')
    detect.add_argument('--out', '-o', type=Path, help='TrendSet JSON file (default: stdout)')

    train = sub.add_parser('train', help='Train a utility model for a scenario')
    train.add_argument('--input', '-i', type=Path, help='Dataset file')
    train.add_argument('--scenario', '-s', help=f"One of: {', '.join(SCENARIO_IDS)}")
    train.add_argument('--classifier', '-c', default='logistic', help='logistic or naive_bayes')
    train.add_argument('--seed', type=int, help='Seed (required)')
    train.add_argument('--label-noise', type=float, default=0.0, help='Label flip probability')
    train.add_argument('--baselines', action='store_true', help='Also score decision-tree and linear-SVM leaves')
    train.add_argument('--out', '-o', type=Path, help='Model file to write')
    train.add_argument('--report', type=Path, help='Training report file (default: <out>.report.json)')

    evaluate = sub.add_parser('eval', help='Evaluate a model on the held-out fold of a dataset')
    evaluate.add_argument('--input', '-i', type=Path, help='Dataset file')
    evaluate.add_argument('--model', '-m', type=Path, help='Model file')
    evaluate.add_argument('--scenario', '-s', help='Scenario (default: the one the model was trained on)')
    evaluate.add_argument('--seed', type=int, help='Seed recorded in the report')
    evaluate.add_argument('--out', '-o', type=Path, help='Also write the metrics JSON here')

    summary = sub.add_parser('summarize', help='Describe a CSV series in natural language')
    summary.add_argument('--input', '-i', type=Path, help='CSV file')
    summary.add_argument('--model', '-m', type=Path, help='Model file')
    summary.add_argument('--k', '-k', type=int, default=3, help='Number of trends to mention')
    summary.add_argument('--diverse', action='store_true', help='Skip overlapping trends of the same kind')

    structure = sub.add_parser('structure', help='Learn policy structures from a labelled corpus')
    structure.add_argument('--input', '-i', type=Path, help='Dataset file')
    structure.add_argument('--scenario', '-s', help='Scenario providing the policies')

    for command in (generate, detect, train, evaluate, summary, structure):
        command.add_argument('--force', '-f', action='store_true', help='Overwrite existing output files')
        command.add_argument('--workers', type=int, default=config.WORKERS, help='Worker processes')
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point"""
    args = build_parser().parse_args(argv)
    config.configure_logging(args.log_level)
    options = {key: value for key, value in vars(args).items() if key != 'log_level' and value is not None}
    try:
        run = RunConfig(**options)
        COMMANDS[run.subcommand](run)
    except ValidationError as e:
        message = "; ".join(error['msg'] for error in e.errors())
        logger.error(message)
        print(f"Error: {message}", file=sys.stderr)
        return 1
    except (TrendSummaryError, OSError) as e:
        logger.error(str(e))
        print(f"Error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
