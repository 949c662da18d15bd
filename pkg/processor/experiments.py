"""Cross-validation of model variants and the comparative studies built on it."""

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from src.file_utils import atomic_write_text, dumps_json, ensure_directory, write_json
from src.logger import get_logger
from .dataset import Dataset, Fold, FoldPlan, kfold_split
from .errors import InvalidArgumentError
from .metrics import (
    FoldAggregate,
    MetricsReport,
    aggregate_folds,
    critical_class_rows,
    dataset_joint_accuracy,
    evaluate_task,
    frame_accuracy,
    rank_videos,
)
from .modelparams import TASKS, ModelParams, TcnConfig
from .ribbon import export_ribbon
from .synthetic import SyntheticSpec, default_synthetic_spec, generate_synthetic, long_range_spec
from .training import TrainConfig, TrainingHistory, predict_sequence, train_framewise, train_temporal

logger = get_logger(__name__)

STAGE_NUMERALS = ("I", "II", "III", "IV", "V", "VI")


@dataclass(frozen=True)
class Variant:
    name: str
    label: str
    architecture: str
    multi_task: bool


VARIANTS = {
    "framewise": Variant("framewise", "Frame-wise", "framewise", False),
    "mt-framewise": Variant("mt-framewise", "MT-Frame-wise", "framewise", True),
    "lstm": Variant("lstm", "LSTM", "lstm", False),
    "mt-lstm": Variant("mt-lstm", "MT-LSTM", "lstm", True),
    "tcn": Variant("tcn", "TCN", "tcn", False),
    "mtms-tcn": Variant("mtms-tcn", "MTMS-TCN", "tcn", True),
}


def resolve_variants(names: Sequence[str]) -> List[Variant]:
    unknown = [n for n in names if n not in VARIANTS]
    if unknown:
        raise InvalidArgumentError(f"unknown model variants {unknown}; expected some of {sorted(VARIANTS)}")
    if not names:
        raise InvalidArgumentError("no model variants requested")
    return [VARIANTS[n] for n in names]


def stage_name(index: int) -> str:
    return "Stage " + (STAGE_NUMERALS[index] if index < len(STAGE_NUMERALS) else str(index + 1))


@dataclass
class TrainedVariant:
    """Models of one variant keyed by the task they predict (one shared model when multi-task)."""

    variant: Variant
    models: Dict[str, ModelParams]
    histories: Dict[str, TrainingHistory]


def variant_configs(variant: Variant, base: TcnConfig) -> Dict[str, TcnConfig]:
    """``{key: config}``; ``key`` is ``"joint"`` for a multi-task variant, else the task."""
    if variant.multi_task:
        return {"joint": replace(base, multi_task=True)}
    return {task: replace(base, multi_task=False, single_task=task) for task in TASKS}


def train_variant(variant: Variant, train: Dataset, val: Dataset, base: TcnConfig, train_cfg: TrainConfig,
                  progress_callback=None) -> TrainedVariant:
    models, histories = {}, {}
    for key, config in variant_configs(variant, base).items():
        if variant.architecture == "framewise":
            params, history = train_framewise(train, val, config, train_cfg, progress_callback)
        else:
            params, history = train_temporal(train, val, config, train_cfg, variant.architecture, progress_callback)
        histories[key] = history
        for task in config.tasks:
            models[task] = params
    return TrainedVariant(variant, models, histories)


@dataclass(frozen=True)
class StageEvaluation:
    stage: int
    reports: Dict[str, MetricsReport]
    joint_accuracy: Optional[float]


@dataclass(frozen=True)
class VariantEvaluation:
    """Test-split metrics of one variant, stage by stage, with final-stage predictions."""

    stages: Tuple[StageEvaluation, ...]
    predictions: Dict[str, Dict[str, np.ndarray]]
    video_accuracy: Dict[str, float]
    violations: Tuple[str, ...] = ()

    @property
    def final(self) -> StageEvaluation:
        return self.stages[-1]


def evaluate_models(models: Mapping[str, ModelParams], test: Dataset) -> VariantEvaluation:
    """Evaluate the task -> model mapping on every video of ``test``.

    Joint accuracy is reported when both tasks are predicted; a stage whose
    joint accuracy exceeds either task accuracy is listed in ``violations``.
    """
    if len(test) == 0:
        raise InvalidArgumentError("test split is empty")
    tasks = [task for task in TASKS if task in models]
    outputs = {}
    for model in {id(m): m for m in models.values()}.values():
        outputs[id(model)] = [predict_sequence(model, seq.features) for seq in test]
    num_stages = {len(outputs[id(models[task])][0]) for task in tasks}
    if len(num_stages) != 1:
        raise InvalidArgumentError("models of one variant disagree on the number of stages")

    stages, violations = [], []
    for stage in range(num_stages.pop()):
        labels = {task: [out.labels(task, stage) for out in outputs[id(models[task])]] for task in tasks}
        reports = {
            task: evaluate_task([seq.labels(task) for seq in test], labels[task], len(test.ontology.classes(task)))
            for task in tasks
        }
        joint = None
        if len(tasks) == 2:
            joint = dataset_joint_accuracy([s.phase_labels for s in test], labels["phase"],
                                           [s.step_labels for s in test], labels["step"])
            ceiling = min(reports["phase"].accuracy, reports["step"].accuracy)
            if joint > ceiling:
                violations.append(f"{stage_name(stage)}: joint accuracy {joint:.6f} exceeds {ceiling:.6f}")
        stages.append(StageEvaluation(stage, reports, joint))

    predictions, video_accuracy = {}, {}
    for index, seq in enumerate(test):
        final = {task: outputs[id(models[task])][index].labels(task) for task in tasks}
        predictions[seq.video_id] = final
        video_accuracy[seq.video_id] = float(np.mean([frame_accuracy(seq.labels(t), final[t]) for t in tasks]))
    return VariantEvaluation(tuple(stages), predictions, video_accuracy, tuple(violations))


@dataclass(frozen=True)
class FoldOutcome:
    fold: Fold
    evaluations: Dict[str, VariantEvaluation]
    histories: Dict[str, Dict[str, TrainingHistory]]


def run_fold(dataset: Dataset, fold: Fold, variants: Sequence[Variant], base: TcnConfig,
             train_cfg: TrainConfig, progress_callback=None) -> FoldOutcome:
    train, val, test = dataset.subset(fold.train), dataset.subset(fold.val), dataset.subset(fold.test)
    evaluations, histories = {}, {}
    for variant in variants:
        logger.info("Fold %d: training %s", fold.index, variant.label)
        trained = train_variant(variant, train, val, base, train_cfg, progress_callback)
        evaluations[variant.name] = evaluate_models(trained.models, test)
        histories[variant.name] = trained.histories
    logger.info("Fold %d finished", fold.index)
    return FoldOutcome(fold, evaluations, histories)


@dataclass(frozen=True)
class StageAggregate:
    stage: int
    tasks: Dict[str, FoldAggregate]
    joint: Optional[FoldAggregate]


@dataclass
class CrossvalResult:
    plan: FoldPlan
    variants: List[Variant]
    folds: List[FoldOutcome]
    aggregates: Dict[str, List[StageAggregate]] = field(default_factory=dict)

    @property
    def violations(self) -> List[str]:
        return [f"fold {outcome.fold.index} {name} {message}"
                for outcome in self.folds
                for name, evaluation in outcome.evaluations.items()
                for message in evaluation.violations]


def aggregate_variant(folds: Sequence[FoldOutcome], name: str) -> List[StageAggregate]:
    rows = []
    for stage in range(len(folds[0].evaluations[name].stages)):
        evaluations = [outcome.evaluations[name].stages[stage] for outcome in folds]
        tasks = {task: aggregate_folds([e.reports[task] for e in evaluations]) for task in evaluations[0].reports}
        joint = None
        if evaluations[0].joint_accuracy is not None:
            joint = aggregate_folds([{"joint_accuracy": e.joint_accuracy} for e in evaluations])
        rows.append(StageAggregate(stage, tasks, joint))
    return rows


def crossval(dataset: Dataset, plan: FoldPlan, variant_names: Sequence[str], base: TcnConfig,
             train_cfg: TrainConfig, workers: int = 1, progress_callback=None) -> CrossvalResult:
    """Train and test every variant on every fold; folds may run in worker threads."""
    variants = resolve_variants(variant_names)
    if len(dataset) < plan.k:
        raise InvalidArgumentError(f"{len(dataset)} videos are fewer than {plan.k} folds")

    def task(fold):
        return run_fold(dataset, fold, variants, base, train_cfg, progress_callback)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            folds = list(pool.map(task, plan.folds))
    else:
        folds = [task(fold) for fold in plan.folds]
    result = CrossvalResult(plan, variants, folds)
    result.aggregates = {variant.name: aggregate_variant(folds, variant.name) for variant in variants}
    return result


def _cell(aggregate: Optional[FoldAggregate], metric: str) -> str:
    if aggregate is None:
        return "-"
    return f"{100 * aggregate.mean[metric]:.2f} ± {100 * aggregate.std[metric]:.2f}"


def comparison_table(result: CrossvalResult) -> str:
    """Markdown table: one row per variant and stage, phase, step and joint columns."""
    header = ["Model", "Stage"]
    for task in TASKS:
        header += [f"{task} ACC", f"{task} PR", f"{task} RE", f"{task} F1"]
    header.append("joint ACC")
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    for variant in result.variants:
        stages = result.aggregates[variant.name]
        for row in stages:
            cells = [variant.label, stage_name(row.stage) if len(stages) > 1 else "-"]
            for task in TASKS:
                aggregate = row.tasks.get(task)
                cells += [_cell(aggregate, m) for m in ("accuracy", "macro_precision", "macro_recall", "macro_f1")]
            cells.append(_cell(row.joint, "joint_accuracy"))
            lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def _fold_record(outcome: FoldOutcome, dataset: Dataset, run_record: Dict):
    variants = {}
    for name, evaluation in outcome.evaluations.items():
        variants[name] = {
            "stages": [
                {
                    "stage": stage_name(stage.stage),
                    "joint_accuracy": stage.joint_accuracy,
                    **{task: report.to_dict() for task, report in stage.reports.items()},
                    "critical": {task: critical_class_rows(report, dataset.ontology, task)
                                 for task, report in stage.reports.items()},
                }
                for stage in evaluation.stages
            ],
            "video_accuracy": evaluation.video_accuracy,
            "violations": list(evaluation.violations),
            "training": {key: history.to_dict() for key, history in outcome.histories[name].items()},
        }
    fold = outcome.fold
    return {"fold": fold.index, "test": list(fold.test), "train": list(fold.train), "val": list(fold.val),
            "variants": variants, "run": run_record}


def write_crossval_artifacts(result: CrossvalResult, dataset: Dataset, directory, run_record: Dict,
                             ribbon_count: int = 1) -> List[str]:
    """Fold reports, the aggregate, the comparison table and best/worst ribbons."""
    ensure_directory(directory)
    paths = []
    for outcome in result.folds:
        path = os.path.join(directory, f"fold_{outcome.fold.index}.json")
        write_json(path, _fold_record(outcome, dataset, run_record))
        paths.append(path)

    aggregate = {
        "plan": result.plan.to_dict(),
        "variants": {
            name: [{"stage": stage_name(row.stage),
                    **{task: agg.to_dict() for task, agg in row.tasks.items()},
                    "joint": row.joint.to_dict() if row.joint else None}
                   for row in rows]
            for name, rows in result.aggregates.items()
        },
        "violations": result.violations,
        "run": run_record,
    }
    path = os.path.join(directory, "aggregate.json")
    write_json(path, aggregate)
    paths.append(path)

    table = comparison_table(result)
    footer = "\nRun configuration (seed {}):\n\n```json\n{}\n```\n".format(
        run_record.get("seed"), dumps_json(run_record).rstrip("\n"))
    path = os.path.join(directory, "comparison.md")
    atomic_write_text(path, table + footer)
    paths.append(path)
    paths += write_ribbons(result, dataset, os.path.join(directory, "ribbons"), run_record, ribbon_count)
    return paths


def write_ribbons(result: CrossvalResult, dataset: Dataset, directory, run_record: Dict, count: int = 1) -> List[str]:
    """Ribbons of the best and worst test videos of the last variant, every variant as a row."""
    reference = result.variants[-1].name
    accuracy, predictions = {}, {}
    for outcome in result.folds:
        accuracy.update(outcome.evaluations[reference].video_accuracy)
        for name, evaluation in outcome.evaluations.items():
            for video, labels in evaluation.predictions.items():
                predictions.setdefault(video, {})[name] = labels
    best, worst = rank_videos(accuracy, count)
    description = json.dumps(run_record, sort_keys=True)
    paths = []
    for rank, videos in (("best", best), ("worst", worst)):
        for video in videos:
            seq = dataset.by_id(video)
            for task in TASKS:
                rows = {VARIANTS[name].label: labels[task] for name, labels in predictions[video].items()
                        if task in labels}
                path = os.path.join(directory, f"{rank}_{video}_{task}.svg")
                export_ribbon(seq.labels(task), rows, dataset.ontology, path, task=task,
                              title=f"{video} ({task})", description=description)
                paths.append(path)
    return paths


# -- directional studies ----------------------------------------------------

@dataclass(frozen=True)
class StudyResult:
    name: str
    seeds: Tuple[int, ...]
    values: Dict[str, List[float]]
    summary: Dict[str, float]
    passed: bool

    def to_dict(self):
        return {"name": self.name, "seeds": list(self.seeds), "values": self.values,
                "summary": self.summary, "passed": self.passed}


def _study_split(dataset: Dataset, seed: int, val_count: int = 1) -> Fold:
    return kfold_split(dataset.ids, 4, val_count, seed).folds[0]


def study_config(dataset: Dataset, **overrides) -> TcnConfig:
    return TcnConfig(num_phases=dataset.ontology.num_phases, num_steps=dataset.ontology.num_steps,
                     input_dim=dataset.feature_dim, **overrides)


def multitask_advantage(seeds: Sequence[int], num_videos: int = 8, feature_dim: int = 64,
                        train_cfg: Optional[TrainConfig] = None, spec_factory: Optional[Callable] = None,
                        **model_overrides) -> StudyResult:
    """Joint accuracy of the multi-task TCN against a pair of single-task TCNs, per seed.

    Passes when the median difference is non-negative and the multi-task
    model's joint accuracy stays within 5 points of its step accuracy
    (median over seeds).
    """
    train_cfg = train_cfg or TrainConfig(epochs=20)
    spec_factory = spec_factory or (lambda seed: default_synthetic_spec(feature_dim=feature_dim, seed=seed))
    values = {"multi_task_joint": [], "single_task_joint": [], "difference": [], "step_gap": []}
    for seed in seeds:
        dataset = generate_synthetic(spec_factory(seed), num_videos, seed)
        fold = _study_split(dataset, seed)
        train, val, test = dataset.subset(fold.train), dataset.subset(fold.val), dataset.subset(fold.test)
        base = study_config(dataset, **model_overrides)
        cfg = replace(train_cfg, seed=seed)
        joint = {}
        steps = None
        for name in ("tcn", "mtms-tcn"):
            evaluation = evaluate_models(train_variant(VARIANTS[name], train, val, base, cfg).models, test)
            joint[name] = evaluation.final.joint_accuracy
            if name == "mtms-tcn":
                steps = evaluation.final.reports["step"].accuracy
        values["multi_task_joint"].append(joint["mtms-tcn"])
        values["single_task_joint"].append(joint["tcn"])
        values["difference"].append(joint["mtms-tcn"] - joint["tcn"])
        values["step_gap"].append(abs(steps - joint["mtms-tcn"]))
        logger.info("Seed %d: joint accuracy multi-task %.4f, single-task %.4f", seed, joint["mtms-tcn"], joint["tcn"])
    summary = {"median_difference": float(np.median(values["difference"])),
               "median_step_gap": float(np.median(values["step_gap"]))}
    passed = summary["median_difference"] >= 0 and summary["median_step_gap"] <= 0.05
    return StudyResult("multitask_advantage", tuple(seeds), values, summary, passed)


def tcn_vs_lstm(seeds: Sequence[int], num_videos: int = 8, feature_dim: int = 64,
                train_cfg: Optional[TrainConfig] = None, spec_factory: Optional[Callable[[int], SyntheticSpec]] = None,
                **model_overrides) -> StudyResult:
    """Step accuracy of a single-task TCN against the LSTM baseline on long-dwell data."""
    train_cfg = train_cfg or TrainConfig(epochs=20, selection_metric="step_acc")
    spec_factory = spec_factory or (lambda seed: long_range_spec(feature_dim=feature_dim, seed=seed))
    values = {"tcn_step": [], "lstm_step": []}
    for seed in seeds:
        dataset = generate_synthetic(spec_factory(seed), num_videos, seed)
        fold = _study_split(dataset, seed)
        train, val, test = dataset.subset(fold.train), dataset.subset(fold.val), dataset.subset(fold.test)
        cfg = replace(train_cfg, seed=seed)
        config = study_config(dataset, multi_task=False, single_task="step", **model_overrides)
        for architecture, key in (("tcn", "tcn_step"), ("lstm", "lstm_step")):
            params, _ = train_temporal(train, val, config, cfg, architecture)
            values[key].append(evaluate_models({"step": params}, test).final.reports["step"].accuracy)
        logger.info("Seed %d: step accuracy TCN %.4f, LSTM %.4f", seed, values["tcn_step"][-1], values["lstm_step"][-1])
    summary = {"median_tcn_step": float(np.median(values["tcn_step"])),
               "median_lstm_step": float(np.median(values["lstm_step"]))}
    passed = summary["median_tcn_step"] >= summary["median_lstm_step"]
    return StudyResult("tcn_vs_lstm", tuple(seeds), values, summary, passed)
