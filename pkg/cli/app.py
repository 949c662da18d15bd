"""Command-line interface for SegmentMonkey.

Every command merges the settings file, the chosen profile and its own
flags (see :func:`src.settings.load_settings`) and records the merged
settings and seed in each artifact it writes.
"""

import functools
import json
import os

import click

from processor.checkpoint import load_checkpoint, save_checkpoint
from processor.dataset import ONTOLOGY_FILE, kfold_split, load_dataset, read_sequence, write_dataset
from processor.errors import AcceptanceError, FormatError, InvalidArgumentError, NumericError
from processor.experiments import (
    VARIANTS,
    comparison_table,
    crossval,
    evaluate_models,
    stage_name,
    train_variant,
    write_crossval_artifacts,
)
from processor.gradcheck import OPERATIONS, run_gradcheck
from processor.metrics import critical_class_rows, write_label_csv
from processor.modelparams import TASKS, TcnConfig
from processor.online import predict_online
from processor.ontology import default_ontology, read_ontology
from processor.ribbon import export_ribbon
from processor.synthetic import default_synthetic_spec, generate_synthetic
from processor.training import TrainConfig, predict_sequence
from src.file_utils import ensure_directory, write_json
from src.logger import attach_run_log, detach_run_log, get_logger
from src.settings import PROFILES, RunConfig, load_settings
from .progress import format_progress

logger = get_logger(__name__)

EXIT_ARGUMENT = 2
EXIT_IO = 3
EXIT_NUMERIC = 4
EXIT_ACCEPTANCE = 5


def exit_code_for(error: Exception) -> int:
    if isinstance(error, AcceptanceError):
        return EXIT_ACCEPTANCE
    if isinstance(error, NumericError):
        return EXIT_NUMERIC
    if isinstance(error, (FormatError, OSError)):
        return EXIT_IO
    if isinstance(error, ValueError):
        return EXIT_ARGUMENT
    raise error


def handle_errors(command):
    """Log engine failures and turn them into the documented exit codes."""

    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        ctx = click.get_current_context()
        try:
            return command(*args, **kwargs)
        except (AcceptanceError, NumericError, FormatError, OSError, ValueError) as e:
            code = exit_code_for(e)
            logger.error("%s failed: %s", ctx.info_name, e)
            click.echo(f"Error: {e}", err=True)
            ctx.exit(code)

    return wrapper


def merged_settings(ctx, **overrides):
    config_path = ctx.obj.get("config_path")
    if config_path and not os.path.exists(config_path):
        raise FileNotFoundError(f"Settings file not found: {config_path}")
    return load_settings(config_path, ctx.obj.get("profile"), overrides)


def run_record(command: str, settings) -> dict:
    return {"command": command, "seed": settings["seed"], "config": settings}


def model_config(run: RunConfig, ontology) -> TcnConfig:
    return TcnConfig(num_phases=ontology.num_phases, num_steps=ontology.num_steps, **run.model)


def load_run_dataset(run: RunConfig):
    run.require_paths()
    return load_dataset(run.dataset_path, run.ontology_path, run.settings.get("subsample_stride", 1))


def epoch_logger(stage: str, fold=None):
    def callback(epoch, total, record):
        logger.info(format_progress(stage, epoch, total, record.train_loss, record.val_score, fold))

    return callback


@click.group()
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
              help="JSON settings file (defaults to src/settings/settings.json).")
@click.option("--profile", type=click.Choice(sorted(PROFILES)), default=None, help="Settings preset.")
@click.pass_context
def cli(ctx, config_path, profile):
    """Joint phase and step segmentation of feature sequences."""
    ctx.ensure_object(dict)
    ctx.obj["config_path"] = config_path
    ctx.obj["profile"] = profile


@cli.command()
@click.option("--output", "dataset_path", type=click.Path(file_okay=False), default=None,
              help="Dataset directory to write.")
@click.option("--num-videos", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--feature-dim", type=int, default=None)
@click.option("--noise-scale", type=float, default=None)
@click.option("--smoothing-window", type=int, default=None)
@click.option("--fps", type=float, default=None)
@click.pass_context
@handle_errors
def generate(ctx, **overrides):
    """Write a synthetic hierarchical workflow dataset."""
    settings = merged_settings(ctx, **overrides)
    run = RunConfig.from_settings(settings)
    spec = default_synthetic_spec(seed=run.seed, **run.synthetic)
    dataset = generate_synthetic(spec, int(settings["num_videos"]), run.seed)
    write_dataset(dataset, run.dataset_path, metadata={**dataset.metadata, "run": run_record("generate", settings)})

    click.echo(f"Videos: {len(dataset)}")
    click.echo(f"Frames: {dataset.num_frames}")
    for task in TASKS:
        counts = dataset.histogram(task)
        codes = [c.code for c in dataset.ontology.classes(task)]
        click.echo(f"{task} histogram: " + " ".join(f"{code}={int(n)}" for code, n in zip(codes, counts)))
    click.echo(f"Dataset written to {run.dataset_path}")


def _fold_split(dataset, run: RunConfig, fold_index: int):
    plan = kfold_split(dataset.ids, run.folds, run.val_count, run.seed)
    if not 0 <= fold_index < len(plan.folds):
        raise InvalidArgumentError(f"fold must lie in [0, {len(plan.folds)}), got {fold_index}")
    return plan.folds[fold_index]


@cli.command()
@click.option("--model", "variant_name", type=click.Choice(sorted(VARIANTS)), default="mtms-tcn")
@click.option("--fold", "fold_index", type=int, default=0, help="Fold whose train/val split is used.")
@click.option("--dataset", "dataset_path", type=click.Path(), default=None)
@click.option("--output", "output_directory", type=click.Path(file_okay=False), default=None)
@click.option("--epochs", type=int, default=None)
@click.option("--lr", type=float, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--folds", type=int, default=None)
@click.option("--val-count", type=int, default=None)
@click.pass_context
@handle_errors
def train(ctx, variant_name, fold_index, **overrides):
    """Train one model variant on a fold's training split."""
    settings = merged_settings(ctx, **overrides)
    run = RunConfig.from_settings(settings)
    dataset = load_run_dataset(run)
    fold = _fold_split(dataset, run, fold_index)
    variant = VARIANTS[variant_name]
    trained = train_variant(variant, dataset.subset(fold.train), dataset.subset(fold.val),
                            model_config(run, dataset.ontology), TrainConfig(**run.training),
                            epoch_logger("Training", fold.index))

    record = {**run_record("train", settings), "fold": fold.index, "variant": variant_name}
    ensure_directory(run.output_directory)
    saved = {}
    for key, history in trained.histories.items():
        params = trained.models[TASKS[0]] if key == "joint" else trained.models[key]
        suffix = "" if key == "joint" else f"_{key}"
        path = os.path.join(run.output_directory, f"{variant_name}{suffix}.mtck")
        save_checkpoint(params, path, seed=run.seed, metadata={**record, "best_epoch": history.best_epoch})
        saved[key] = history.to_dict()
        click.echo(f"Checkpoint written to {path} (best epoch {history.best_epoch})")
    write_json(os.path.join(run.output_directory, f"{variant_name}_history.json"), {"run": record, "histories": saved})


@cli.command()
@click.option("--checkpoint", "checkpoints", multiple=True, required=True, type=click.Path(dir_okay=False),
              help="Checkpoint to evaluate; pass one per task for single-task models.")
@click.option("--dataset", "dataset_path", type=click.Path(), default=None)
@click.option("--fold", "fold_index", type=int, default=None, help="Evaluate on this fold's test split only.")
@click.option("--report", "report_path", type=click.Path(dir_okay=False), default=None)
@click.option("--seed", type=int, default=None)
@click.option("--folds", type=int, default=None)
@click.option("--val-count", type=int, default=None)
@click.pass_context
@handle_errors
def evaluate(ctx, checkpoints, fold_index, report_path, **overrides):
    """Evaluate checkpoints on a dataset and write a metrics report."""
    settings = merged_settings(ctx, **overrides)
    run = RunConfig.from_settings(settings)
    dataset = load_run_dataset(run)
    if fold_index is not None:
        dataset = dataset.subset(_fold_split(dataset, run, fold_index).test)

    models = {}
    for path in checkpoints:
        params = load_checkpoint(path).params
        for task in params.config.tasks:
            if task in models:
                raise InvalidArgumentError(f"two checkpoints predict the {task} task")
            models[task] = params
    evaluation = evaluate_models(models, dataset)

    report = {
        "checkpoints": list(checkpoints),
        "videos": dataset.ids,
        "stages": [
            {"stage": stage_name(s.stage), "joint_accuracy": s.joint_accuracy,
             **{task: r.to_dict() for task, r in s.reports.items()},
             "critical": {task: critical_class_rows(r, dataset.ontology, task) for task, r in s.reports.items()}}
            for s in evaluation.stages
        ],
        "video_accuracy": evaluation.video_accuracy,
        "violations": list(evaluation.violations),
        "run": run_record("evaluate", settings),
    }
    report_path = report_path or os.path.join(run.output_directory, "evaluation.json")
    write_json(report_path, report)
    final = evaluation.final
    for task, r in final.reports.items():
        click.echo(f"{task}: accuracy {r.accuracy:.4f}, macro F1 {r.macro_f1:.4f}")
    if final.joint_accuracy is not None:
        click.echo(f"joint: accuracy {final.joint_accuracy:.4f}")
    click.echo(f"Report written to {report_path}")
    if evaluation.violations:
        raise AcceptanceError("; ".join(evaluation.violations))


@cli.command(name="crossval")
@click.option("--dataset", "dataset_path", type=click.Path(), default=None)
@click.option("--output", "output_directory", type=click.Path(file_okay=False), default=None)
@click.option("--models", default=None, help="Comma-separated variants, e.g. tcn,mtms-tcn.")
@click.option("--folds", type=int, default=None)
@click.option("--val-count", type=int, default=None)
@click.option("--epochs", type=int, default=None)
@click.option("--framewise-epochs", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--workers", type=int, default=None)
@click.pass_context
@handle_errors
def crossval_command(ctx, models, **overrides):
    """Run k-fold cross-validation over the requested model variants."""
    if models:
        overrides["models"] = [m.strip() for m in models.split(",") if m.strip()]
    settings = merged_settings(ctx, **overrides)
    run = RunConfig.from_settings(settings)
    dataset = load_run_dataset(run)
    plan = kfold_split(dataset.ids, run.folds, run.val_count, run.seed)
    handler = attach_run_log(run.output_directory)
    try:
        result = crossval(dataset, plan, run.models, model_config(run, dataset.ontology),
                          TrainConfig(**run.training), workers=run.workers,
                          progress_callback=epoch_logger("Training"))
    finally:
        detach_run_log(handler)
    paths = write_crossval_artifacts(result, dataset, run.output_directory, run_record("crossval", settings))
    click.echo(comparison_table(result))
    click.echo(f"{len(paths)} artifacts written to {run.output_directory}")
    if result.violations:
        raise AcceptanceError("; ".join(result.violations))


@cli.command()
@click.argument("sequence_path", type=click.Path(dir_okay=False))
@click.option("--checkpoint", "checkpoint_path", required=True, type=click.Path(dir_okay=False))
@click.option("--online", is_flag=True, help="Feed frames one at a time through a streaming session.")
@click.option("--output", "output_path", type=click.Path(dir_okay=False), default=None,
              help="Predictions JSON (defaults next to the output directory).")
@click.option("--csv", "csv_path", type=click.Path(dir_okay=False), default=None, help="Per-frame label CSV.")
@click.option("--ribbon", "ribbon_path", type=click.Path(dir_okay=False), default=None, help="Ribbon SVG.")
@click.pass_context
@handle_errors
def predict(ctx, sequence_path, checkpoint_path, online, output_path, csv_path, ribbon_path):
    """Predict phase and step labels for one sequence file."""
    settings = merged_settings(ctx)
    checkpoint = load_checkpoint(checkpoint_path)
    params = checkpoint.params
    seq = read_sequence(sequence_path)
    if seq.feature_dim != params.config.input_dim:
        raise InvalidArgumentError(
            f"sequence has feature dimension {seq.feature_dim}, checkpoint expects {params.config.input_dim}"
        )

    tasks = params.config.tasks
    if online:
        stream = list(predict_online(params, seq.features))
        labels = {task: [getattr(p, f"{task}_label") for p in stream] for task in tasks}
    else:
        outputs = predict_sequence(params, seq.features)
        labels = {task: outputs.labels(task).tolist() for task in tasks}

    record = {"checkpoint": {"architecture": params.architecture, "config": params.config.to_dict(),
                             "seed": checkpoint.seed},
              "seed": checkpoint.seed, "config": settings}
    payload = {"video_id": seq.video_id, "labels": labels, "run": record}
    output_path = output_path or os.path.join(settings["output_directory"], f"{seq.video_id}_predictions.json")
    write_json(output_path, payload)
    click.echo(f"Predictions written to {output_path}")

    if csv_path:
        columns = {}
        for task in tasks:
            columns[f"{task}_gt"] = seq.labels(task)
            columns[f"{task}_pred"] = labels[task]
        write_label_csv(csv_path, columns)
    if ribbon_path:
        task = "step" if "step" in tasks else tasks[0]
        export_ribbon(seq.labels(task), {params.architecture: labels[task]}, _ontology_for(settings, params),
                      ribbon_path, task=task, title=seq.video_id, description=json.dumps(record, sort_keys=True))
        click.echo(f"Ribbon written to {ribbon_path}")


def _ontology_for(settings, params):
    path = settings.get("ontology_path") or os.path.join(settings["dataset_path"], ONTOLOGY_FILE)
    ontology = read_ontology(path) if os.path.exists(path) else default_ontology()
    if ontology.num_phases != params.config.num_phases or ontology.num_steps != params.config.num_steps:
        raise InvalidArgumentError("ontology does not match the checkpoint's class counts")
    return ontology


@cli.command()
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--frames", type=int, default=8, show_default=True, help="Sequence length of the toy inputs.")
@click.option("--width", type=int, default=4, show_default=True, help="Channel width of the toy inputs.")
@click.option("--report", "report_path", type=click.Path(dir_okay=False), default=None)
@click.option("--corrupt-op", type=click.Choice(OPERATIONS), default=None, hidden=True)
@click.pass_context
@handle_errors
def gradcheck(ctx, seed, frames, width, report_path, corrupt_op):
    """Verify analytic gradients against central finite differences."""
    report = run_gradcheck(seed=seed, frames=frames, width=width, corrupt_op=corrupt_op)
    for result in report.results:
        status = "ok" if result.passed else "FAIL"
        click.echo(f"{result.name:<24} {result.max_relative_error:.3e}  {status}")
    if report_path:
        write_json(report_path, report.to_dict())
    if not report.passed:
        raise AcceptanceError(f"gradient check failed for {', '.join(report.failures)}")


def main():
    cli(obj={})
