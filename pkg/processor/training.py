"""Losses, the training loop and offline prediction for every architecture."""

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Tuple

import numpy as np

from src.logger import get_logger
from .baselines import forward_framewise, forward_lstm
from .dataset import Dataset, absent_classes, median_frequency_weights
from .errors import InvalidArgumentError, NumericError
from .metrics import dataset_accuracy
from .modelparams import ModelParams, StageOutputs, TcnConfig, build_model
from .numkernel import GradientTape, Variable, cross_entropy, reverse_pass, sum_scalars
from .optim import AdamState, adam_update
from .tcn import forward_mtms_tcn

logger = get_logger(__name__)

SELECTION_METRICS = ("mean_acc", "phase_acc", "step_acc")


def forward(params: ModelParams, features, training: bool = False, rng: Optional[np.random.Generator] = None,
            masks=None, tape: Optional[GradientTape] = None) -> StageOutputs:
    """Dispatch to the forward pass of ``params.architecture``."""
    if params.architecture == "tcn":
        return forward_mtms_tcn(params, features, training=training, rng=rng, masks=masks, tape=tape)
    if params.architecture == "framewise":
        return forward_framewise(params, features, tape=tape)
    if params.architecture == "lstm":
        return forward_lstm(params, features, tape=tape)
    raise InvalidArgumentError(f"unknown architecture '{params.architecture}'")


def predict_sequence(params: ModelParams, features) -> StageOutputs:
    """Offline inference over a whole sequence, every stage included."""
    return forward(params, features, training=False)


@dataclass(frozen=True)
class LossBreakdown:
    """Summed cross-entropy per task plus the per-stage terms it was built from."""

    l_phase: float
    l_step: float
    l_total: float
    per_stage: Tuple[Dict[str, float], ...]
    node: Optional[Variable] = field(default=None, repr=False, compare=False)

    def to_dict(self):
        return {"l_phase": self.l_phase, "l_step": self.l_step, "l_total": self.l_total,
                "per_stage": [dict(s) for s in self.per_stage]}


def multi_task_loss(outputs: StageOutputs, phase_labels, step_labels, tape: Optional[GradientTape] = None,
                    phase_weights=None, step_weights=None) -> LossBreakdown:
    """Cross-entropy of every head of every stage, all terms weighted equally.

    Labels of a task the model does not predict are ignored and may be
    ``None``. Class weights default to none (uniform).
    """
    labels = {"phase": phase_labels, "step": step_labels}
    weights = {"phase": phase_weights, "step": step_weights}
    for task in outputs.tasks:
        if labels[task] is None:
            raise InvalidArgumentError(f"{task} labels are required by this model")

    terms, per_stage = [], []
    for stage in outputs:
        stage_terms = {}
        for task in outputs.tasks:
            term = cross_entropy(stage.nodes[f"{task}_logits"], labels[task], weights[task], tape)
            terms.append(term)
            stage_terms[task] = float(term.data)
        per_stage.append(stage_terms)
    total = sum_scalars(terms, tape)
    l_phase = sum(s.get("phase", 0.0) for s in per_stage)
    l_step = sum(s.get("step", 0.0) for s in per_stage)
    return LossBreakdown(float(l_phase), float(l_step), float(total.data), tuple(per_stage), total)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    lr: float = 3e-4
    seed: int = 0
    selection_metric: str = "mean_acc"
    framewise_lr: float = 1e-5
    framewise_epochs: int = 30
    framewise_weight_decay: float = 5e-5

    def __post_init__(self):
        if self.epochs < 1 or self.framewise_epochs < 1:
            raise InvalidArgumentError("epochs must be >= 1")
        if self.lr <= 0 or self.framewise_lr <= 0:
            raise InvalidArgumentError("learning rates must be positive")
        if self.framewise_weight_decay < 0:
            raise InvalidArgumentError("weight decay must be non-negative")
        if self.selection_metric not in SELECTION_METRICS:
            raise InvalidArgumentError(
                f"selection_metric must be one of {SELECTION_METRICS}, got '{self.selection_metric}'"
            )


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    train_phase_loss: float
    train_step_loss: float
    val_accuracy: Dict[str, float]
    val_score: float
    optimizer_steps: int


@dataclass
class TrainingHistory:
    architecture: str
    records: List[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_score: float = float("-inf")
    class_weights: Dict[str, List[float]] = field(default_factory=dict)
    absent_classes: Dict[str, List[int]] = field(default_factory=dict)

    @property
    def optimizer_steps(self) -> int:
        return self.records[-1].optimizer_steps if self.records else 0

    def to_dict(self):
        return {
            "architecture": self.architecture,
            "best_epoch": self.best_epoch,
            "best_score": self.best_score,
            "optimizer_steps": self.optimizer_steps,
            "class_weights": self.class_weights,
            "absent_classes": self.absent_classes,
            "epochs": [
                {"epoch": r.epoch, "train_loss": r.train_loss, "train_phase_loss": r.train_phase_loss,
                 "train_step_loss": r.train_step_loss, "val_accuracy": dict(r.val_accuracy),
                 "val_score": r.val_score, "optimizer_steps": r.optimizer_steps}
                for r in self.records
            ],
        }


def _check_split(name: str, split: Dataset, config: TcnConfig):
    if len(split) == 0:
        raise InvalidArgumentError(f"{name} split is empty")
    if split.feature_dim != config.input_dim:
        raise InvalidArgumentError(f"{name} features have dimension {split.feature_dim}, config says {config.input_dim}")
    if split.ontology.num_phases != config.num_phases or split.ontology.num_steps != config.num_steps:
        raise InvalidArgumentError(
            f"{name} ontology has {split.ontology.num_phases} phases / {split.ontology.num_steps} steps, "
            f"config expects {config.num_phases} / {config.num_steps}"
        )


def validation_accuracy(params: ModelParams, split: Dataset) -> Dict[str, float]:
    """Per-task mean of per-video frame accuracy of the final stage."""
    predictions = [predict_sequence(params, seq.features) for seq in split]
    return {
        task: dataset_accuracy([seq.labels(task) for seq in split], [out.labels(task) for out in predictions])
        for task in params.config.tasks
    }


def selection_score(accuracy: Mapping[str, float], metric: str) -> float:
    if metric == "mean_acc":
        return sum(accuracy.values()) / len(accuracy)
    task = metric.split("_")[0]
    if task not in accuracy:
        raise InvalidArgumentError(f"selection metric '{metric}' needs the {task} task")
    return accuracy[task]


ProgressCallback = Callable[[int, int, EpochRecord], None]


def _fit(train: Dataset, val: Dataset, config: TcnConfig, architecture: str, epochs: int, seed: int,
         selection_metric: str, optimizer: Dict, class_weights: Mapping[str, Optional[np.ndarray]],
         progress_callback: Optional[ProgressCallback]) -> Tuple[ModelParams, TrainingHistory]:
    _check_split("train", train, config)
    _check_split("val", val, config)
    if selection_metric not in SELECTION_METRICS:
        raise InvalidArgumentError(f"unknown selection metric '{selection_metric}'")

    params = build_model(config, seed, architecture)
    state = AdamState.for_parameters(params.arrays, **optimizer)
    shuffle_seq, dropout_seq = np.random.SeedSequence(seed).spawn(2)
    shuffle_rng = np.random.default_rng(shuffle_seq)
    dropout_rng = np.random.default_rng(dropout_seq)
    history = TrainingHistory(architecture, class_weights={
        task: w.tolist() for task, w in class_weights.items() if w is not None
    }, absent_classes={
        task: absent_classes(w) for task, w in class_weights.items() if w is not None
    })
    best_params = params
    steps = 0

    logger.info("Training %s (%d parameters) on %d videos for %d epochs", architecture,
                params.num_parameters, len(train), epochs)
    for epoch in range(1, epochs + 1):
        totals = np.zeros(3)
        for index in shuffle_rng.permutation(len(train)):
            seq = train.sequences[index]
            tape = GradientTape()
            outputs = forward(params, seq.features, training=True, rng=dropout_rng, tape=tape)
            loss = multi_task_loss(outputs, seq.phase_labels, seq.step_labels, tape,
                                   class_weights.get("phase"), class_weights.get("step"))
            if not np.isfinite(loss.l_total):
                raise NumericError(f"training diverged at epoch {epoch}: loss {loss.l_total} on {seq.video_id}")
            grads = reverse_pass(tape)
            grads = {name: grads.get(name, np.zeros_like(value)) for name, value in params.arrays.items()}
            if not all(np.isfinite(g).all() for g in grads.values()):
                raise NumericError(f"training diverged at epoch {epoch}: non-finite gradient on {seq.video_id}")
            arrays, state = adam_update(dict(params.arrays), grads, state)
            params = params.with_arrays(arrays)
            steps += 1
            totals += (loss.l_total, loss.l_phase, loss.l_step)

        accuracy = validation_accuracy(params, val)
        score = selection_score(accuracy, selection_metric)
        mean_loss = totals / len(train)
        record = EpochRecord(epoch, float(mean_loss[0]), float(mean_loss[1]), float(mean_loss[2]),
                             accuracy, score, steps)
        history.records.append(record)
        if score > history.best_score:
            history.best_score = score
            history.best_epoch = epoch
            best_params = params
        logger.debug("Epoch %d/%d: loss %.5f, val %s", epoch, epochs, record.train_loss, accuracy)
        if progress_callback:
            progress_callback(epoch, epochs, record)

    logger.info("Selected epoch %d with %s %.4f", history.best_epoch, selection_metric, history.best_score)
    return best_params, history


def train_temporal(train: Dataset, val: Dataset, tcn_cfg: TcnConfig, train_cfg: TrainConfig,
                   architecture: str = "tcn",
                   progress_callback: Optional[ProgressCallback] = None) -> Tuple[ModelParams, TrainingHistory]:
    """Unweighted multi-task training, one video per optimizer step, best validation epoch kept."""
    if architecture not in ("tcn", "lstm"):
        raise InvalidArgumentError(f"train_temporal handles tcn and lstm, not '{architecture}'")
    return _fit(train, val, tcn_cfg, architecture, train_cfg.epochs, train_cfg.seed, train_cfg.selection_metric,
                {"lr": train_cfg.lr}, {}, progress_callback)


def train_framewise(train: Dataset, val: Dataset, tcn_cfg: TcnConfig, train_cfg: TrainConfig,
                    progress_callback: Optional[ProgressCallback] = None) -> Tuple[ModelParams, TrainingHistory]:
    """Frame-wise baseline with median-frequency class weights from the training split."""
    if len(train) == 0:
        raise InvalidArgumentError("train split is empty")
    class_weights = {
        task: median_frequency_weights([seq.labels(task) for seq in train], tcn_cfg.num_classes(task))
        for task in tcn_cfg.tasks
    }
    optimizer = {"lr": train_cfg.framewise_lr, "weight_decay": train_cfg.framewise_weight_decay}
    return _fit(train, val, tcn_cfg, "framewise", train_cfg.framewise_epochs, train_cfg.seed,
                train_cfg.selection_metric, optimizer, class_weights, progress_callback)
