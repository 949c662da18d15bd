"""Model configuration, parameter layout and initialization.

Parameters live in an ordered name -> array mapping. The declaration order
produced by :func:`parameter_layout` is the order in which weights are
initialized and the order in which checkpoints store them.
"""

from dataclasses import asdict, dataclass, field, fields
from types import MappingProxyType
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np

from src.logger import get_logger
from .errors import InvalidArgumentError
from .numkernel import Variable

logger = get_logger(__name__)

ARCHITECTURES = ("tcn", "framewise", "lstm")
TASKS = ("phase", "step")


@dataclass(frozen=True)
class TcnConfig:
    """Hyperparameters shared by the TCN and the two baselines.

    ``multi_task=False`` keeps only the ``single_task`` head. Layer ``l`` of a
    stage uses dilation ``2 ** l``.
    """

    num_phases: int = 11
    num_steps: int = 44
    input_dim: int = 2048
    num_stages: int = 2
    layers_per_stage: int = 10
    filters: int = 64
    kernel: int = 3
    dropout: float = 0.5
    multi_task: bool = True
    single_task: str = "phase"
    lstm_hidden: int = 64
    framewise_hidden: int = 256

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.num_phases < 1 or self.num_steps < 1:
            raise InvalidArgumentError(
                f"class counts must be positive, got {self.num_phases} phases and {self.num_steps} steps"
            )
        for name in ("input_dim", "num_stages", "layers_per_stage", "filters", "kernel",
                     "lstm_hidden", "framewise_hidden"):
            if getattr(self, name) < 1:
                raise InvalidArgumentError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not 0.0 <= self.dropout < 1.0:
            raise InvalidArgumentError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.single_task not in TASKS:
            raise InvalidArgumentError(f"single_task must be one of {TASKS}, got '{self.single_task}'")

    @property
    def tasks(self) -> Tuple[str, ...]:
        return TASKS if self.multi_task else (self.single_task,)

    def num_classes(self, task: str) -> int:
        if task == "phase":
            return self.num_phases
        if task == "step":
            return self.num_steps
        raise InvalidArgumentError(f"unknown task '{task}'")

    @property
    def head_width(self) -> int:
        """Width of the probability rows a refinement stage consumes."""
        return sum(self.num_classes(task) for task in self.tasks)

    @property
    def dilations(self) -> List[int]:
        return [2 ** layer for layer in range(self.layers_per_stage)]

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data) -> "TcnConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise InvalidArgumentError(f"unknown TcnConfig fields: {unknown}")
        return cls(**data)


def receptive_field(config: TcnConfig) -> int:
    """Frames that can influence one output of the TCN, all stages included."""
    per_stage = (config.kernel - 1) * (2 ** config.layers_per_stage - 1)
    return 1 + config.num_stages * per_stage


def _conv(name, out_channels, in_channels, width):
    return [(f"{name}.kernel", (out_channels, in_channels, width), in_channels * width),
            (f"{name}.bias", (out_channels,), None)]


def _heads(prefix, config: TcnConfig, in_channels):
    layout = []
    for task in config.tasks:
        layout += _conv(f"{prefix}{task}_head", config.num_classes(task), in_channels, 1)
    return layout


def parameter_layout(config: TcnConfig, architecture: str = "tcn"):
    """``(name, shape, fan_in)`` triples in declaration order; ``fan_in`` is ``None`` for biases."""
    if architecture == "tcn":
        layout = []
        width = config.filters
        for stage in range(config.num_stages):
            in_channels = config.input_dim if stage == 0 else config.head_width
            layout += _conv(f"stage{stage}.input", width, in_channels, 1)
            for layer in range(config.layers_per_stage):
                layout += _conv(f"stage{stage}.layer{layer}.dilated", width, width, config.kernel)
                layout += _conv(f"stage{stage}.layer{layer}.pointwise", width, width, 1)
            layout += _heads(f"stage{stage}.", config, width)
        return layout
    if architecture == "framewise":
        return _conv("hidden", config.framewise_hidden, config.input_dim, 1) + _heads("", config, config.framewise_hidden)
    if architecture == "lstm":
        gates = 4 * config.lstm_hidden
        return [
            ("lstm.input_kernel", (gates, config.input_dim), config.input_dim),
            ("lstm.recurrent_kernel", (gates, config.lstm_hidden), config.lstm_hidden),
            ("lstm.bias", (gates,), None),
        ] + _heads("", config, config.lstm_hidden)
    raise InvalidArgumentError(f"unknown architecture '{architecture}'; expected one of {ARCHITECTURES}")


@dataclass(frozen=True, eq=False)
class ModelParams:
    """Immutable weights of one model in declaration order."""

    architecture: str
    config: TcnConfig
    arrays: Mapping[str, np.ndarray]

    def __post_init__(self):
        layout = parameter_layout(self.config, self.architecture)
        names = [name for name, _, _ in layout]
        if list(self.arrays) != names:
            raise InvalidArgumentError(
                f"{self.architecture} parameters do not follow the declared layout "
                f"(expected {len(names)} arrays, got {len(self.arrays)})"
            )
        frozen = {}
        for name, shape, _ in layout:
            value = np.array(self.arrays[name], dtype=np.float64)
            if value.shape != shape:
                raise InvalidArgumentError(f"parameter '{name}' has shape {value.shape}, expected {shape}")
            if not np.isfinite(value).all():
                raise InvalidArgumentError(f"parameter '{name}' contains non-finite values")
            value.flags.writeable = False
            frozen[name] = value
        object.__setattr__(self, "arrays", MappingProxyType(frozen))

    @property
    def names(self) -> List[str]:
        return list(self.arrays)

    @property
    def num_parameters(self) -> int:
        return int(sum(value.size for value in self.arrays.values()))

    def variables(self) -> Dict[str, Variable]:
        """Fresh named leaves for one forward pass."""
        return {name: Variable(value, name=name) for name, value in self.arrays.items()}

    def with_arrays(self, arrays) -> "ModelParams":
        return ModelParams(self.architecture, self.config, dict(arrays))

    def __eq__(self, other):
        if not isinstance(other, ModelParams):
            return NotImplemented
        return (
            self.architecture == other.architecture
            and self.config == other.config
            and self.names == other.names
            and all(np.array_equal(self.arrays[n], other.arrays[n]) for n in self.names)
        )

    __hash__ = None


def build_model(config: TcnConfig, rng_seed: int, architecture: str = "tcn") -> ModelParams:
    """Kaiming-uniform weights (bound ``1/sqrt(fan_in)``) and zero biases, drawn in declaration order."""
    config.validate()
    rng = np.random.default_rng(rng_seed)
    arrays = {}
    for name, shape, fan_in in parameter_layout(config, architecture):
        if fan_in is None:
            arrays[name] = np.zeros(shape)
        else:
            bound = 1.0 / np.sqrt(fan_in)
            arrays[name] = rng.uniform(-bound, bound, size=shape)
    params = ModelParams(architecture, config, arrays)
    logger.debug("Built %s model with %d parameters (seed %d)", architecture, params.num_parameters, rng_seed)
    return params


def zero_model(config: TcnConfig, architecture: str = "tcn") -> ModelParams:
    return ModelParams(architecture, config, {
        name: np.zeros(shape) for name, shape, _ in parameter_layout(config, architecture)
    })


@dataclass(frozen=True, eq=False)
class StageOutput:
    """Logits and probabilities of one stage, keyed by task."""

    logits: Mapping[str, np.ndarray]
    probs: Mapping[str, np.ndarray]
    nodes: Mapping[str, Variable] = field(default_factory=dict, repr=False)

    @property
    def phase_logits(self) -> Optional[np.ndarray]:
        return self.logits.get("phase")

    @property
    def step_logits(self) -> Optional[np.ndarray]:
        return self.logits.get("step")

    def labels(self, task: str) -> np.ndarray:
        return np.argmax(self.probs[task], axis=1)


@dataclass(frozen=True, eq=False)
class StageOutputs:
    """Per-stage outputs of one forward pass; the last stage is the prediction."""

    tasks: Tuple[str, ...]
    stages: Tuple[StageOutput, ...]

    def __len__(self):
        return len(self.stages)

    def __getitem__(self, index) -> StageOutput:
        return self.stages[index]

    def __iter__(self):
        return iter(self.stages)

    @property
    def final(self) -> StageOutput:
        return self.stages[-1]

    @property
    def num_frames(self) -> int:
        return next(iter(self.final.logits.values())).shape[0]

    def labels(self, task: str, stage: int = -1) -> np.ndarray:
        return self.stages[stage].labels(task)

    def probabilities(self, task: str, stage: int = -1) -> np.ndarray:
        return self.stages[stage].probs[task]
