"""Central finite-difference verification of the reverse pass.

Every differentiable operation and every full architecture is checked on a
small random instance. The error of one entry is
``|analytic - numeric| / max(|analytic| + |numeric|, 1e-5)``; an operation
passes when its largest entry stays below the tolerance.
"""

from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from src.logger import get_logger
from .errors import InvalidArgumentError
from .modelparams import TcnConfig, build_model
from .numkernel import (
    ConvParams,
    GradientTape,
    ResidualBlockParams,
    Variable,
    add,
    apply_dropout,
    concat_channels,
    conv1d_causal,
    cross_entropy,
    dilated_residual_block,
    lstm_layer,
    make_dropout_mask,
    relu,
    reverse_pass,
    softmax_rows,
    sum_scalars,
    weighted_sum,
)
from .tcn import dropout_masks
from .training import forward, multi_task_loss

logger = get_logger(__name__)

STEP = 1e-5
TOLERANCE = 1e-4
ERROR_FLOOR = 1e-5

LossFn = Callable[[Dict[str, np.ndarray], Optional[GradientTape]], Variable]


@dataclass(frozen=True)
class GradcheckResult:
    name: str
    max_relative_error: float
    entries: int
    tolerance: float = TOLERANCE

    @property
    def passed(self) -> bool:
        return self.max_relative_error < self.tolerance


@dataclass(frozen=True)
class GradcheckReport:
    seed: int
    frames: int
    width: int
    results: Tuple[GradcheckResult, ...]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    @property
    def failures(self) -> List[str]:
        return [r.name for r in self.results if not r.passed]

    @property
    def max_relative_error(self) -> float:
        return max(r.max_relative_error for r in self.results)

    def to_dict(self):
        return {
            "seed": self.seed,
            "frames": self.frames,
            "width": self.width,
            "tolerance": TOLERANCE,
            "passed": self.passed,
            "results": [{"name": r.name, "max_relative_error": r.max_relative_error, "entries": r.entries,
                         "passed": r.passed} for r in self.results],
        }


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    if analytic.size == 0:
        return 0.0
    scale = np.maximum(np.abs(analytic) + np.abs(numeric), ERROR_FLOOR)
    return float(np.max(np.abs(analytic - numeric) / scale))


def numeric_gradient(loss_fn: LossFn, arrays: Dict[str, np.ndarray], name: str) -> np.ndarray:
    base = arrays[name]
    grad = np.zeros_like(base)
    for index in np.ndindex(base.shape):
        shifted = []
        for sign in (1.0, -1.0):
            nudged = base.copy()
            nudged[index] += sign * STEP
            shifted.append(float(loss_fn({**arrays, name: nudged}, None).data))
        grad[index] = (shifted[0] - shifted[1]) / (2 * STEP)
    return grad


def check_gradients(name: str, loss_fn: LossFn, arrays: Dict[str, np.ndarray], corrupt: bool = False) -> GradcheckResult:
    """Compare the reverse pass of ``loss_fn`` with central differences for every array."""
    tape = GradientTape()
    loss_fn(arrays, tape)
    analytic = reverse_pass(tape)
    worst, entries = 0.0, 0
    for key, value in arrays.items():
        grad = analytic.get(key, np.zeros_like(value))
        if corrupt:
            grad = 1.5 * grad + 1e-2
        worst = max(worst, relative_error(grad, numeric_gradient(loss_fn, arrays, key)))
        entries += value.size
    logger.debug("Gradient check %s: max relative error %.3e over %d entries", name, worst, entries)
    return GradcheckResult(name, worst, entries)


def _leaves(arrays):
    return {name: Variable(value, name=name) for name, value in arrays.items()}


def _away_from_zero(rng, shape, margin=0.1):
    values = rng.standard_normal(shape)
    return np.sign(values) * (margin + np.abs(values))


def _op_cases(rng: np.random.Generator, frames: int, width: int):
    """``(name, loss_fn, arrays)`` for each differentiable operation."""
    classes = 3
    readout = rng.standard_normal((frames, width))
    cases = []

    def conv_loss(a, tape):
        v = _leaves(a)
        out = conv1d_causal(v["x"], ConvParams(v["kernel"], v["bias"], 2), tape)
        return weighted_sum(out, readout, tape)

    cases.append(("conv1d_causal", conv_loss, {
        "x": rng.standard_normal((frames, width)),
        "kernel": rng.standard_normal((width, width, 3)),
        "bias": rng.standard_normal(width),
    }))

    cases.append(("relu", lambda a, tape: weighted_sum(relu(_leaves(a)["x"], tape), readout, tape),
                  {"x": _away_from_zero(rng, (frames, width))}))

    mask = make_dropout_mask(rng, (frames, width), 0.5)
    cases.append(("dropout", lambda a, tape: weighted_sum(apply_dropout(_leaves(a)["x"], mask, 0.5, tape),
                                                          readout, tape),
                  {"x": rng.standard_normal((frames, width))}))

    def add_loss(a, tape):
        v = _leaves(a)
        return weighted_sum(add(v["a"], v["b"], tape), readout, tape)

    cases.append(("add", add_loss, {"a": rng.standard_normal((frames, width)),
                                    "b": rng.standard_normal((frames, width))}))

    concat_readout = rng.standard_normal((frames, width + classes))

    def concat_loss(a, tape):
        v = _leaves(a)
        return weighted_sum(concat_channels([v["a"], v["b"]], tape), concat_readout, tape)

    cases.append(("concat_channels", concat_loss, {"a": rng.standard_normal((frames, width)),
                                                   "b": rng.standard_normal((frames, classes))}))

    cases.append(("softmax_rows", lambda a, tape: weighted_sum(softmax_rows(_leaves(a)["x"], tape), readout, tape),
                  {"x": rng.standard_normal((frames, width))}))

    targets = rng.integers(0, classes, size=frames)
    class_weights = rng.uniform(0.5, 2.0, size=classes)
    cases.append(("softmax_xent",
                  lambda a, tape: cross_entropy(_leaves(a)["logits"], targets, class_weights, tape),
                  {"logits": rng.standard_normal((frames, classes))}))

    cases.append(("weighted_sum", lambda a, tape: weighted_sum(_leaves(a)["x"], readout, tape),
                  {"x": rng.standard_normal((frames, width))}))

    other_readout = rng.standard_normal((frames, width))

    def sum_loss(a, tape):
        v = _leaves(a)
        return sum_scalars([weighted_sum(v["a"], readout, tape), weighted_sum(v["b"], other_readout, tape)], tape)

    cases.append(("sum_scalars", sum_loss, {"a": rng.standard_normal((frames, width)),
                                            "b": rng.standard_normal((frames, width))}))

    block_mask = make_dropout_mask(rng, (frames, width), 0.5)

    def block_loss(a, tape):
        v = _leaves(a)
        block = ResidualBlockParams(v["dilated_kernel"], v["dilated_bias"], v["pointwise_kernel"], v["pointwise_bias"])
        return weighted_sum(dilated_residual_block(v["x"], block, 2, block_mask, 0.5, tape), readout, tape)

    cases.append(("dilated_residual_block", block_loss, {
        "x": rng.standard_normal((frames, width)),
        "dilated_kernel": 0.5 * rng.standard_normal((width, width, 3)),
        "dilated_bias": rng.standard_normal(width),
        "pointwise_kernel": 0.5 * rng.standard_normal((width, width, 1)),
        "pointwise_bias": rng.standard_normal(width),
    }))

    hidden = max(2, width // 2)
    lstm_readout = rng.standard_normal((frames, hidden))

    def lstm_loss(a, tape):
        v = _leaves(a)
        out = lstm_layer(v["x"], v["input_kernel"], v["recurrent_kernel"], v["bias"], tape)
        return weighted_sum(out, lstm_readout, tape)

    cases.append(("lstm_layer", lstm_loss, {
        "x": rng.standard_normal((frames, width)),
        "input_kernel": 0.5 * rng.standard_normal((4 * hidden, width)),
        "recurrent_kernel": 0.5 * rng.standard_normal((4 * hidden, hidden)),
        "bias": 0.1 * rng.standard_normal(4 * hidden),
    }))
    return cases


def _model_cases(rng: np.random.Generator, frames: int, width: int, seed: int):
    """``(name, loss_fn, arrays)`` for each full architecture at toy size."""
    config = TcnConfig(num_phases=3, num_steps=5, input_dim=width, num_stages=2, layers_per_stage=2,
                       filters=width, kernel=3, dropout=0.5, lstm_hidden=max(2, width // 2),
                       framewise_hidden=width)
    features = rng.standard_normal((frames, width))
    phase_labels = rng.integers(0, config.num_phases, size=frames)
    step_labels = rng.integers(0, config.num_steps, size=frames)
    cases = []
    for name, architecture in (("mtms_tcn", "tcn"), ("lstm", "lstm"), ("framewise", "framewise")):
        template = build_model(config, seed, architecture)
        masks = dropout_masks(template, frames, rng) if architecture == "tcn" else None

        def loss_fn(arrays, tape, template=template, masks=masks):
            params = template.with_arrays(arrays)
            outputs = forward(params, features, training=True, masks=masks, tape=tape)
            return multi_task_loss(outputs, phase_labels, step_labels, tape).node

        cases.append((name, loss_fn, dict(template.arrays)))
    return cases


OPERATIONS = ("conv1d_causal", "relu", "dropout", "add", "concat_channels", "softmax_rows", "softmax_xent",
              "weighted_sum", "sum_scalars", "dilated_residual_block", "lstm_layer",
              "mtms_tcn", "lstm", "framewise")


def run_gradcheck(seed: int = 0, frames: int = 8, width: int = 4, corrupt_op: Optional[str] = None) -> GradcheckReport:
    """Check every operation and architecture; ``corrupt_op`` falsifies one analytic gradient."""
    if frames < 1 or width < 1:
        raise InvalidArgumentError("gradient checks need frames >= 1 and width >= 1")
    if corrupt_op is not None and corrupt_op not in OPERATIONS:
        raise InvalidArgumentError(f"unknown operation '{corrupt_op}'; expected one of {OPERATIONS}")
    rng = np.random.default_rng(seed)
    cases = _op_cases(rng, frames, width) + _model_cases(rng, frames, width, seed)
    results = tuple(check_gradients(name, loss_fn, arrays, corrupt=name == corrupt_op)
                    for name, loss_fn, arrays in cases)
    report = GradcheckReport(seed, frames, width, results)
    if report.passed:
        logger.info("Gradient check passed for %d operations (max relative error %.3e)",
                    len(results), report.max_relative_error)
    else:
        logger.warning("Gradient check failed for %s", ", ".join(report.failures))
    return report
