"""Deterministic numeric core for temporal segmentation models.

Every operation works on ``T x C`` float64 sequences wrapped in
:class:`Variable` nodes. When a :class:`GradientTape` is passed, the
operation records a closure that maps the upstream gradient to gradients of
its inputs; :func:`reverse_pass` replays those closures in reverse order.

Forward passes never use BLAS: products are accumulated one input channel at
a time with element-wise ufuncs. Each output row is then computed by the
same sequence of IEEE operations no matter how many rows are evaluated
together, which is what lets the streaming sessions in
:mod:`processor.online` reproduce offline outputs bit for bit. Backward
passes have no such requirement and use matrix products.
"""

from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from src.logger import get_logger
from .errors import InvalidArgumentError, NumericError, TapeStateError

logger = get_logger(__name__)

DEFAULT_KERNEL = 3
DEFAULT_DROPOUT = 0.5


class Variable:
    """A float64 array participating in a differentiable computation.

    Parameters
    ----------
    data : array-like
        Values of the node.
    name : str, optional
        Parameter name. Named nodes are leaves whose gradients are returned
        by :func:`reverse_pass`.
    requires_grad : bool, optional
        Defaults to ``True`` for named nodes and ``False`` otherwise.
    """

    __slots__ = ("data", "name", "requires_grad")

    def __init__(self, data, name=None, requires_grad=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.name = name
        self.requires_grad = (name is not None) if requires_grad is None else bool(requires_grad)

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Variable(shape={self.data.shape}{label})"


def _as_variable(value) -> Variable:
    return value if isinstance(value, Variable) else Variable(value)


def _as_array(value) -> np.ndarray:
    return value.data if isinstance(value, Variable) else np.asarray(value, dtype=np.float64)


def _check_sequence(data: np.ndarray, op: str) -> None:
    if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
        raise InvalidArgumentError(f"{op}: expected a T x C sequence with T, C >= 1, got shape {data.shape}")
    if not np.isfinite(data).all():
        raise NumericError(f"{op}: input contains non-finite values")


def seq_tensor(data, name=None) -> Variable:
    """Wrap ``data`` as a validated ``T x C`` float64 sequence."""
    var = Variable(data, name=name)
    _check_sequence(var.data, "seq_tensor")
    return var


@dataclass
class TapeEntry:
    op: str
    inputs: Tuple[Variable, ...]
    output: Variable
    backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class GradientTape:
    """Single-use record of differentiable operations in execution order."""

    def __init__(self):
        self._entries = []
        self._consumed = False

    def record(self, op, inputs, output, backward):
        if self._consumed:
            raise TapeStateError("cannot record on a tape that was already reversed")
        self._entries.append(TapeEntry(op, tuple(inputs), output, backward))

    @property
    def consumed(self) -> bool:
        return self._consumed

    @property
    def operations(self):
        """Names of the recorded operations in execution order."""
        return [entry.op for entry in self._entries]

    def __len__(self):
        return len(self._entries)


def _record(tape, op, inputs, output: Variable, backward) -> Variable:
    output.requires_grad = any(inp.requires_grad for inp in inputs)
    if tape is not None and output.requires_grad:
        tape.record(op, inputs, output, backward)
    return output


def reverse_pass(tape: GradientTape, loss_seed: float = 1.0):
    """Back-propagate from the last recorded operation.

    The output of the final recorded operation must be a scalar loss.

    Returns
    -------
    dict[str, numpy.ndarray]
        One gradient per named leaf seen on the tape, in order of first
        use. Parameters the loss does not depend on get zeros.
    """
    if tape.consumed:
        raise TapeStateError("gradient tape already consumed by a reverse pass")
    entries = tape._entries
    if not entries:
        raise TapeStateError("gradient tape is empty")
    loss = entries[-1].output
    if loss.data.size != 1:
        raise InvalidArgumentError(f"reverse pass needs a scalar loss, got shape {loss.data.shape}")

    parameters = {}
    for entry in entries:
        for inp in entry.inputs:
            if inp.name is None or not inp.requires_grad:
                continue
            known = parameters.setdefault(inp.name, inp)
            if known is not inp:
                raise InvalidArgumentError(f"two different leaves share the parameter name '{inp.name}'")

    grads = {id(loss): np.full(loss.data.shape, float(loss_seed))}
    for entry in reversed(entries):
        upstream = grads.pop(id(entry.output), None)
        if upstream is None:
            continue
        for inp, grad in zip(entry.inputs, entry.backward(upstream)):
            if grad is None or not inp.requires_grad:
                continue
            key = id(inp)
            grads[key] = grads[key] + grad if key in grads else grad

    tape._consumed = True
    tape._entries = []
    logger.debug("Reverse pass over %d operations produced %d gradients", len(entries), len(parameters))
    return {
        name: np.asarray(grads.get(id(var), np.zeros_like(var.data)), dtype=np.float64).reshape(var.data.shape)
        for name, var in parameters.items()
    }


# -- forward kernels shared with the streaming sessions ---------------------

def _accumulate_taps(out: np.ndarray, src: np.ndarray, weight: np.ndarray) -> None:
    """``out += src @ weight.T`` summed one input channel at a time."""
    for c in range(src.shape[1]):
        out += src[:, c, None] * weight[:, c]


def affine_rows(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Row-wise ``x @ weight.T + bias`` with row-independent rounding."""
    out = np.empty((x.shape[0], weight.shape[0]))
    out[:] = bias
    _accumulate_taps(out, x, weight)
    return out


def _causal_forward(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray, dilation: int) -> np.ndarray:
    frames = x.shape[0]
    taps = kernel.shape[2]
    out = np.empty((frames, kernel.shape[0]))
    out[:] = bias
    for k in range(taps):
        shift = dilation * (taps - 1 - k)
        if shift >= frames:
            continue
        _accumulate_taps(out[shift:], x[:frames - shift], kernel[:, :, k])
    return out


def causal_conv_step(history, kernel: np.ndarray, bias: np.ndarray, dilation: int) -> np.ndarray:
    """Output row for the newest frame of ``history`` (oldest first).

    ``history`` must hold at least the last ``dilation * (K - 1) + 1`` rows,
    or every row seen so far.
    """
    taps = kernel.shape[2]
    out = np.empty((1, kernel.shape[0]))
    out[:] = bias
    for k in range(taps):
        shift = dilation * (taps - 1 - k)
        if shift >= len(history):
            continue
        _accumulate_taps(out, np.asarray(history[-1 - shift])[None, :], kernel[:, :, k])
    return out


def softmax_probabilities(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    exps = np.exp(shifted)
    totals = exps[:, 0].copy()
    for c in range(1, exps.shape[1]):
        totals += exps[:, c]
    return exps / totals[:, None]


def sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


# -- differentiable operations ----------------------------------------------

@dataclass(frozen=True)
class ConvParams:
    """Weights of a causal 1-D convolution.

    ``kernel`` is ``C_out x C_in x K``; tap ``K - 1`` reads the current frame
    and tap ``k`` reads ``dilation * (K - 1 - k)`` frames back.
    """

    kernel: Variable
    bias: Variable
    dilation: int = 1

    def __post_init__(self):
        object.__setattr__(self, "kernel", _as_variable(self.kernel))
        object.__setattr__(self, "bias", _as_variable(self.bias))
        if self.kernel.data.ndim != 3 or self.kernel.data.shape[2] < 1:
            raise InvalidArgumentError(f"kernel must be C_out x C_in x K, got {self.kernel.data.shape}")
        if self.bias.data.shape != (self.kernel.data.shape[0],):
            raise InvalidArgumentError(
                f"bias shape {self.bias.data.shape} does not match {self.kernel.data.shape[0]} output channels"
            )
        if int(self.dilation) < 1:
            raise InvalidArgumentError(f"dilation must be >= 1, got {self.dilation}")

    @property
    def width(self) -> int:
        return self.kernel.data.shape[2]

    @property
    def in_channels(self) -> int:
        return self.kernel.data.shape[1]

    @property
    def out_channels(self) -> int:
        return self.kernel.data.shape[0]


def conv1d_causal(x, params: ConvParams, tape: Optional[GradientTape] = None) -> Variable:
    """Causal dilated convolution with implicit left zero-padding."""
    x = _as_variable(x)
    _check_sequence(x.data, "conv1d_causal")
    kernel = params.kernel.data
    frames, channels = x.data.shape
    if channels != params.in_channels:
        raise InvalidArgumentError(
            f"conv1d_causal: input has {channels} channels, kernel expects {params.in_channels}"
        )
    dilation = int(params.dilation)
    taps = params.width
    xd = x.data
    out = _causal_forward(xd, kernel, params.bias.data, dilation)

    def backward(grad):
        dx = np.zeros_like(xd)
        dkernel = np.zeros_like(kernel)
        for k in range(taps):
            shift = dilation * (taps - 1 - k)
            if shift >= frames:
                continue
            rows = grad[shift:]
            dkernel[:, :, k] = rows.T @ xd[:frames - shift]
            dx[:frames - shift] += rows @ kernel[:, :, k]
        return dx, dkernel, grad.sum(axis=0)

    return _record(tape, "conv1d_causal", (x, params.kernel, params.bias), Variable(out), backward)


def relu(x, tape: Optional[GradientTape] = None) -> Variable:
    x = _as_variable(x)
    xd = x.data

    def backward(grad):
        return (grad * (xd > 0),)

    return _record(tape, "relu", (x,), Variable(np.maximum(xd, 0.0)), backward)


def make_dropout_mask(rng: np.random.Generator, shape, rate: float = DEFAULT_DROPOUT) -> np.ndarray:
    """Binary keep mask: each unit survives with probability ``1 - rate``."""
    return (rng.random(shape) >= rate).astype(np.float64)


def apply_dropout(x, mask, rate: float = DEFAULT_DROPOUT, tape: Optional[GradientTape] = None) -> Variable:
    """Multiply by a binary keep mask and rescale survivors by ``1 / (1 - rate)``."""
    x = _as_variable(x)
    mask = np.asarray(mask, dtype=np.float64)
    if not 0.0 <= rate < 1.0:
        raise InvalidArgumentError(f"dropout rate must lie in [0, 1), got {rate}")
    if not np.isin(mask, (0.0, 1.0)).all():
        raise InvalidArgumentError("dropout mask must be binary")
    try:
        scale = np.broadcast_to(mask, x.data.shape) / (1.0 - rate)
    except ValueError as exc:
        raise InvalidArgumentError(f"dropout mask shape {mask.shape} does not fit {x.data.shape}") from exc

    def backward(grad):
        return (grad * scale,)

    return _record(tape, "dropout", (x,), Variable(x.data * scale), backward)


def add(a, b, tape: Optional[GradientTape] = None) -> Variable:
    a, b = _as_variable(a), _as_variable(b)
    if a.data.shape != b.data.shape:
        raise InvalidArgumentError(f"add: shapes {a.data.shape} and {b.data.shape} differ")

    def backward(grad):
        return grad, grad

    return _record(tape, "add", (a, b), Variable(a.data + b.data), backward)


def concat_channels(parts, tape: Optional[GradientTape] = None) -> Variable:
    parts = [_as_variable(p) for p in parts]
    frames = {p.data.shape[0] for p in parts}
    if len(frames) != 1:
        raise InvalidArgumentError(f"concat_channels: frame counts differ {sorted(frames)}")
    bounds = np.cumsum([p.data.shape[1] for p in parts])[:-1]

    def backward(grad):
        return tuple(np.split(grad, bounds, axis=1))

    return _record(tape, "concat", tuple(parts), Variable(np.concatenate([p.data for p in parts], axis=1)), backward)


def softmax_rows(x, tape: Optional[GradientTape] = None) -> Variable:
    x = _as_variable(x)
    probs = softmax_probabilities(x.data)

    def backward(grad):
        return (probs * (grad - (grad * probs).sum(axis=1, keepdims=True)),)

    return _record(tape, "softmax", (x,), Variable(probs), backward)


class XentResult(NamedTuple):
    loss: float
    probs: np.ndarray
    grad_logits: np.ndarray


def _check_targets(targets, frames: int, classes: int) -> np.ndarray:
    targets = np.asarray(targets)
    if targets.shape != (frames,):
        raise InvalidArgumentError(f"expected {frames} targets, got shape {targets.shape}")
    if targets.size and (not np.issubdtype(targets.dtype, np.integer)):
        raise InvalidArgumentError("targets must be integer class ids")
    if targets.size and (targets.min() < 0 or targets.max() >= classes):
        raise InvalidArgumentError(f"target ids must lie in [0, {classes})")
    return targets.astype(np.int64)


def softmax_xent(logits, targets, class_weights=None) -> XentResult:
    """Mean (optionally class-weighted) softmax cross-entropy over frames.

    ``loss = (1/T) * sum_t w[y_t] * -log p[t, y_t]``. Zero weights are
    accepted so that classes absent from the training split drop out.
    """
    z = _as_array(logits)
    _check_sequence(z, "softmax_xent")
    frames, classes = z.shape
    targets = _check_targets(targets, frames, classes)
    if class_weights is None:
        weights = np.ones(classes)
    else:
        weights = np.asarray(class_weights, dtype=np.float64)
        if weights.shape != (classes,):
            raise InvalidArgumentError(f"expected {classes} class weights, got shape {weights.shape}")
        if (weights < 0).any() or not np.isfinite(weights).all():
            raise InvalidArgumentError("class weights must be finite and non-negative")

    shifted = z - z.max(axis=1, keepdims=True)
    exps = np.exp(shifted)
    totals = exps.sum(axis=1, keepdims=True)
    probs = exps / totals
    log_probs = shifted - np.log(totals)
    rows = np.arange(frames)
    frame_weights = weights[targets]
    loss = float(np.sum(frame_weights * -log_probs[rows, targets]) / frames)
    grad = probs.copy()
    grad[rows, targets] -= 1.0
    grad *= (frame_weights / frames)[:, None]
    return XentResult(loss, probs, grad)


def cross_entropy(logits, targets, class_weights=None, tape: Optional[GradientTape] = None) -> Variable:
    """Tape-recorded :func:`softmax_xent` returning a scalar loss node."""
    logits = _as_variable(logits)
    result = softmax_xent(logits.data, targets, class_weights)

    def backward(grad):
        return (result.grad_logits * grad,)

    return _record(tape, "softmax_xent", (logits,), Variable(np.array(result.loss)), backward)


def sum_scalars(terms, tape: Optional[GradientTape] = None) -> Variable:
    terms = [_as_variable(t) for t in terms]
    total = np.array(sum(float(t.data) for t in terms))

    def backward(grad):
        return tuple(grad for _ in terms)

    return _record(tape, "sum", tuple(terms), Variable(total), backward)


def weighted_sum(x, weights, tape: Optional[GradientTape] = None) -> Variable:
    """Scalar ``sum(x * weights)``; used to reduce outputs for gradient checks."""
    x = _as_variable(x)
    weights = np.asarray(weights, dtype=np.float64)

    def backward(grad):
        return (grad * weights,)

    return _record(tape, "weighted_sum", (x,), Variable(np.array(np.sum(x.data * weights))), backward)


@dataclass(frozen=True)
class ResidualBlockParams:
    """Weights of one dilated residual layer of width ``F``."""

    dilated_kernel: Variable  # F x F x K
    dilated_bias: Variable
    pointwise_kernel: Variable  # F x F x 1
    pointwise_bias: Variable

    def __post_init__(self):
        for name in ("dilated_kernel", "dilated_bias", "pointwise_kernel", "pointwise_bias"):
            object.__setattr__(self, name, _as_variable(getattr(self, name)))

    @property
    def width(self) -> int:
        return self.dilated_kernel.data.shape[0]

    def dilated(self, dilation: int) -> ConvParams:
        return ConvParams(self.dilated_kernel, self.dilated_bias, dilation)

    def pointwise(self) -> ConvParams:
        return ConvParams(self.pointwise_kernel, self.pointwise_bias, 1)


def dilated_residual_block(x, block: ResidualBlockParams, dilation: int, dropout_mask=None,
                           dropout_rate: float = DEFAULT_DROPOUT,
                           tape: Optional[GradientTape] = None) -> Variable:
    """``x + dropout(pointwise(relu(causal_conv(x, dilation))))``."""
    x = _as_variable(x)
    if x.data.ndim != 2 or x.data.shape[1] != block.width:
        raise InvalidArgumentError(f"residual block of width {block.width} got input shape {x.data.shape}")
    branch = conv1d_causal(x, block.dilated(dilation), tape)
    branch = relu(branch, tape)
    branch = conv1d_causal(branch, block.pointwise(), tape)
    if dropout_mask is not None:
        branch = apply_dropout(branch, dropout_mask, dropout_rate, tape)
    return add(x, branch, tape)


# -- recurrent layer --------------------------------------------------------

def lstm_step(gate_inputs: np.ndarray, hidden: np.ndarray, cell: np.ndarray, recurrent: np.ndarray):
    """Advance one LSTM step.

    ``gate_inputs`` is the precomputed ``W_x x_t + b`` row (gate order
    input, forget, candidate, output).

    Returns
    -------
    tuple
        ``(hidden, cell, gates)`` where ``gates`` caches the activations
        needed by the backward pass.
    """
    z = np.array(gate_inputs, dtype=np.float64)[None, :]
    _accumulate_taps(z, hidden[None, :], recurrent)
    z = z[0]
    size = hidden.shape[0]
    i = sigmoid(z[:size])
    f = sigmoid(z[size:2 * size])
    g = np.tanh(z[2 * size:3 * size])
    o = sigmoid(z[3 * size:])
    cell = f * cell + i * g
    squashed = np.tanh(cell)
    return o * squashed, cell, (i, f, g, o, squashed)


def lstm_layer(x, input_kernel, recurrent_kernel, bias, tape: Optional[GradientTape] = None) -> Variable:
    """Unidirectional LSTM over the whole sequence, starting from zero state.

    ``input_kernel`` is ``4H x D``, ``recurrent_kernel`` is ``4H x H`` and
    ``bias`` has ``4H`` entries. Returns the ``T x H`` hidden states.
    """
    x = _as_variable(x)
    input_kernel, recurrent_kernel, bias = (_as_variable(v) for v in (input_kernel, recurrent_kernel, bias))
    _check_sequence(x.data, "lstm_layer")
    w_in, w_rec, b = input_kernel.data, recurrent_kernel.data, bias.data
    size = w_rec.shape[1]
    if w_in.shape != (4 * size, x.data.shape[1]) or w_rec.shape != (4 * size, size) or b.shape != (4 * size,):
        raise InvalidArgumentError(
            f"lstm_layer: incompatible shapes input {x.data.shape}, W_x {w_in.shape}, W_h {w_rec.shape}, b {b.shape}"
        )
    frames = x.data.shape[0]
    gate_inputs = affine_rows(x.data, w_in, b)
    hiddens = np.zeros((frames, size))
    cells = np.zeros((frames, size))
    caches = []
    hidden = np.zeros(size)
    cell = np.zeros(size)
    for t in range(frames):
        hidden, cell, gates = lstm_step(gate_inputs[t], hidden, cell, w_rec)
        hiddens[t] = hidden
        cells[t] = cell
        caches.append(gates)

    def backward(grad):
        dgates = np.zeros((frames, 4 * size))
        drec = np.zeros_like(w_rec)
        dh_next = np.zeros(size)
        dc_next = np.zeros(size)
        for t in reversed(range(frames)):
            i, f, g, o, squashed = caches[t]
            c_prev = cells[t - 1] if t else np.zeros(size)
            h_prev = hiddens[t - 1] if t else np.zeros(size)
            dh = grad[t] + dh_next
            dc = dh * o * (1.0 - squashed ** 2) + dc_next
            dz = np.concatenate([
                dc * g * i * (1.0 - i),
                dc * c_prev * f * (1.0 - f),
                dc * i * (1.0 - g ** 2),
                dh * squashed * o * (1.0 - o),
            ])
            dgates[t] = dz
            drec += np.outer(dz, h_prev)
            dh_next = w_rec.T @ dz
            dc_next = dc * f
        return dgates @ w_in, dgates.T @ x.data, drec, dgates.sum(axis=0)

    return _record(tape, "lstm", (x, input_kernel, recurrent_kernel, bias), Variable(hiddens), backward)
