"""Streaming inference: one prediction per incoming frame.

A session keeps only the history its model can still read: for a dilated
layer that is ``dilation * (K - 1) + 1`` input rows, for the LSTM the
hidden and cell state. The arithmetic is shared with the offline forward
pass, so the ``t``-th prediction equals frame ``t`` of
:func:`processor.training.predict_sequence` on the full sequence.
"""

from collections import deque
from typing import Dict, Iterable, Iterator, NamedTuple, Optional

import numpy as np

from src.logger import get_logger
from .errors import InvalidArgumentError, NumericError
from .modelparams import ModelParams
from .numkernel import affine_rows, causal_conv_step, lstm_step, softmax_probabilities

logger = get_logger(__name__)


class OnlinePrediction(NamedTuple):
    frame_index: int
    phase_label: Optional[int]
    step_label: Optional[int]
    probabilities: Dict[str, np.ndarray]


class _Session:
    """Shared frame validation and head evaluation."""

    def __init__(self, params: ModelParams, head_prefix: str):
        self.params = params
        self.config = params.config
        self._heads = {
            task: (params.arrays[f"{head_prefix}{task}_head.kernel"], params.arrays[f"{head_prefix}{task}_head.bias"])
            for task in self.config.tasks
        }
        self.frames_seen = 0

    def _row(self, frame) -> np.ndarray:
        row = np.asarray(frame, dtype=np.float64)
        if row.shape != (self.config.input_dim,):
            raise InvalidArgumentError(
                f"frame {self.frames_seen} has shape {row.shape}, model expects ({self.config.input_dim},)"
            )
        if not np.isfinite(row).all():
            raise NumericError(f"frame {self.frames_seen} contains non-finite values")
        return row

    def _heads_for(self, hidden: np.ndarray, heads=None) -> Dict[str, np.ndarray]:
        probs = {}
        for task, (kernel, bias) in (heads or self._heads).items():
            logits = causal_conv_step([hidden], kernel, bias, 1)
            probs[task] = softmax_probabilities(logits)[0]
        return probs

    def _emit(self, probs: Dict[str, np.ndarray]) -> OnlinePrediction:
        labels = {task: int(np.argmax(p)) for task, p in probs.items()}
        prediction = OnlinePrediction(self.frames_seen, labels.get("phase"), labels.get("step"), probs)
        self.frames_seen += 1
        return prediction

    def push(self, frame) -> OnlinePrediction:
        raise NotImplementedError


class TcnSession(_Session):
    """Per-layer ring buffers of residual-block inputs for every stage."""

    def __init__(self, params: ModelParams):
        super().__init__(params, f"stage{params.config.num_stages - 1}.")
        config = self.config
        arrays = params.arrays
        self._stages = []
        for stage in range(config.num_stages):
            prefix = f"stage{stage}."
            layers = []
            for layer, dilation in enumerate(config.dilations):
                name = f"{prefix}layer{layer}."
                layers.append({
                    "dilation": dilation,
                    "history": deque(maxlen=dilation * (config.kernel - 1) + 1),
                    "dilated": (arrays[name + "dilated.kernel"], arrays[name + "dilated.bias"]),
                    "pointwise": (arrays[name + "pointwise.kernel"], arrays[name + "pointwise.bias"]),
                })
            heads = {task: (arrays[f"{prefix}{task}_head.kernel"], arrays[f"{prefix}{task}_head.bias"])
                     for task in config.tasks}
            self._stages.append({
                "input": (arrays[prefix + "input.kernel"], arrays[prefix + "input.bias"]),
                "layers": layers,
                "heads": heads,
            })

    def push(self, frame) -> OnlinePrediction:
        x = self._row(frame)
        probs = None
        for index, stage in enumerate(self._stages):
            if index:
                x = np.concatenate([probs[task] for task in self.config.tasks])
            hidden = causal_conv_step([x], *stage["input"], 1)[0]
            for layer in stage["layers"]:
                layer["history"].append(hidden)
                branch = causal_conv_step(layer["history"], *layer["dilated"], layer["dilation"])
                branch = np.maximum(branch, 0.0)
                branch = causal_conv_step([branch[0]], *layer["pointwise"], 1)
                hidden = hidden + branch[0]
            probs = self._heads_for(hidden, stage["heads"])
        return self._emit(probs)


class LstmSession(_Session):
    def __init__(self, params: ModelParams):
        super().__init__(params, "")
        arrays = params.arrays
        self._input_kernel = arrays["lstm.input_kernel"]
        self._recurrent = arrays["lstm.recurrent_kernel"]
        self._bias = arrays["lstm.bias"]
        self.hidden = np.zeros(self.config.lstm_hidden)
        self.cell = np.zeros(self.config.lstm_hidden)

    def push(self, frame) -> OnlinePrediction:
        x = self._row(frame)
        gate_inputs = affine_rows(x[None, :], self._input_kernel, self._bias)[0]
        self.hidden, self.cell, _ = lstm_step(gate_inputs, self.hidden, self.cell, self._recurrent)
        return self._emit(self._heads_for(self.hidden))


class FramewiseSession(_Session):
    def __init__(self, params: ModelParams):
        super().__init__(params, "")
        self._hidden = (params.arrays["hidden.kernel"], params.arrays["hidden.bias"])

    def push(self, frame) -> OnlinePrediction:
        x = self._row(frame)
        hidden = np.maximum(causal_conv_step([x], *self._hidden, 1), 0.0)[0]
        return self._emit(self._heads_for(hidden))


SESSIONS = {"tcn": TcnSession, "lstm": LstmSession, "framewise": FramewiseSession}


def open_session(params: ModelParams) -> _Session:
    """A fresh inference state; sessions must not be shared between streams."""
    try:
        session_type = SESSIONS[params.architecture]
    except KeyError:
        raise InvalidArgumentError(f"no online session for architecture '{params.architecture}'") from None
    logger.debug("Opened %s online session", params.architecture)
    return session_type(params)


def predict_online(params: ModelParams, frame_source: Iterable) -> Iterator[OnlinePrediction]:
    """Yield a prediction after each frame of ``frame_source``, in arrival order."""
    session = open_session(params)
    for frame in frame_source:
        yield session.push(frame)
