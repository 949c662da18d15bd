"""Frame-wise perceptron and unidirectional LSTM baselines.

Both return a single-stage :class:`StageOutputs` so that losses, training
and evaluation treat every architecture alike.
"""

from typing import Optional

from .errors import InvalidArgumentError
from .modelparams import ModelParams, StageOutputs
from .numkernel import ConvParams, GradientTape, conv1d_causal, lstm_layer, relu
from .tcn import head_outputs, prepare_features


def _require(params: ModelParams, architecture: str):
    if params.architecture != architecture:
        raise InvalidArgumentError(f"expected {architecture} parameters, got '{params.architecture}'")


def forward_framewise(params: ModelParams, features, tape: Optional[GradientTape] = None) -> StageOutputs:
    """Two-layer perceptron applied to every frame independently (D -> hidden -> heads)."""
    _require(params, "framewise")
    x = prepare_features(params, features)
    weights = params.variables()
    hidden = relu(conv1d_causal(x, ConvParams(weights["hidden.kernel"], weights["hidden.bias"]), tape), tape)
    output = head_outputs(hidden, weights, "", params.config.tasks, tape)
    return StageOutputs(params.config.tasks, (output,))


def forward_lstm(params: ModelParams, features, tape: Optional[GradientTape] = None) -> StageOutputs:
    """One LSTM layer over the whole video, front to back, with linear heads on the hidden state."""
    _require(params, "lstm")
    x = prepare_features(params, features)
    weights = params.variables()
    hidden = lstm_layer(x, weights["lstm.input_kernel"], weights["lstm.recurrent_kernel"], weights["lstm.bias"], tape)
    output = head_outputs(hidden, weights, "", params.config.tasks, tape)
    return StageOutputs(params.config.tasks, (output,))
