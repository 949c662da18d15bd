"""Multi-task multi-stage causal TCN."""

from typing import Dict, Optional, Tuple

import numpy as np

from src.logger import get_logger
from .errors import InvalidArgumentError
from .modelparams import ModelParams, StageOutput, StageOutputs
from .numkernel import (
    ConvParams,
    GradientTape,
    ResidualBlockParams,
    Variable,
    concat_channels,
    conv1d_causal,
    dilated_residual_block,
    make_dropout_mask,
    seq_tensor,
    softmax_rows,
)

logger = get_logger(__name__)


def prepare_features(params: ModelParams, features) -> Variable:
    """Upcast ``features`` to a float64 sequence and check its width."""
    x = seq_tensor(features.data if isinstance(features, Variable) else features)
    if x.data.shape[1] != params.config.input_dim:
        raise InvalidArgumentError(
            f"features have dimension {x.data.shape[1]}, model expects {params.config.input_dim}"
        )
    return x


def dropout_masks(params: ModelParams, frames: int, rng: np.random.Generator) -> Dict[Tuple[int, int], np.ndarray]:
    """One ``T x F`` keep mask per (stage, layer), drawn in stage-major order."""
    config = params.config
    return {
        (stage, layer): make_dropout_mask(rng, (frames, config.filters), config.dropout)
        for stage in range(config.num_stages)
        for layer in range(config.layers_per_stage)
    }


def head_outputs(hidden: Variable, weights, prefix: str, tasks, tape: Optional[GradientTape]) -> StageOutput:
    """1x1 heads with softmax for every task, read from ``weights`` under ``prefix``."""
    logits, probs = {}, {}
    for task in tasks:
        head = ConvParams(weights[f"{prefix}{task}_head.kernel"], weights[f"{prefix}{task}_head.bias"])
        logits[task] = conv1d_causal(hidden, head, tape)
        probs[task] = softmax_rows(logits[task], tape)
    return StageOutput(
        logits={task: node.data for task, node in logits.items()},
        probs={task: node.data for task, node in probs.items()},
        nodes={**{f"{task}_logits": node for task, node in logits.items()},
               **{f"{task}_probs": node for task, node in probs.items()}},
    )


def forward_mtms_tcn(params: ModelParams, features, training: bool = False,
                     rng: Optional[np.random.Generator] = None, masks=None,
                     tape: Optional[GradientTape] = None) -> StageOutputs:
    """Run every stage; stages after the first read the previous stage's probabilities.

    In training mode dropout masks come from ``masks`` or are drawn from
    ``rng``. Outside training no dropout is applied.
    """
    if params.architecture != "tcn":
        raise InvalidArgumentError(f"expected tcn parameters, got '{params.architecture}'")
    config = params.config
    x = prepare_features(params, features)
    if training and config.dropout > 0 and masks is None:
        if rng is None:
            raise InvalidArgumentError("training mode needs masks or an rng to draw them")
        masks = dropout_masks(params, x.data.shape[0], rng)
    if not training:
        masks = None

    weights = params.variables()
    stages = []
    for stage in range(config.num_stages):
        prefix = f"stage{stage}."
        hidden = conv1d_causal(x, ConvParams(weights[prefix + "input.kernel"], weights[prefix + "input.bias"]), tape)
        for layer, dilation in enumerate(config.dilations):
            name = f"{prefix}layer{layer}."
            block = ResidualBlockParams(
                weights[name + "dilated.kernel"], weights[name + "dilated.bias"],
                weights[name + "pointwise.kernel"], weights[name + "pointwise.bias"],
            )
            mask = masks.get((stage, layer)) if masks else None
            hidden = dilated_residual_block(hidden, block, dilation, mask, config.dropout, tape)
        output = head_outputs(hidden, weights, prefix, config.tasks, tape)
        stages.append(output)
        if stage + 1 < config.num_stages:
            x = concat_channels([output.nodes[f"{task}_probs"] for task in config.tasks], tape)
    return StageOutputs(config.tasks, tuple(stages))
