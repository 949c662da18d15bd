"""Adam optimizer over named parameter arrays."""

from dataclasses import dataclass, field, replace
from typing import Dict

import numpy as np

from .errors import InvalidArgumentError


@dataclass(frozen=True)
class AdamState:
    """Moments and hyperparameters of a bias-corrected Adam optimizer.

    ``weight_decay`` adds ``weight_decay * theta`` to each gradient (L2
    regularization, as in the classic Adam formulation).
    """

    first_moment: Dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: Dict[str, np.ndarray] = field(default_factory=dict)
    step_count: int = 0
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.lr <= 0:
            raise InvalidArgumentError(f"learning rate must be positive, got {self.lr}")
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise InvalidArgumentError("Adam betas must lie strictly between 0 and 1")
        if self.step_count < 0:
            raise InvalidArgumentError("step_count must be non-negative")
        if set(self.first_moment) != set(self.second_moment):
            raise InvalidArgumentError("first and second moments track different parameters")
        for name, moment in self.first_moment.items():
            if moment.shape != self.second_moment[name].shape:
                raise InvalidArgumentError(f"moment shapes differ for '{name}'")

    @classmethod
    def for_parameters(cls, params, **hyper):
        """Zero-initialized state matching ``params`` (a name -> array mapping)."""
        return cls(
            first_moment={name: np.zeros_like(value, dtype=np.float64) for name, value in params.items()},
            second_moment={name: np.zeros_like(value, dtype=np.float64) for name, value in params.items()},
            **hyper,
        )


def adam_update(params, grads, state: AdamState):
    """Return ``(new_params, new_state)`` after one Adam step; inputs are not modified."""
    if set(params) != set(grads):
        missing = sorted(set(params) ^ set(grads))
        raise InvalidArgumentError(f"parameters and gradients disagree on names: {missing}")
    if set(params) != set(state.first_moment):
        raise InvalidArgumentError("optimizer state does not track the given parameters")

    step = state.step_count + 1
    correction1 = 1.0 - state.beta1 ** step
    correction2 = 1.0 - state.beta2 ** step
    new_params, first, second = {}, {}, {}
    for name, value in params.items():
        grad = np.asarray(grads[name], dtype=np.float64)
        if grad.shape != value.shape or state.first_moment[name].shape != value.shape:
            raise InvalidArgumentError(
                f"shape mismatch for '{name}': param {value.shape}, grad {grad.shape}, "
                f"moment {state.first_moment[name].shape}"
            )
        if state.weight_decay:
            grad = grad + state.weight_decay * value
        m = state.beta1 * state.first_moment[name] + (1.0 - state.beta1) * grad
        v = state.beta2 * state.second_moment[name] + (1.0 - state.beta2) * grad * grad
        new_params[name] = value - state.lr * (m / correction1) / (np.sqrt(v / correction2) + state.epsilon)
        first[name] = m
        second[name] = v
    return new_params, replace(state, first_moment=first, second_moment=second, step_count=step)
