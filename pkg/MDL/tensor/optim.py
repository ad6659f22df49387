"""Stochastic gradient descent with weight decay."""
from dataclasses import dataclass
from typing import Dict, Optional, Sequence

import numpy as np

from .tensor import NonFiniteError, Parameter


class MissingGradientError(ValueError):
    """A parameter reached the optimizer without a gradient."""


@dataclass(frozen=True)
class SgdConfig:
    """Optimizer settings.

    :param learning_rate: Step size.
    :param weight_decay: Ratio λ of the decay term.
    :param momentum: Heavy-ball momentum; 0 gives plain SGD.
    """

    learning_rate: float = 0.01
    weight_decay: float = 0.01
    momentum: float = 0.0

    def __post_init__(self):
        """Validate."""
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}.")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be >= 0, got {self.weight_decay}.")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}.")


def sgd_step(
    params: Sequence[Parameter],
    grads: Optional[Sequence[np.ndarray]] = None,
    config: SgdConfig = SgdConfig(),
    velocity: Optional[Dict[int, np.ndarray]] = None,
) -> Sequence[Parameter]:
    """Update ``w <- w - lr * (g + λ w)`` in place, then zero the gradients.

    Nothing is updated when any gradient is missing or non-finite.

    :param params: Parameters to update.
    :type params: Sequence[Parameter]
    :param grads: Gradients aligned with ``params``; defaults to ``p.grad``.
    :type grads: Optional[Sequence[np.ndarray]]
    :param config: Optimizer settings.
    :type config: SgdConfig
    :param velocity: Momentum buffers keyed by ``id(param)``, used when momentum > 0.
    :type velocity: Optional[Dict[int, np.ndarray]]
    :rtype: Sequence[Parameter]
    """
    if grads is None:
        grads = [p.grad for p in params]
    for p, g in zip(params, grads):
        if g is None:
            raise MissingGradientError(f"Parameter '{p.name}' {p.shape} has no gradient.")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"Parameter '{p.name}' {p.shape} has a non-finite gradient.")
    for p, g in zip(params, grads):
        step = g + config.weight_decay * p.data
        if config.momentum > 0:
            if velocity is None:
                raise ValueError("Momentum needs a velocity buffer dictionary.")
            v = velocity.get(id(p))
            v = step if v is None else config.momentum * v + step
            velocity[id(p)] = v
            step = v
        p.data -= config.learning_rate * step
        p.grad = np.zeros_like(p.data)
    return params


class SGD:
    """Optimizer object bound to a parameter list.

    :param params: Parameters.
    :type params: Sequence[Parameter]
    :param config: Settings.
    :type config: SgdConfig
    """

    def __init__(self, params: Sequence[Parameter], config: SgdConfig = SgdConfig()):
        """Initialize."""
        self.params = list(params)
        self.config = config
        self.velocity: Dict[int, np.ndarray] = {}

    def zero_grad(self) -> None:
        """Drop gradients before a new backward pass."""
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        """Apply one update."""
        sgd_step(self.params, config=self.config, velocity=self.velocity)
