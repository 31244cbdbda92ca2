"""
Optim - Adam optimizer over named parameter tensors
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Mapping, Tuple

import numpy as np

from .errors import CheckpointError, TapeError
from .tensor import Tensor

logger = logging.getLogger(__name__)


@dataclass
class OptimizerState:
    """Per-parameter moment accumulators and the hyper-parameters driving them"""
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    first_moment: Dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: Dict[str, np.ndarray] = field(default_factory=dict)


class Adam:
    """
    Adaptive-moment optimizer with bias correction

    Args:
        params: Registered parameters, keyed by name
        learning_rate: Step size (default 1e-4)
        betas: First and second moment decay rates
        eps: Denominator guard
    """
    def __init__(self, params: Mapping[str, Tensor], learning_rate: float = 1e-4,
                 betas: Tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params: Dict[str, Tensor] = dict(params)
        self.state = OptimizerState(learning_rate=learning_rate, beta1=betas[0], beta2=betas[1], eps=eps)
        for name, param in self.params.items():
            self.state.first_moment[name] = np.zeros_like(param.data)
            self.state.second_moment[name] = np.zeros_like(param.data)
        logger.debug(f"Adam registered {len(self.params)} parameters, lr={learning_rate}")

    def step(self) -> None:
        """
        Apply one bias-corrected update and zero the gradients

        Raises:
            TapeError: If a registered parameter has no gradient
        """
        for name, param in self.params.items():
            if param.grad is None:
                raise TapeError(f"Parameter '{name}' has no gradient; was it used in the loss?")

        state = self.state
        state.step += 1
        correction1 = 1.0 - state.beta1 ** state.step
        correction2 = 1.0 - state.beta2 ** state.step
        for name, param in self.params.items():
            grad = param.grad
            m = state.first_moment[name]
            v = state.second_moment[name]
            m *= state.beta1
            m += (1.0 - state.beta1) * grad
            v *= state.beta2
            v += (1.0 - state.beta2) * grad * grad
            param.data -= state.learning_rate * (m / correction1) / (np.sqrt(v / correction2) + state.eps)
        self.zero_grad()

    def zero_grad(self) -> None:
        for param in self.params.values():
            param.grad = None

    def load_moments(self, step: int, first: Mapping[str, np.ndarray], second: Mapping[str, np.ndarray]) -> None:
        """Restore accumulators saved in a checkpoint"""
        for name, param in self.params.items():
            if name not in first or name not in second:
                raise CheckpointError(f"Optimizer state missing moments for parameter '{name}'")
            if first[name].shape != param.shape or second[name].shape != param.shape:
                raise CheckpointError(f"Optimizer moments for '{name}' do not match shape {param.shape}")
            self.state.first_moment[name] = np.array(first[name], dtype=np.float64)
            self.state.second_moment[name] = np.array(second[name], dtype=np.float64)
        self.state.step = int(step)
