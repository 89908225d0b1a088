"""AdaGrad with per-parameter squared-gradient accumulators."""

from __future__ import annotations

import numpy as np


class AdaGrad:
    """accumulator += grad^2; param -= lr * grad / sqrt(accumulator + eps)."""

    def __init__(self, learning_rate: float = 0.1, epsilon: float = 1e-8):
        if learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if epsilon <= 0:
            raise ValueError("epsilon must be positive")
        self.learning_rate = float(learning_rate)
        self.epsilon = float(epsilon)
        self.accumulators: dict[str, np.ndarray] = {}

    def step(self, params: dict, grads: dict) -> None:
        """Update `params` in place from matching `grads` entries."""
        for name, value in params.items():
            grad = grads.get(name)
            if grad is None:
                continue
            if grad.shape != value.shape:
                raise ValueError(
                    f"adagrad: grad shape {grad.shape} != param shape "
                    f"{value.shape} for '{name}'"
                )
            acc = self.accumulators.get(name)
            if acc is None:
                acc = np.zeros_like(value)
                self.accumulators[name] = acc
            g = grad.astype(value.dtype, copy=False)
            acc += g * g
            value -= self.learning_rate * g / np.sqrt(acc + self.epsilon)
