from dataclasses import dataclass, field
from typing import Dict, Mapping, Tuple

import numpy as np

from app.models.params import ModelParams
from app.utils.errors import ContractViolation


@dataclass
class OptimizerState:
    """Running mean of squared gradients per parameter"""
    square_avg: Dict[str, np.ndarray] = field(default_factory=dict)
    steps: int = 0


def rmsprop_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray],
                 state: OptimizerState, lr: float, rho: float,
                 eps: float) -> Tuple[Dict[str, np.ndarray], OptimizerState]:
    """
    One RMSprop update

    state <- rho * state + (1 - rho) * grad^2
    param <- param - lr * grad / (sqrt(state) + eps)

    Entries whose denominator is exactly zero (zero gradient on a fresh state
    with eps = 0) are left unchanged.

    Returns:
        tuple: Updated parameters and the new optimizer state
    """
    updated, square_avg = {}, {}
    for name, value in params.items():
        if name not in grads:
            raise ContractViolation(f"no gradient for parameter '{name}'")
        grad = np.asarray(grads[name], dtype=np.float64)
        if grad.shape != np.shape(value):
            raise ContractViolation(
                f"gradient shape {grad.shape} does not match parameter '{name}' {np.shape(value)}"
            )
        previous = state.square_avg.get(name)
        if previous is None:
            previous = np.zeros_like(grad)
        avg = rho * previous + (1.0 - rho) * grad * grad
        denom = np.sqrt(avg) + eps
        step = np.divide(grad, denom, out=np.zeros_like(grad), where=denom > 0)
        updated[name] = value - lr * step
        square_avg[name] = avg
    return updated, OptimizerState(square_avg=square_avg, steps=state.steps + 1)


class RMSprop:
    """
    In-place RMSprop over a ModelParams instance

    Parameters with no accumulated gradient are treated as having a zero
    gradient, so their state still decays.
    """

    def __init__(self, params: ModelParams, lr: float = 1e-5, rho: float = 0.99, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.rho = rho
        self.eps = eps
        self.state = OptimizerState()

    def step(self):
        values = {name: tensor.data for name, tensor in self.params.items()}
        grads = {
            name: tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
            for name, tensor in self.params.items()
        }
        updated, self.state = rmsprop_step(values, grads, self.state, self.lr, self.rho, self.eps)
        for name, tensor in self.params.items():
            tensor.data = updated[name]
