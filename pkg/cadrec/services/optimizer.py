"""Parameter updates with decoupled decay on IA item embeddings."""

import logging

import numpy as np

from cadrec.core.config import HyperParams
from cadrec.core.error_handler import ConfigError
from cadrec.services.encoders import ModelParams
from cadrec.services.objective import check_gradients_finite, decay_item_embeddings, update_step

logger = logging.getLogger(__name__)

ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class Optimizer:
    """
    Plain SGD step. Subclasses change the gradient direction
    only; the IA-only decay is always applied first and scaled by the batch
    multiplicity counts.
    """

    def __init__(self, learning_rate: float, beta2: float, regularizer: str = "squared"):
        self.learning_rate = learning_rate
        self.beta2 = beta2
        self.regularizer = regularizer
        self.steps = 0

    def step(self, params: ModelParams, grads: ModelParams, ia_counts: np.ndarray) -> ModelParams:
        update_step(params, grads, ia_counts, self.learning_rate, self.beta2, self.regularizer)
        self.steps += 1
        return params


class MomentumOptimizer(Optimizer):
    """Heavy-ball momentum: v ← μv + g, θ ← θ - ηv."""

    def __init__(self, learning_rate: float, beta2: float, regularizer: str = "squared", momentum: float = 0.9):
        super().__init__(learning_rate, beta2, regularizer)
        self.momentum = momentum
        self._velocity: ModelParams | None = None

    def step(self, params: ModelParams, grads: ModelParams, ia_counts: np.ndarray) -> ModelParams:
        check_gradients_finite(grads)
        if self._velocity is None:
            self._velocity = grads.zeros_like()
        decay_item_embeddings(params.item_embeddings, ia_counts, self.learning_rate, self.beta2, self.regularizer)
        for name, array in params.tensors().items():
            velocity = getattr(self._velocity, name)
            velocity *= self.momentum
            velocity += getattr(grads, name)
            array -= self.learning_rate * velocity
        self.steps += 1
        return params


class AdamOptimizer(Optimizer):
    """Adam with bias correction; the IA decay stays decoupled from the moments."""

    def __init__(self, learning_rate: float, beta2: float, regularizer: str = "squared", momentum: float = 0.9):
        super().__init__(learning_rate, beta2, regularizer)
        self.beta_first = momentum
        self.beta_second = ADAM_BETA2
        self._first: ModelParams | None = None
        self._second: ModelParams | None = None

    def step(self, params: ModelParams, grads: ModelParams, ia_counts: np.ndarray) -> ModelParams:
        check_gradients_finite(grads)
        if self._first is None or self._second is None:
            self._first = grads.zeros_like()
            self._second = grads.zeros_like()
        self.steps += 1
        decay_item_embeddings(params.item_embeddings, ia_counts, self.learning_rate, self.beta2, self.regularizer)
        first_correction = 1.0 - self.beta_first**self.steps
        second_correction = 1.0 - self.beta_second**self.steps
        for name, array in params.tensors().items():
            grad = getattr(grads, name)
            first = getattr(self._first, name)
            second = getattr(self._second, name)
            first *= self.beta_first
            first += (1.0 - self.beta_first) * grad
            second *= self.beta_second
            second += (1.0 - self.beta_second) * grad * grad
            array -= self.learning_rate * (first / first_correction) / (
                np.sqrt(second / second_correction) + ADAM_EPS
            )
        return params


def build_optimizer(hyper: HyperParams) -> Optimizer:
    """Optimizer selected by `hyper.optimizer`."""
    if hyper.optimizer == "sgd":
        return Optimizer(hyper.learning_rate, hyper.beta2, hyper.regularizer)
    if hyper.optimizer == "momentum":
        return MomentumOptimizer(hyper.learning_rate, hyper.beta2, hyper.regularizer, hyper.momentum)
    if hyper.optimizer == "adam":
        return AdamOptimizer(hyper.learning_rate, hyper.beta2, hyper.regularizer, hyper.momentum)
    raise ConfigError(f"Unknown optimizer '{hyper.optimizer}'", field="optimizer")
