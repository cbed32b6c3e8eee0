"""Optimizers and training hyperparameters."""

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, StateError


@dataclass
class TrainingConfig:
    """Hyperparameters shared by every training loop in the package."""

    learning_rate: float = 0.001
    batch_size: int = 128
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    dropout_prob: float = 0.2
    epochs: int = 100
    rng_seed: int = 0

    def validate(self):
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")
        if not 0 <= self.beta1 < 1 or not 0 <= self.beta2 < 1:
            raise ConfigError("beta1 and beta2 must lie in [0, 1)")
        if self.epsilon <= 0:
            raise ConfigError("epsilon must be positive")
        if not 0 <= self.dropout_prob < 1:
            raise ConfigError("dropout_prob must lie in [0, 1)")
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative")
        return self


class Adam:
    """Adam with bias-corrected first and second moment estimates.

    Takes (name, param, grad) triples as produced by ``Layer.named_params``;
    updates happen in place on the parameter arrays, so the layer and the
    optimizer always agree on the current values.
    """

    def __init__(self, params, learning_rate=0.001, beta1=0.9, beta2=0.999,
                 epsilon=1e-8):
        if learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if not 0 <= beta1 < 1 or not 0 <= beta2 < 1:
            raise ConfigError("beta1 and beta2 must lie in [0, 1)")
        if epsilon <= 0:
            raise ConfigError("epsilon must be positive")
        self.lr = float(learning_rate)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(epsilon)
        self.t = 0
        self.slots = []
        seen = set()
        for name, param, grad in params:
            if name in seen:
                raise ConfigError(f"duplicate parameter name {name!r}")
            if param.shape != grad.shape:
                raise ConfigError(f"param/grad shape mismatch for {name!r}")
            seen.add(name)
            self.slots.append((name, param, grad,
                               np.zeros_like(param), np.zeros_like(param)))
        if not self.slots:
            raise ConfigError("optimizer received no parameters")

    def step(self):
        """Apply one update using the gradients currently stored in the layers."""
        self.t += 1
        correct1 = 1.0 - self.beta1 ** self.t
        correct2 = 1.0 - self.beta2 ** self.t
        for _, param, grad, m, v in self.slots:
            if not np.all(np.isfinite(grad)):
                raise StateError("non-finite gradient in optimizer step")
            m += (1.0 - self.beta1) * (grad - m)
            v += (1.0 - self.beta2) * (grad * grad - v)
            mhat = m / correct1
            vhat = v / correct2
            param -= self.lr * mhat / (np.sqrt(vhat) + self.eps)
