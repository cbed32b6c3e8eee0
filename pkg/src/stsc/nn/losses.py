"""Loss functions."""

import numpy as np

from ..errors import DimensionError, EmptyInputError


def mse(pred, target):
    """Mean squared error over all elements and its gradient w.r.t. pred."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise DimensionError(f"shape mismatch: {pred.shape} vs {target.shape}")
    if pred.size == 0:
        raise EmptyInputError("mse of empty arrays")
    diff = pred - target
    loss = float(np.mean(diff * diff))
    grad = (2.0 / diff.size) * diff
    return loss, grad
