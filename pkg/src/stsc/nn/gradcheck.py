"""Finite-difference gradient verification.

The checker is deliberately independent of the backward passes it
validates: it only calls a loss closure, never ``backward``. Analytic
gradients are compared element by element against central differences
with a floored relative error, so both tiny and large gradients are
judged fairly.
"""

import numpy as np


def finite_difference(loss_fn, array, step=1e-5):
    """Central-difference gradient of ``loss_fn()`` w.r.t. ``array`` in place.

    ``loss_fn`` must re-run the forward pass from scratch on each call and
    must depend on ``array`` only through its current contents.
    """
    grad = np.zeros_like(array)
    flat = array.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + step
        plus = loss_fn()
        flat[i] = original - step
        minus = loss_fn()
        flat[i] = original
        gflat[i] = (plus - minus) / (2.0 * step)
    return grad


def max_relative_error(analytic, numeric, floor=1e-5):
    """max |a - n| / max(floor, |a|, |n|) over all elements."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(floor, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / denom))


def check_layer_gradients(make_rng, layer, x_shape=None, x=None, step=1e-5,
                          training=True):
    """Compare every parameter and input gradient of ``layer`` against
    finite differences on a small random problem.

    Returns a dict mapping gradient name ('input' or a parameter name) to
    its maximum relative error. ``make_rng`` must return a fresh,
    identically-seeded generator on every call so stochastic layers
    (dropout) replay the same masks for every loss evaluation. Pass an
    explicit ``x`` for layers whose loss is non-smooth at specific inputs
    (relu at zero) so the probe stays away from those points.
    """
    from .losses import mse

    data_rng = np.random.default_rng(20240331)
    if x is None:
        x = data_rng.standard_normal(x_shape)
    y = layer.forward(x, training=training, rng=make_rng())
    target = data_rng.standard_normal(y.shape)

    def loss_fn():
        out = layer.forward(x, training=training, rng=make_rng())
        return mse(out, target)[0]

    # One analytic pass: forward (to populate caches), then backward.
    out = layer.forward(x, training=training, rng=make_rng())
    loss, dout = mse(out, target)
    dx = layer.backward(dout)

    errors = {"input": max_relative_error(dx, finite_difference(loss_fn, x, step))}
    for name, param, grad in layer.named_params():
        numeric = finite_difference(loss_fn, param, step)
        errors[name] = max_relative_error(grad, numeric)
    return errors
