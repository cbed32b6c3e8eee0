"""Error metrics, horizon-wise evaluation, and reference baselines.

Predictions are compared in mph. MAE and RMSE follow the usual
definitions; MAPE is reported in percent and skips entries whose actual
speed is below 1 mph in magnitude (near-zero denominators would dominate
the average), reporting how many were skipped.

Baselines:

* persistence — repeat the last observed speed at every horizon;
* historical average — per horizon step, average the same-time-of-day
  speeds from 1, 7, and 14 days earlier;
* k-nearest-neighbor regression over flattened history vectors with
  inverse-distance weighting;
* a small dense network (60 -> 64 -> 32 -> 12, sigmoid hidden layers)
  trained with the shared Adam engine.
"""

from dataclasses import dataclass

import numpy as np

from .errors import (
    ConfigError,
    DimensionError,
    EmptyInputError,
    InsufficientHistoryError,
    NotFoundError,
)
from .model import train_network
from .nn.layers import Activation, Dense, Sequential

HORIZONS_MIN = (5, 15, 30, 45, 60)
MAPE_MIN_SPEED = 1.0
KNN_EPSILON = 1e-9
KNN_DEFAULT_K = 17
MLP_SIZES = (60, 64, 32, 12)
HISTORY_DAY_OFFSETS = (1, 7, 14)


@dataclass(frozen=True)
class Metrics:
    """Error summary for one horizon: MAE and RMSE in mph, MAPE in percent
    over the entries whose actual speed is at least 1 mph in magnitude."""

    mae: float
    rmse: float
    mape: float
    n: int
    mape_skipped: int = 0


def compute_metrics(actual, predicted):
    """MAE, RMSE, and MAPE (percent) between two equal-length vectors."""
    actual = np.asarray(actual, dtype=np.float64).ravel()
    predicted = np.asarray(predicted, dtype=np.float64).ravel()
    if actual.size == 0:
        raise EmptyInputError("metrics need at least one value")
    if actual.shape != predicted.shape:
        raise DimensionError(
            f"length mismatch: {actual.shape} vs {predicted.shape}")
    diff = np.abs(actual - predicted)
    mae = float(diff.mean())
    rmse = float(np.sqrt(np.mean(diff * diff)))
    keep = np.abs(actual) >= MAPE_MIN_SPEED
    skipped = int(actual.size - keep.sum())
    if keep.any():
        mape = float(np.mean(diff[keep] / np.abs(actual[keep])) * 100.0)
    else:
        mape = float("nan")
    return Metrics(mae=mae, rmse=rmse, mape=mape, n=int(actual.size),
                   mape_skipped=skipped)


def horizon_index(horizon_min, horizon_steps=12):
    """0-based prediction-vector index for a horizon in minutes."""
    if horizon_min % 5 or not 1 <= horizon_min // 5 <= horizon_steps:
        raise ConfigError(
            f"horizon must be a multiple of 5 in [5, {5 * horizon_steps}] "
            f"minutes, got {horizon_min}")
    return horizon_min // 5 - 1


def evaluate_horizons(actual, predicted, horizons=HORIZONS_MIN):
    """Per-horizon metrics for (n, steps) mph matrices: {minutes: Metrics}."""
    actual = np.atleast_2d(np.asarray(actual, dtype=np.float64))
    predicted = np.atleast_2d(np.asarray(predicted, dtype=np.float64))
    if actual.shape != predicted.shape:
        raise DimensionError(
            f"shape mismatch: {actual.shape} vs {predicted.shape}")
    report = {}
    for h in horizons:
        idx = horizon_index(h, actual.shape[1])
        report[h] = compute_metrics(actual[:, idx], predicted[:, idx])
    return report


def _speed_at(matrix, column, when):
    try:
        row = matrix.row_of(when)
    except NotFoundError:
        raise InsufficientHistoryError(
            f"no observation at {np.datetime64(when, 'm')}") from None
    value = matrix.values[row, column]
    if np.isnan(value):
        raise InsufficientHistoryError(
            f"missing speed at {np.datetime64(when, 'm')}")
    return float(value)


def baseline_persistence(matrix, target, anchor, horizon_steps=12):
    """Repeat the speed observed at the anchor time at every horizon."""
    column = matrix.sensor_column(target)
    last = _speed_at(matrix, column, anchor)
    return np.full(horizon_steps, last)


def baseline_history_mean(matrix, target, anchor, horizon_steps=12,
                          day_offsets=HISTORY_DAY_OFFSETS):
    """Average the same-time-of-day speeds from past days, per horizon step."""
    column = matrix.sensor_column(target)
    anchor = np.datetime64(anchor, "m")
    out = np.empty(horizon_steps)
    for i in range(1, horizon_steps + 1):
        when = anchor + np.timedelta64(5 * i, "m")
        values = [_speed_at(matrix, column, when - np.timedelta64(1440 * d, "m"))
                  for d in day_offsets]
        out[i - 1] = np.mean(values)
    return out


def baseline_knn(train_x, train_y, query, k=KNN_DEFAULT_K):
    """Inverse-distance-weighted mean of the k nearest training targets.

    ``train_x`` is (m, d), ``train_y`` is (m, h); ``query`` is one (d,)
    vector or a (q, d) batch. Euclidean distances; an exact match gets the
    finite weight 1/epsilon rather than a division by zero.
    """
    train_x = np.asarray(train_x, dtype=np.float64)
    train_y = np.asarray(train_y, dtype=np.float64)
    if train_x.ndim != 2 or train_y.ndim != 2:
        raise DimensionError("training pairs must be 2-d arrays")
    m = train_x.shape[0]
    if m == 0:
        raise EmptyInputError("kNN needs a non-empty training set")
    if train_y.shape[0] != m:
        raise DimensionError(
            f"inputs/targets disagree on sample count: {m} vs {train_y.shape[0]}")
    if not 1 <= k <= m:
        raise ConfigError(f"k must lie in [1, {m}], got {k}")
    query = np.asarray(query, dtype=np.float64)
    single = query.ndim == 1
    if single:
        query = query[np.newaxis]
    if query.shape[1] != train_x.shape[1]:
        raise DimensionError(
            f"query length {query.shape[1]} != input length {train_x.shape[1]}")
    out = np.empty((query.shape[0], train_y.shape[1]))
    for i, q in enumerate(query):
        dist = np.sqrt(np.sum((train_x - q) ** 2, axis=1))
        nearest = np.argsort(dist, kind="stable")[:k]
        weights = 1.0 / (dist[nearest] + KNN_EPSILON)
        out[i] = weights @ train_y[nearest] / weights.sum()
    return out[0] if single else out


def build_mlp(sizes=MLP_SIZES, *, rng):
    """Dense regression network with sigmoid hidden activations."""
    if len(sizes) < 2:
        raise ConfigError("an MLP needs at least an input and an output size")
    layers, names = [], []
    for i in range(len(sizes) - 1):
        layers.append(Dense(sizes[i], sizes[i + 1], rng=rng))
        names.append(f"dense{i + 1}")
        if i < len(sizes) - 2:
            layers.append(Activation("sigmoid"))
            names.append(f"act{i + 1}")
    return Sequential(layers, names=names)


def baseline_mlp(train_x, train_y, config, *, rng, sizes=None):
    """Train the dense baseline on (m, d) -> (m, h) pairs.

    Returns ``(network, loss_curve)``. Inputs and targets are expected in
    the same normalized space used for the main model.
    """
    train_x = np.asarray(train_x, dtype=np.float64)
    train_y = np.asarray(train_y, dtype=np.float64)
    if sizes is None:
        sizes = (train_x.shape[1], *MLP_SIZES[1:-1], train_y.shape[1])
    net = build_mlp(sizes, rng=rng)
    curve = train_network(net, train_x, train_y, config, tag="mlp")
    return net, curve
