"""Spatio-temporal neighbor selection for a target sensor at an anchor time.

Candidates are the sensors within a distance threshold of the target (the
target itself qualifies at distance zero). Each candidate is scored on
three attributes over the trailing history window ending at the anchor:

* Pearson correlation with the target's series (higher is better),
* separation distance in kilometers (lower is better),
* absolute difference of window mean speeds (lower is better).

A TOPSIS ranking over those attributes orders the candidates; the top m
become the sensor columns of a training sample, target first by
dominance.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .data import SLOT_MIN
from .errors import (
    ConfigError,
    DimensionError,
    InsufficientHistoryError,
)

ATTRIBUTE_SIGNS = (1, -1, -1)   # maximize correlation; minimize distance, mean-diff


@dataclass
class NeighborQuery:
    target: str
    anchor: object                 # anything np.datetime64 accepts
    distance_km: float = 10.0
    history_min: int = 300
    count: int = 10

    def validate(self):
        if self.distance_km <= 0:
            raise ConfigError("distance_km must be positive")
        if self.history_min <= 0 or self.history_min % SLOT_MIN:
            raise ConfigError("history_min must be a positive multiple of 5")
        if self.count < 1:
            raise ConfigError("count must be at least 1")
        return self


@dataclass
class TopsisSpec:
    weights: tuple = (1.0, 1.0, 1.0)
    signs: tuple = ATTRIBUTE_SIGNS

    def validate(self):
        if len(self.weights) != len(self.signs):
            raise DimensionError("weights and signs must have equal length")
        if not self.weights or any(w <= 0 for w in self.weights):
            raise ConfigError("weights must be positive")
        if any(s not in (1, -1) for s in self.signs):
            raise ConfigError("signs must be +1 or -1")
        return self


@dataclass
class CandidateAttributes:
    sensor_id: str
    correlation: float
    distance_km: float
    mean_diff: float


@dataclass
class RankedSensors:
    target: str
    anchor: np.datetime64
    ranking: list                  # CandidateAttributes in rank order
    closeness: np.ndarray          # aligned with ranking, non-increasing
    selected: list = field(default_factory=list)
    shortfall: bool = False


def pearson_corr(a, b):
    """Sample Pearson correlation; 0 when either series is constant."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise DimensionError(f"series shapes differ: {a.shape} vs {b.shape}")
    if a.size < 2:
        raise DimensionError("correlation needs at least 2 points")
    am = a - a.mean()
    bm = b - b.mean()
    denom = math.sqrt(float(np.dot(am, am)) * float(np.dot(bm, bm)))
    if denom == 0.0:
        return 0.0
    r = float(np.dot(am, bm)) / denom
    return min(1.0, max(-1.0, r))


def abs_mean_diff(a, b):
    """Absolute difference between the two series means."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise DimensionError(f"series shapes differ: {a.shape} vs {b.shape}")
    if a.size < 1:
        raise DimensionError("mean difference needs at least 1 point")
    return abs(float(a.mean()) - float(b.mean()))


def topsis_rank(attributes, spec=None, labels=None):
    """Rank alternatives by TOPSIS closeness to the ideal solution.

    ``attributes`` is an (alternatives x criteria) matrix. Columns are
    vector-normalized (a zero-norm column stays all-zero), scaled by the
    weights normalized to sum 1, and compared against the per-criterion
    ideal best/worst according to the signs (+1 benefit, -1 cost).
    Closeness is d-/(d+ + d-), with the 0/0 of a single or fully tied
    alternative defined as 0.5.

    Returns (order, closeness): ``order`` lists row indices by descending
    closeness with ties broken by ascending label; ``closeness`` stays in
    input row order.
    """
    spec = (spec or TopsisSpec()).validate()
    a = np.asarray(attributes, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] < 1:
        raise DimensionError(f"attribute matrix must be 2-d, got shape {a.shape}")
    if a.shape[1] != len(spec.weights):
        raise DimensionError(
            f"{a.shape[1]} criteria but {len(spec.weights)} weights")
    if not np.all(np.isfinite(a)):
        raise ConfigError("attributes must be finite")
    if labels is None:
        labels = list(range(a.shape[0]))
    if len(labels) != a.shape[0]:
        raise DimensionError("one label per alternative required")

    norms = np.sqrt((a * a).sum(axis=0))
    normalized = np.divide(a, norms, out=np.zeros_like(a), where=norms > 0)
    weights = np.asarray(spec.weights, dtype=np.float64)
    weighted = normalized * (weights / weights.sum())

    signs = np.asarray(spec.signs)
    best = np.where(signs > 0, weighted.max(axis=0), weighted.min(axis=0))
    worst = np.where(signs > 0, weighted.min(axis=0), weighted.max(axis=0))
    d_best = np.sqrt(((weighted - best) ** 2).sum(axis=1))
    d_worst = np.sqrt(((weighted - worst) ** 2).sum(axis=1))
    total = d_best + d_worst
    closeness = np.divide(d_worst, total, out=np.full(len(a), 0.5), where=total > 0)

    order = sorted(range(a.shape[0]), key=lambda i: (-closeness[i], labels[i]))
    return order, closeness


def select_neighbors(matrix, network, query, spec=None):
    """Rank the sensors near ``query.target`` at ``query.anchor``.

    The history window is the ``query.history_min`` minutes up to and
    including the anchor, which must lie within one calendar day of the
    matrix. Returns a RankedSensors whose ``selected`` prefix holds
    min(count, candidates) sensor ids; ``shortfall`` flags fewer
    candidates than requested.
    """
    query.validate()
    target_col = matrix.sensor_column(query.target)
    target_net = network.index(query.target)
    anchor = np.datetime64(query.anchor, "m")
    row = matrix.row_of(anchor)

    steps = query.history_min // SLOT_MIN
    start = row - steps
    window_start = anchor - np.timedelta64(query.history_min, "m")
    if (start < 0 or matrix.times[start] != window_start
            or matrix.dates()[start] != matrix.dates()[row]):
        raise InsufficientHistoryError(
            f"history window [{window_start}, {anchor}] not covered for "
            f"{query.target!r}")
    window = matrix.values[start:row + 1, :]
    if np.isnan(window).any():
        raise InsufficientHistoryError(
            f"history window [{window_start}, {anchor}] contains missing values")

    candidates = []
    target_series = window[:, target_col]
    for sensor_id in matrix.sensors:
        j_net = network.index(sensor_id)
        km = float(network.distance[target_net, j_net])
        if km >= query.distance_km:
            continue
        series = window[:, matrix.sensor_column(sensor_id)]
        candidates.append(CandidateAttributes(
            sensor_id=sensor_id,
            correlation=pearson_corr(target_series, series),
            distance_km=km,
            mean_diff=abs_mean_diff(target_series, series),
        ))

    attr = np.array([[c.correlation, c.distance_km, c.mean_diff] for c in candidates])
    order, closeness = topsis_rank(attr, spec, labels=[c.sensor_id for c in candidates])
    ranking = [candidates[i] for i in order]
    scores = closeness[order]
    take = min(query.count, len(ranking))
    return RankedSensors(
        target=query.target,
        anchor=anchor,
        ranking=ranking,
        closeness=scores,
        selected=[c.sensor_id for c in ranking[:take]],
        shortfall=len(ranking) < query.count,
    )
