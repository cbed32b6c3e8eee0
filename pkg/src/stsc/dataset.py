"""Sample assembly: image-like tensors from the speed matrix.

A sample for target sensor p anchored at time t0 pairs

* ``X`` of shape (timesteps, sensors, 4): column order is the TOPSIS
  neighbor ranking at (p, t0) with p first; channel 0 holds the anchor
  day's trailing history window (t0-dt, t0], channels 1..3 hold windows
  of the days 1, 7, and 14 days earlier centered on the anchor's time of
  day, (t0-dt/2, t0+dt/2]. Time ascends along the first axis.
* ``Y`` of length 12: the target's speeds at t0+5 .. t0+60 minutes.

Values are min-max normalized to [0, 1] by global parameters computed
from the training portion only. The train/test split is chronological
over anchor times.
"""

import json
import logging
import os
from dataclasses import dataclass

import numpy as np

from ._util import atomic_write_bytes
from .data import DAY_END_MIN, DAY_START_MIN, SLOT_MIN
from .errors import (
    ConfigError,
    DegenerateRangeError,
    EmptyInputError,
    InsufficientHistoryError,
    ParseError,
)
from .neighbors import NeighborQuery, TopsisSpec, select_neighbors

log = logging.getLogger("stsc.dataset")

DAY_OFFSETS = (1, 7, 14)       # history days feeding channels 1..3
ARCHIVE_VERSION = 1


@dataclass
class NormalizationParams:
    """Global min/max (mph) over the training portion, for Eq-style
    [0, 1] scaling and its exact inverse."""

    minimum: float
    maximum: float

    def __post_init__(self):
        self.minimum = float(self.minimum)
        self.maximum = float(self.maximum)
        if not self.minimum < self.maximum:
            raise DegenerateRangeError(
                f"normalization range degenerate: [{self.minimum}, {self.maximum}]")


def normalize(values, params, clamp=True):
    """(z - min) / (max - min); out-of-range values clamp to [0, 1]."""
    scaled = (np.asarray(values, dtype=np.float64) - params.minimum) \
        / (params.maximum - params.minimum)
    if clamp:
        scaled = np.clip(scaled, 0.0, 1.0)
    return scaled


def denormalize(values, params):
    """Exact inverse of ``normalize`` for in-range values."""
    return np.asarray(values, dtype=np.float64) \
        * (params.maximum - params.minimum) + params.minimum


@dataclass
class Sample:
    x: np.ndarray              # (timesteps, sensors, 4), normalized
    y: np.ndarray              # (horizon_steps,), normalized
    target: str
    anchor: np.datetime64
    neighbors: list


@dataclass
class DatasetSplit:
    train: list
    test: list
    params: NormalizationParams
    split_fraction: float

    def stacked(self, part):
        samples = self.train if part == "train" else self.test
        if not samples:
            raise EmptyInputError(f"{part} split is empty")
        x = np.stack([s.x for s in samples])
        y = np.stack([s.y for s in samples])
        return x, y


@dataclass
class DatasetConfig:
    history_min: int = 300
    horizon_steps: int = 12
    neighbor_count: int = 10
    distance_km: float = 10.0
    topsis_weights: tuple = (1.0, 1.0, 1.0)
    split_fraction: float = 0.70
    neighbor_refresh: str = "anchor"      # recompute per "anchor" or per "day"
    anchor_stride_min: int = SLOT_MIN     # spacing between consecutive anchors

    def validate(self):
        if self.history_min <= 0 or self.history_min % (2 * SLOT_MIN):
            raise ConfigError("history_min must be a positive multiple of 10")
        if self.horizon_steps < 1:
            raise ConfigError("horizon_steps must be at least 1")
        if self.neighbor_count < 1:
            raise ConfigError("neighbor_count must be at least 1")
        if self.distance_km <= 0:
            raise ConfigError("distance_km must be positive")
        if not 0 < self.split_fraction < 1:
            raise ConfigError("split_fraction must lie in (0, 1)")
        if self.neighbor_refresh not in ("anchor", "day"):
            raise ConfigError("neighbor_refresh must be 'anchor' or 'day'")
        if self.anchor_stride_min < SLOT_MIN or self.anchor_stride_min % SLOT_MIN:
            raise ConfigError(
                f"anchor_stride_min must be a positive multiple of {SLOT_MIN}")
        return self

    @property
    def timesteps(self):
        return self.history_min // SLOT_MIN

    def anchor_minute_range(self):
        """Valid anchor minutes-of-day so every window and the full
        horizon stay inside the 07:00-22:00 grid."""
        first = DAY_START_MIN + self.history_min
        last = DAY_END_MIN - max(self.history_min // 2,
                                 self.horizon_steps * SLOT_MIN)
        return first, last


def _rows_for_times(matrix, times):
    """Row indices of exact timestamps; raises when any is absent."""
    idx = np.searchsorted(matrix.times, times)
    idx = np.minimum(idx, len(matrix.times) - 1)
    found = matrix.times[idx] == times
    if not np.all(found):
        missing = times[~found][0]
        raise InsufficientHistoryError(
            f"matrix has no row for {missing} "
            f"(day {missing.astype('datetime64[D]')})")
    return idx


def _channel_offsets(config):
    dt = config.history_min
    trailing = np.arange(-(dt - SLOT_MIN), 1, SLOT_MIN)
    centered = np.arange(-(dt // 2 - SLOT_MIN), dt // 2 + 1, SLOT_MIN)
    return trailing.astype("timedelta64[m]"), centered.astype("timedelta64[m]")


def build_sample(matrix, network, target, anchor, config=None, params=None,
                 neighbors=None):
    """Assemble one normalized (X, Y) sample.

    ``params`` must be supplied (training computes them first; prediction
    loads them from a checkpoint). Pass ``neighbors`` to reuse a cached
    ranking instead of re-running the selection at this anchor.
    """
    config = (config or DatasetConfig()).validate()
    if params is None:
        raise ConfigError("normalization params required to build a sample")
    anchor = np.datetime64(anchor, "m")

    if neighbors is None:
        ranked = select_neighbors(
            matrix, network,
            NeighborQuery(target, anchor, distance_km=config.distance_km,
                          history_min=config.history_min,
                          count=config.neighbor_count),
            TopsisSpec(weights=tuple(config.topsis_weights)))
        neighbors = ranked.selected
        if ranked.shortfall:
            log.info("neighbor shortfall for %s at %s: %d of %d; padding "
                     "with the last-ranked sensor", target, anchor,
                     len(neighbors), config.neighbor_count)
    if not neighbors:
        raise ConfigError("neighbor list is empty")
    columns = list(neighbors) + [neighbors[-1]] * (config.neighbor_count - len(neighbors))

    trailing, centered = _channel_offsets(config)
    col_idx = [matrix.sensor_column(s) for s in columns]
    x = np.empty((config.timesteps, config.neighbor_count, len(DAY_OFFSETS) + 1))
    rows = _rows_for_times(matrix, anchor + trailing)
    x[:, :, 0] = matrix.values[np.ix_(rows, col_idx)]
    for c, days_back in enumerate(DAY_OFFSETS, start=1):
        day_anchor = anchor - np.timedelta64(days_back * 24 * 60, "m")
        rows = _rows_for_times(matrix, day_anchor + centered)
        x[:, :, c] = matrix.values[np.ix_(rows, col_idx)]

    horizon = (np.arange(1, config.horizon_steps + 1) * SLOT_MIN).astype("timedelta64[m]")
    y_rows = _rows_for_times(matrix, anchor + horizon)
    y = matrix.values[y_rows, matrix.sensor_column(target)]

    if np.isnan(x).any() or np.isnan(y).any():
        raise InsufficientHistoryError(
            f"sample windows for {target!r} at {anchor} contain missing values")
    return Sample(x=normalize(x, params), y=normalize(y, params),
                  target=target, anchor=anchor, neighbors=list(neighbors))


def valid_anchors(matrix, config=None):
    """All anchor times with full history days and in-day window room."""
    config = (config or DatasetConfig()).validate()
    first_min, last_min = config.anchor_minute_range()
    if first_min > last_min:
        return np.array([], dtype="datetime64[m]")
    dates = {d for d, _ in matrix.day_slices()}
    minute = matrix.times.astype(np.int64) % (24 * 60)
    in_range = ((minute >= first_min) & (minute <= last_min)
                & ((minute - first_min) % config.anchor_stride_min == 0))
    anchors = []
    for t in matrix.times[in_range]:
        day = t.astype("datetime64[D]")
        if all(day - np.timedelta64(b, "D") in dates for b in DAY_OFFSETS):
            anchors.append(t)
    return np.array(anchors, dtype="datetime64[m]")


def compute_params(matrix, cutoff_time):
    """Global min/max over every cell at or before the cutoff time."""
    rows = matrix.times <= np.datetime64(cutoff_time, "m")
    pool = matrix.values[rows, :]
    pool = pool[~np.isnan(pool)]
    if pool.size == 0:
        raise EmptyInputError("no values available for normalization")
    return NormalizationParams(float(pool.min()), float(pool.max()))


def build_dataset(matrix, network, targets=None, config=None):
    """Samples for every target sensor at every valid anchor, split
    chronologically; normalization parameters come from the train side
    only (up to the last train anchor plus the prediction horizon)."""
    config = (config or DatasetConfig()).validate()
    if targets is None:
        targets = list(matrix.sensors)
    if not targets:
        raise EmptyInputError("no target sensors")
    for t in targets:
        matrix.sensor_column(t)

    anchors = valid_anchors(matrix, config)
    if len(anchors) == 0:
        raise EmptyInputError("no valid anchors (need 15 days of history "
                              "and in-day window room)")
    n_train_anchors = int(config.split_fraction * len(anchors))
    if n_train_anchors == 0 or n_train_anchors == len(anchors):
        raise EmptyInputError(
            f"split fraction {config.split_fraction} leaves an empty side "
            f"for {len(anchors)} anchors")
    cutoff_anchor = anchors[n_train_anchors - 1]
    params = compute_params(
        matrix, cutoff_anchor + np.timedelta64(config.horizon_steps * SLOT_MIN, "m"))

    train, test = [], []
    skipped = 0
    cache = {}
    for anchor in anchors:
        for target in targets:
            neighbors = None
            if config.neighbor_refresh == "day":
                key = (target, anchor.astype("datetime64[D]"))
                neighbors = cache.get(key)
            try:
                sample = build_sample(matrix, network, target, anchor,
                                      config, params, neighbors=neighbors)
            except InsufficientHistoryError:
                skipped += 1
                continue
            if config.neighbor_refresh == "day":
                cache.setdefault(key, sample.neighbors)
            (train if anchor <= cutoff_anchor else test).append(sample)
    if skipped:
        log.info("skipped %d anchors with incomplete windows", skipped)
    if not train or not test:
        raise EmptyInputError("chronological split produced an empty side")
    return DatasetSplit(train=train, test=test, params=params,
                        split_fraction=config.split_fraction)


def save_dataset(split, directory):
    """Write meta.json plus a flat little-endian float32 blob, one X then
    one Y per sample, in meta order (train first, then test)."""
    os.makedirs(directory, exist_ok=True)
    records, blobs = [], []
    for part, samples in (("train", split.train), ("test", split.test)):
        for s in samples:
            records.append({
                "split": part,
                "target": s.target,
                "anchor": str(s.anchor),
                "neighbors": list(s.neighbors),
            })
            blobs.append(s.x.astype("<f4").tobytes())
            blobs.append(s.y.astype("<f4").tobytes())
    x_shape = list(split.train[0].x.shape) if split.train else []
    y_len = int(len(split.train[0].y)) if split.train else 0
    meta = {
        "version": ARCHIVE_VERSION,
        "x_shape": x_shape,
        "y_len": y_len,
        "normalization": {"min": split.params.minimum, "max": split.params.maximum},
        "split_fraction": split.split_fraction,
        "counts": {"train": len(split.train), "test": len(split.test)},
        "samples": records,
    }
    atomic_write_bytes(os.path.join(directory, "meta.json"),
                       json.dumps(meta, indent=1).encode("utf-8"))
    atomic_write_bytes(os.path.join(directory, "samples.bin"), b"".join(blobs))


def load_dataset(directory):
    meta_path = os.path.join(directory, "meta.json")
    bin_path = os.path.join(directory, "samples.bin")
    try:
        with open(meta_path, encoding="utf-8") as fh:
            meta = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"bad dataset meta: {exc}", path=meta_path) from None
    if meta.get("version") != ARCHIVE_VERSION:
        raise ParseError(f"unsupported dataset version {meta.get('version')!r}",
                         path=meta_path)
    x_shape = tuple(meta["x_shape"])
    y_len = meta["y_len"]
    records = meta["samples"]
    per_sample = int(np.prod(x_shape)) + y_len
    raw = np.fromfile(bin_path, dtype="<f4")
    if raw.size != per_sample * len(records):
        raise ParseError(
            f"samples.bin holds {raw.size} floats, expected "
            f"{per_sample * len(records)}", path=bin_path)
    params = NormalizationParams(meta["normalization"]["min"],
                                 meta["normalization"]["max"])
    train, test = [], []
    for i, rec in enumerate(records):
        chunk = raw[i * per_sample:(i + 1) * per_sample].astype(np.float64)
        sample = Sample(
            x=chunk[:per_sample - y_len].reshape(x_shape),
            y=chunk[per_sample - y_len:],
            target=rec["target"],
            anchor=np.datetime64(rec["anchor"], "m"),
            neighbors=list(rec["neighbors"]),
        )
        (train if rec["split"] == "train" else test).append(sample)
    return DatasetSplit(train=train, test=test, params=params,
                        split_fraction=float(meta["split_fraction"]))
