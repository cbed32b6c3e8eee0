"""Speed-record ingestion, cleaning, and synthetic data generation.

The central container is a ``SpeedMatrix``: a (times x sensors) float64
array with NaN as the missing-value marker. Only the 07:00-22:00 window
of each day is represented; rows outside it are discarded at ingestion.
Cleaning operates strictly within calendar days: interpolation and
outlier windows never bridge the overnight gap.
"""

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    ConfigError,
    CoordinateError,
    DimensionError,
    DuplicateRecordError,
    NotFoundError,
    ParseError,
)

EARTH_RADIUS_KM = 6371.0
DAY_START_MIN = 7 * 60
DAY_END_MIN = 22 * 60
SLOT_MIN = 5
SLOTS_PER_DAY = (DAY_END_MIN - DAY_START_MIN) // SLOT_MIN + 1

SPEEDS_HEADER = ["timestamp", "sensor_id", "speed_mph"]
SENSORS_HEADER = ["sensor_id", "latitude", "longitude", "highway", "direction"]
DISTANCES_HEADER = ["from_id", "to_id", "km"]


@dataclass
class SpeedMatrix:
    """Speed values on a uniform 5-minute grid, one column per sensor."""

    times: np.ndarray        # datetime64[m], strictly increasing
    sensors: list            # sensor ids, column order
    values: np.ndarray       # (len(times), len(sensors)) float64, NaN = missing

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype="datetime64[m]")
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (len(self.times), len(self.sensors)):
            raise DimensionError(
                f"values shape {self.values.shape} does not match "
                f"{len(self.times)} times x {len(self.sensors)} sensors")
        if len(set(self.sensors)) != len(self.sensors):
            raise ConfigError("duplicate sensor ids")
        minute_of_day = self.times.astype(np.int64) % (24 * 60)
        if np.any(minute_of_day % SLOT_MIN):
            raise ConfigError("timestamps must sit on 5-minute boundaries")
        if len(self.times) > 1:
            deltas = np.diff(self.times.astype(np.int64))
            if np.any(deltas <= 0):
                raise ConfigError("times must be strictly increasing")
            same_day = np.diff(self.dates().astype(np.int64)) == 0
            if np.any(same_day & (deltas != SLOT_MIN)):
                raise ConfigError("times within a day must be 5 minutes apart")
        self._sensor_index = {s: i for i, s in enumerate(self.sensors)}
        self._row_index = None

    def dates(self):
        return self.times.astype("datetime64[D]")

    @property
    def n_times(self):
        return len(self.times)

    @property
    def n_sensors(self):
        return len(self.sensors)

    def sensor_column(self, sensor_id):
        try:
            return self._sensor_index[sensor_id]
        except KeyError:
            raise NotFoundError(f"unknown sensor id {sensor_id!r}") from None

    def row_of(self, when):
        """Row index of an exact timestamp."""
        if self._row_index is None:
            self._row_index = {t: i for i, t in enumerate(self.times)}
        key = np.datetime64(when, "m")
        try:
            return self._row_index[key]
        except KeyError:
            raise NotFoundError(f"timestamp {key} not in matrix") from None

    def day_slices(self):
        """(date, slice) pairs covering the rows of each calendar day."""
        dates = self.dates()
        if len(dates) == 0:
            return []
        breaks = np.flatnonzero(np.diff(dates.astype(np.int64))) + 1
        starts = np.concatenate(([0], breaks))
        stops = np.concatenate((breaks, [len(dates)]))
        return [(dates[a], slice(int(a), int(b))) for a, b in zip(starts, stops)]

    def copy(self):
        return SpeedMatrix(self.times.copy(), list(self.sensors), self.values.copy())


@dataclass
class SensorInfo:
    id: str
    latitude: float
    longitude: float
    highway: str = ""
    direction: str = ""


@dataclass
class SensorNetwork:
    """Sensor metadata plus a symmetric pairwise distance matrix in km."""

    sensors: list
    distance: np.ndarray

    def __post_init__(self):
        n = len(self.sensors)
        self.distance = np.asarray(self.distance, dtype=np.float64)
        if self.distance.shape != (n, n):
            raise DimensionError(f"distance matrix must be {n}x{n}")
        self._index = {s.id: i for i, s in enumerate(self.sensors)}
        if len(self._index) != n:
            raise ConfigError("duplicate sensor ids")

    @property
    def ids(self):
        return [s.id for s in self.sensors]

    def index(self, sensor_id):
        try:
            return self._index[sensor_id]
        except KeyError:
            raise NotFoundError(f"unknown sensor id {sensor_id!r}") from None


@dataclass
class CleaningConfig:
    max_missing_fraction: float = 0.10
    valid_speed_range: tuple = (0.0, 120.0)
    outlier_window: int = 5

    def validate(self):
        if not 0 < self.max_missing_fraction < 1:
            raise ConfigError("max_missing_fraction must lie in (0, 1)")
        low, high = self.valid_speed_range
        if not low < high:
            raise ConfigError("valid_speed_range must have low < high")
        if self.outlier_window < 3 or self.outlier_window % 2 == 0:
            raise ConfigError("outlier_window must be an odd integer >= 3")
        return self


@dataclass
class SynthConfig:
    sensor_count: int = 20
    day_count: int = 56
    rng_seed: int = 0
    base_speed: float = 65.0
    morning_dip: float = 25.0
    evening_dip: float = 30.0
    weekend_uplift: float = 4.0
    noise_std: float = 1.0
    missing_rate: float = 0.0
    outlier_rate: float = 0.0
    start_date: str = "2024-03-04"   # a Monday
    sensor_spacing_km: float = 1.0

    def validate(self):
        if self.sensor_count < 1 or self.day_count < 1:
            raise ConfigError("sensor_count and day_count must be positive")
        if not 0 <= self.missing_rate < 1 or not 0 <= self.outlier_rate < 1:
            raise ConfigError("injection rates must lie in [0, 1)")
        if self.noise_std < 0:
            raise ConfigError("noise_std must be non-negative")
        if self.sensor_spacing_km <= 0:
            raise ConfigError("sensor_spacing_km must be positive")
        return self


def _parse_timestamp(text, line, path):
    """Strict 'YYYY-MM-DD HH:MM' on a 5-minute boundary."""
    if len(text) != 16 or text[4] != "-" or text[7] != "-" or text[10] != " " or text[13] != ":":
        raise ParseError(f"bad timestamp {text!r}", line=line, path=path)
    try:
        year, month, day = int(text[0:4]), int(text[5:7]), int(text[8:10])
        hour, minute = int(text[11:13]), int(text[14:16])
    except ValueError:
        raise ParseError(f"bad timestamp {text!r}", line=line, path=path) from None
    if not (1 <= month <= 12 and 1 <= day <= 31 and 0 <= hour <= 23 and 0 <= minute <= 59):
        raise ParseError(f"timestamp out of range {text!r}", line=line, path=path)
    if minute % SLOT_MIN:
        raise ParseError(f"timestamp {text!r} not on a 5-minute boundary",
                         line=line, path=path)
    try:
        return np.datetime64(f"{text[:10]}T{text[11:]}", "m")
    except ValueError:
        raise ParseError(f"bad timestamp {text!r}", line=line, path=path) from None


def _check_header(row, expected, path):
    if row is None or [c.strip() for c in row] != expected:
        raise ParseError(f"header must be {','.join(expected)}", line=1, path=path)


def day_time_grid(first_day, day_count):
    """datetime64[m] grid covering 07:00-22:00 inclusive for consecutive days."""
    first = np.datetime64(first_day, "D")
    days = first + np.arange(day_count)
    slots = np.arange(SLOTS_PER_DAY) * SLOT_MIN + DAY_START_MIN
    grid = days.astype("datetime64[m]")[:, None] + slots.astype("timedelta64[m]")
    return grid.ravel()


def load_speed_csv(path):
    """Pivot a speeds CSV into a SpeedMatrix.

    Rows outside the 07:00-22:00 window are discarded. Every calendar day
    that contributes at least one in-window row is materialized as a full
    181-slot grid; absent cells become NaN.
    """
    records = {}
    sensors = []
    seen_sensors = set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        _check_header(next(reader, None), SPEEDS_HEADER, path)
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise ParseError(f"expected 3 fields, got {len(row)}", line=line, path=path)
            ts = _parse_timestamp(row[0].strip(), line, path)
            minute_of_day = int(ts.astype(np.int64) % (24 * 60))
            if not DAY_START_MIN <= minute_of_day <= DAY_END_MIN:
                continue
            sensor = row[1].strip()
            if not sensor:
                raise ParseError("empty sensor id", line=line, path=path)
            text = row[2].strip()
            if text == "":
                speed = np.nan
            else:
                try:
                    speed = float(text)
                except ValueError:
                    raise ParseError(f"bad speed {text!r}", line=line, path=path) from None
                if not math.isfinite(speed):
                    raise ParseError(f"non-finite speed {text!r}", line=line, path=path)
            key = (ts, sensor)
            if key in records:
                raise DuplicateRecordError(
                    f"duplicate record for sensor {sensor!r} at {row[0].strip()!r}",
                    line=line, path=path)
            records[key] = speed
            if sensor not in seen_sensors:
                seen_sensors.add(sensor)
                sensors.append(sensor)

    if not records:
        return SpeedMatrix(np.array([], dtype="datetime64[m]"), [], np.zeros((0, 0)))

    days = sorted({ts.astype("datetime64[D]") for ts, _ in records})
    times = np.concatenate([day_time_grid(d, 1) for d in days])
    col = {s: j for j, s in enumerate(sensors)}
    row_index = {t: i for i, t in enumerate(times)}
    values = np.full((len(times), len(sensors)), np.nan)
    for (ts, sensor), speed in records.items():
        values[row_index[ts], col[sensor]] = speed
    return SpeedMatrix(times, sensors, values)


def save_speed_csv(matrix, path):
    """Write a SpeedMatrix back to the speeds CSV schema (missing cells omitted)."""
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write(",".join(SPEEDS_HEADER) + "\n")
        for i, ts in enumerate(matrix.times):
            stamp = str(ts).replace("T", " ")
            for j, sensor in enumerate(matrix.sensors):
                v = matrix.values[i, j]
                if not np.isnan(v):
                    fh.write(f"{stamp},{sensor},{float(v)!r}\n")


def load_sensors_csv(path):
    sensors = []
    seen = set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        _check_header(next(reader, None), SENSORS_HEADER, path)
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 5:
                raise ParseError(f"expected 5 fields, got {len(row)}", line=line, path=path)
            sensor_id = row[0].strip()
            if not sensor_id:
                raise ParseError("empty sensor id", line=line, path=path)
            if sensor_id in seen:
                raise DuplicateRecordError(f"duplicate sensor {sensor_id!r}",
                                           line=line, path=path)
            seen.add(sensor_id)
            try:
                lat, lon = float(row[1]), float(row[2])
            except ValueError:
                raise ParseError("bad coordinates", line=line, path=path) from None
            _check_coordinates(lat, lon, line=line, path=path)
            sensors.append(SensorInfo(sensor_id, lat, lon, row[3].strip(), row[4].strip()))
    return sensors


def save_sensors_csv(sensors, path):
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write(",".join(SENSORS_HEADER) + "\n")
        for s in sensors:
            fh.write(f"{s.id},{float(s.latitude)!r},{float(s.longitude)!r},"
                     f"{s.highway},{s.direction}\n")


def load_distance_csv(path, ids):
    """Read pairwise overrides; returns {(i, j): km} with symmetric closure."""
    index = {s: i for i, s in enumerate(ids)}
    overrides = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        _check_header(next(reader, None), DISTANCES_HEADER, path)
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise ParseError(f"expected 3 fields, got {len(row)}", line=line, path=path)
            a, b = row[0].strip(), row[1].strip()
            for name in (a, b):
                if name not in index:
                    raise ParseError(f"unknown sensor id {name!r}", line=line, path=path)
            try:
                km = float(row[2])
            except ValueError:
                raise ParseError(f"bad distance {row[2]!r}", line=line, path=path) from None
            if km < 0 or not math.isfinite(km):
                raise ParseError(f"distance must be finite and non-negative, got {km}",
                                 line=line, path=path)
            i, j = index[a], index[b]
            if i == j and km != 0.0:
                raise ParseError(f"self-distance of {a!r} must be 0", line=line, path=path)
            key = (min(i, j), max(i, j))
            if key in overrides and overrides[key] != km:
                raise DuplicateRecordError(
                    f"conflicting distances for pair ({a!r}, {b!r})", line=line, path=path)
            overrides[key] = km
    return overrides


def _check_coordinates(lat, lon, line=None, path=None):
    if not -90.0 <= lat <= 90.0:
        raise CoordinateError(f"latitude {lat} outside [-90, 90]", line=line, path=path)
    if not -180.0 <= lon <= 180.0:
        raise CoordinateError(f"longitude {lon} outside [-180, 180]", line=line, path=path)


def haversine_km(lat1, lon1, lat2, lon2):
    """Great-circle distance in kilometers (Earth radius 6371.0 km)."""
    phi1, phi2 = math.radians(lat1), math.radians(lat2)
    dphi = phi2 - phi1
    dlam = math.radians(lon2 - lon1)
    a = math.sin(dphi / 2.0) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlam / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_KM * math.asin(math.sqrt(a))


def build_distance_matrix(sensors, overrides=None):
    """Haversine distances between all sensor pairs, with optional per-pair
    overrides (e.g. road-network distances from a distances CSV)."""
    n = len(sensors)
    for s in sensors:
        _check_coordinates(s.latitude, s.longitude)
    dist = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            a, b = sensors[i], sensors[j]
            dist[i, j] = dist[j, i] = haversine_km(
                a.latitude, a.longitude, b.latitude, b.longitude)
    if overrides:
        for (i, j), km in overrides.items():
            dist[i, j] = dist[j, i] = km
    return SensorNetwork(sensors, dist)


def clean_missing(matrix, config=None):
    """Drop overly-sparse sensors, interpolate the rest within each day.

    Returns (cleaned matrix, report) where the report lists
    (sensor_id, missing_fraction) for every dropped sensor. Interior gaps
    are filled by linear interpolation between the nearest valid values of
    the same day; leading and trailing gaps take the nearest valid value.
    A day with no valid values at all falls back to the sensor's mean over
    every observed value.
    """
    config = (config or CleaningConfig()).validate()
    if matrix.n_times == 0 or matrix.n_sensors == 0:
        return matrix.copy(), []

    missing = np.isnan(matrix.values)
    fractions = missing.mean(axis=0)
    dropped = [(matrix.sensors[j], float(fractions[j]))
               for j in range(matrix.n_sensors)
               if fractions[j] > config.max_missing_fraction]
    keep = [j for j in range(matrix.n_sensors)
            if fractions[j] <= config.max_missing_fraction]

    low, high = config.valid_speed_range
    values = matrix.values[:, keep].copy()
    sensors = [matrix.sensors[j] for j in keep]
    day_slices = matrix.day_slices()
    for col in range(values.shape[1]):
        series = values[:, col]
        observed = ~np.isnan(series)
        if not observed.any():
            continue
        # out-of-range observations stay in place (clean_outliers fixes them)
        # but never anchor an interpolation
        donors = observed & (series >= low) & (series <= high)
        pool = series[donors] if donors.any() else series[observed]
        overall_mean = float(pool.mean())
        for _, sl in day_slices:
            day = series[sl]
            gaps = np.isnan(day)
            if not gaps.any():
                continue
            day_donors = donors[sl]
            if not day_donors.any():
                day[gaps] = overall_mean
                continue
            idx = np.arange(len(day))
            day[gaps] = np.interp(idx[gaps], idx[day_donors], day[day_donors])
    return SpeedMatrix(matrix.times.copy(), sensors, values), dropped


def clean_outliers(matrix, config=None):
    """Replace out-of-range values by the mean of in-range values in a
    centered window of the same day.

    All replacements read the pre-cleaning values, so the outcome does not
    depend on scan order. When the window holds no in-range donors the
    day's in-range mean is used, then the sensor's in-range mean, then the
    midpoint of the valid range.
    """
    config = (config or CleaningConfig()).validate()
    low, high = config.valid_speed_range
    half = config.outlier_window // 2
    values = matrix.values.copy()
    if np.isnan(values).any():
        raise ConfigError("clean_outliers requires a matrix without missing values")

    original = matrix.values
    in_range = (original >= low) & (original <= high)
    day_slices = matrix.day_slices()
    for col in range(values.shape[1]):
        col_ok = in_range[:, col]
        sensor_mean = float(original[col_ok, col].mean()) if col_ok.any() else (low + high) / 2.0
        for _, sl in day_slices:
            day_vals = original[sl, col]
            day_ok = col_ok[sl]
            if day_ok.all():
                continue
            day_mean = float(day_vals[day_ok].mean()) if day_ok.any() else sensor_mean
            out_positions = np.flatnonzero(~day_ok)
            repl = values[sl, col]
            for pos in out_positions:
                a = max(0, pos - half)
                b = min(len(day_vals), pos + half + 1)
                window_ok = day_ok[a:b].copy()
                window_ok[pos - a] = False
                donors = day_vals[a:b][window_ok]
                repl[pos] = float(donors.mean()) if donors.size else day_mean
            values[sl, col] = repl
    return SpeedMatrix(matrix.times.copy(), list(matrix.sensors), values)


def synthetic_field(config):
    """The deterministic (pre-noise, pre-injection) synthetic speed field.

    Speeds follow a daily profile with morning and evening rush-hour dips;
    the dips arrive one 5-minute step later at each successive sensor down
    the line, weekends lift the whole profile, and each sensor carries a
    small fixed offset.
    """
    config.validate()
    times = day_time_grid(config.start_date, config.day_count)
    minute_of_day = (times.astype(np.int64) % (24 * 60)).astype(np.float64)
    days_since_epoch = times.astype("datetime64[D]").astype(np.int64)
    weekday = (days_since_epoch + 3) % 7       # 1970-01-01 was a Thursday
    weekend = (weekday >= 5).astype(np.float64)

    n = config.sensor_count
    offsets = 2.0 * np.sin(2.0 * np.pi * np.arange(n) / n)
    sigma = 45.0
    field = np.empty((len(times), n))
    for i in range(n):
        tod = minute_of_day - i * SLOT_MIN     # dip propagates down the line
        morning = np.exp(-0.5 * ((tod - 8.5 * 60) / sigma) ** 2)
        evening = np.exp(-0.5 * ((tod - 18.0 * 60) / sigma) ** 2)
        field[:, i] = (config.base_speed + offsets[i]
                       + config.weekend_uplift * weekend
                       - config.morning_dip * morning
                       - config.evening_dip * evening)
    return times, field


def synthetic_sensors(config):
    """Sensor line with the configured spacing, aligned to a meridian so the
    haversine distance between consecutive sensors is exactly the spacing."""
    deg_per_km = math.degrees(1.0 / EARTH_RADIUS_KM)
    width = len(str(max(config.sensor_count - 1, 1)))
    return [
        SensorInfo(f"S{i:0{width}d}", 35.0 + i * config.sensor_spacing_km * deg_per_km,
                   -100.0, "H1", "N")
        for i in range(config.sensor_count)
    ]


def generate_synthetic(config):
    """Synthetic (SpeedMatrix, SensorNetwork) with seeded noise and
    missing/outlier injection."""
    config.validate()
    rng = np.random.default_rng(config.rng_seed)
    times, values = synthetic_field(config)
    if config.noise_std > 0:
        values = values + rng.normal(0.0, config.noise_std, values.shape)
    if config.missing_rate > 0 or config.outlier_rate > 0:
        u = rng.random(values.shape)
        missing_mask = u < config.missing_rate
        outlier_mask = (~missing_mask) & (u < config.missing_rate + config.outlier_rate)
        kinds = rng.random(values.shape) < 0.5
        magnitudes = rng.random(values.shape)
        high_values = 130.0 + 60.0 * magnitudes
        low_values = -5.0 - 10.0 * magnitudes
        values = np.where(outlier_mask, np.where(kinds, high_values, low_values), values)
        values[missing_mask] = np.nan

    sensors = synthetic_sensors(config)
    matrix = SpeedMatrix(times, [s.id for s in sensors], values)
    network = build_distance_matrix(sensors)
    return matrix, network
