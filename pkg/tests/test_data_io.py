"""Verification suite for ingestion, distances, cleaning, and synthesis."""

import numpy as np
import pytest

from stsc.data import (
    CleaningConfig,
    SensorInfo,
    SpeedMatrix,
    SynthConfig,
    build_distance_matrix,
    clean_missing,
    clean_outliers,
    day_time_grid,
    generate_synthetic,
    haversine_km,
    load_distance_csv,
    load_sensors_csv,
    load_speed_csv,
    save_sensors_csv,
    save_speed_csv,
    synthetic_field,
)
from stsc.errors import (
    ConfigError,
    CoordinateError,
    DuplicateRecordError,
    NotFoundError,
    ParseError,
)


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def tiny_matrix(series, start="2024-03-04 07:00", sensor="A"):
    """Column vector SpeedMatrix from a list (None = missing)."""
    t0 = np.datetime64(start.replace(" ", "T"), "m")
    times = t0 + np.arange(len(series)) * np.timedelta64(5, "m")
    vals = np.array([[np.nan if v is None else float(v)] for v in series])
    return SpeedMatrix(times, [sensor], vals)


class TestLoadSpeedCsv:
    def test_full_pivot(self, tmp_path):
        p = write(tmp_path, "s.csv",
                  "timestamp,sensor_id,speed_mph\n"
                  "2024-03-04 08:00,A,60.0\n"
                  "2024-03-04 08:00,B,55.0\n"
                  "2024-03-04 08:05,A,61.0\n"
                  "2024-03-04 08:05,B,56.0\n"
                  "2024-03-04 08:10,A,62.0\n"
                  "2024-03-04 08:10,B,57.0\n")
        m = load_speed_csv(p)
        assert m.sensors == ["A", "B"]
        # one day materializes the full 07:00-22:00 grid (181 slots)
        assert m.n_times == 181
        r = m.row_of("2024-03-04 08:05")
        assert m.values[r, 0] == 61.0 and m.values[r, 1] == 56.0

    def test_absent_cell_is_missing(self, tmp_path):
        p = write(tmp_path, "s.csv",
                  "timestamp,sensor_id,speed_mph\n"
                  "2024-03-04 08:00,A,60.0\n"
                  "2024-03-04 08:05,B,55.0\n")
        m = load_speed_csv(p)
        assert np.isnan(m.values[m.row_of("2024-03-04 08:00"), m.sensor_column("B")])

    def test_empty_speed_field_is_missing(self, tmp_path):
        p = write(tmp_path, "s.csv",
                  "timestamp,sensor_id,speed_mph\n2024-03-04 08:00,A,\n")
        m = load_speed_csv(p)
        assert np.isnan(m.values[m.row_of("2024-03-04 08:00"), 0])

    def test_bad_speed_names_line(self, tmp_path):
        p = write(tmp_path, "s.csv",
                  "timestamp,sensor_id,speed_mph\n"
                  "2024-03-04 08:00,A,60.0\n"
                  "2024-03-04 08:05,A,abc\n")
        with pytest.raises(ParseError) as exc:
            load_speed_csv(p)
        assert exc.value.line == 3

    def test_duplicate_record_rejected(self, tmp_path):
        p = write(tmp_path, "s.csv",
                  "timestamp,sensor_id,speed_mph\n"
                  "2024-03-04 08:00,A,60.0\n"
                  "2024-03-04 08:00,A,61.0\n")
        with pytest.raises(DuplicateRecordError):
            load_speed_csv(p)

    def test_rows_outside_day_window_discarded(self, tmp_path):
        p = write(tmp_path, "s.csv",
                  "timestamp,sensor_id,speed_mph\n"
                  "2024-03-04 06:55,A,60.0\n"
                  "2024-03-04 07:00,A,61.0\n"
                  "2024-03-04 22:00,A,62.0\n"
                  "2024-03-04 22:05,A,63.0\n")
        m = load_speed_csv(p)
        assert m.values[m.row_of("2024-03-04 07:00"), 0] == 61.0
        assert m.values[m.row_of("2024-03-04 22:00"), 0] == 62.0
        with pytest.raises(NotFoundError):
            m.row_of("2024-03-04 06:55")

    def test_off_grid_timestamp_rejected(self, tmp_path):
        p = write(tmp_path, "s.csv",
                  "timestamp,sensor_id,speed_mph\n2024-03-04 08:02,A,60.0\n")
        with pytest.raises(ParseError):
            load_speed_csv(p)

    def test_wrong_header_rejected(self, tmp_path):
        p = write(tmp_path, "s.csv", "time,id,mph\n")
        with pytest.raises(ParseError):
            load_speed_csv(p)

    def test_round_trip(self, tmp_path):
        cfg = SynthConfig(sensor_count=3, day_count=2, missing_rate=0.05,
                          noise_std=0.5, rng_seed=5)
        matrix, _ = generate_synthetic(cfg)
        p = tmp_path / "rt.csv"
        save_speed_csv(matrix, p)
        back = load_speed_csv(p)
        assert back.sensors == matrix.sensors
        np.testing.assert_array_equal(back.times, matrix.times)
        np.testing.assert_array_equal(back.values, matrix.values)


class TestSensorsAndDistances:
    def test_haversine_one_degree_latitude(self):
        assert haversine_km(0.0, 0.0, 1.0, 0.0) == pytest.approx(111.195, abs=1e-3)

    def test_identical_points_zero(self):
        assert haversine_km(35.2, -101.7, 35.2, -101.7) == 0.0

    def test_matrix_symmetric_zero_diagonal(self):
        sensors = [SensorInfo("a", 35.0, -100.0), SensorInfo("b", 35.3, -100.2),
                   SensorInfo("c", 34.8, -99.9)]
        net = build_distance_matrix(sensors)
        np.testing.assert_allclose(net.distance, net.distance.T, atol=1e-9)
        assert np.all(np.diag(net.distance) == 0)
        assert np.all(net.distance >= 0)

    def test_triangle_inequality_on_samples(self):
        rng = np.random.default_rng(17)
        sensors = [SensorInfo(f"s{i}", float(rng.uniform(-80, 80)),
                              float(rng.uniform(-170, 170))) for i in range(8)]
        d = build_distance_matrix(sensors).distance
        for i in range(8):
            for j in range(8):
                for k in range(8):
                    assert d[i, j] <= d[i, k] + d[k, j] + 1e-9

    def test_coordinate_range_enforced(self):
        with pytest.raises(CoordinateError):
            build_distance_matrix([SensorInfo("a", 91.0, 0.0)])
        with pytest.raises(CoordinateError):
            build_distance_matrix([SensorInfo("a", 0.0, -181.0)])

    def test_sensors_csv_round_trip(self, tmp_path):
        sensors = [SensorInfo("a", 35.0, -100.0, "US-60", "E"),
                   SensorInfo("b", 35.5, -100.5, "", "")]
        p = tmp_path / "sensors.csv"
        save_sensors_csv(sensors, p)
        assert load_sensors_csv(p) == sensors

    def test_distance_overrides_apply_symmetrically(self, tmp_path):
        sensors = [SensorInfo("a", 35.0, -100.0), SensorInfo("b", 35.5, -100.0)]
        p = write(tmp_path, "d.csv", "from_id,to_id,km\na,b,7.25\n")
        overrides = load_distance_csv(p, ["a", "b"])
        net = build_distance_matrix(sensors, overrides)
        assert net.distance[0, 1] == 7.25
        assert net.distance[1, 0] == 7.25

    def test_distance_csv_unknown_id_rejected(self, tmp_path):
        p = write(tmp_path, "d.csv", "from_id,to_id,km\na,zz,1.0\n")
        with pytest.raises(ParseError):
            load_distance_csv(p, ["a", "b"])

    def test_conflicting_pair_rejected(self, tmp_path):
        p = write(tmp_path, "d.csv", "from_id,to_id,km\na,b,1.0\nb,a,2.0\n")
        with pytest.raises(DuplicateRecordError):
            load_distance_csv(p, ["a", "b"])


class TestCleanMissing:
    def test_linear_midpoint(self):
        m = tiny_matrix([60, None, 70])
        cleaned, dropped = clean_missing(m, CleaningConfig(max_missing_fraction=0.5))
        np.testing.assert_allclose(cleaned.values[:, 0], [60, 65, 70])
        assert dropped == []

    def test_leading_gap_nearest_fill(self):
        m = tiny_matrix([None, 50, 52])
        cleaned, _ = clean_missing(m, CleaningConfig(max_missing_fraction=0.5))
        np.testing.assert_allclose(cleaned.values[:, 0], [50, 50, 52])

    def test_sparse_sensor_dropped_and_reported(self):
        t0 = np.datetime64("2024-03-04T08:00", "m")
        times = t0 + np.arange(10) * np.timedelta64(5, "m")
        vals = np.full((10, 2), 60.0)
        vals[:3, 1] = np.nan    # 30% missing
        m = SpeedMatrix(times, ["good", "bad"], vals)
        cleaned, dropped = clean_missing(m, CleaningConfig(max_missing_fraction=0.10))
        assert cleaned.sensors == ["good"]
        assert dropped == [("bad", pytest.approx(0.3))]

    def test_interpolation_respects_day_boundary(self):
        # last slot of day 1 missing, first of day 2 present: the gap must
        # fill from day 1 values only, not bridge the overnight jump
        t = [np.datetime64("2024-03-04T21:55", "m"), np.datetime64("2024-03-04T22:00", "m"),
             np.datetime64("2024-03-05T07:00", "m")]
        vals = np.array([[40.0], [np.nan], [80.0]])
        m = SpeedMatrix(np.array(t), ["A"], vals)
        cleaned, _ = clean_missing(m, CleaningConfig(max_missing_fraction=0.5))
        assert cleaned.values[1, 0] == 40.0

    def test_never_alters_observed_values(self):
        cfg = SynthConfig(sensor_count=4, day_count=3, missing_rate=0.05, rng_seed=9)
        m, _ = generate_synthetic(cfg)
        cleaned, _ = clean_missing(m)
        for sensor in cleaned.sensors:
            src = m.values[:, m.sensor_column(sensor)]
            out = cleaned.values[:, cleaned.sensor_column(sensor)]
            observed = ~np.isnan(src)
            np.testing.assert_array_equal(out[observed], src[observed])

    def test_empty_matrix_passes_through(self):
        m = SpeedMatrix(np.array([], dtype="datetime64[m]"), [], np.zeros((0, 0)))
        cleaned, dropped = clean_missing(m)
        assert cleaned.n_times == 0 and dropped == []


class TestCleanOutliers:
    def test_hand_average(self):
        m = tiny_matrix([60, 62, 200, 58, 61])
        cleaned = clean_outliers(m, CleaningConfig(outlier_window=5))
        assert cleaned.values[2, 0] == pytest.approx((60 + 62 + 58 + 61) / 4)

    def test_in_range_matrix_unchanged(self):
        m = tiny_matrix([60, 62, 58, 61])
        cleaned = clean_outliers(m)
        np.testing.assert_array_equal(cleaned.values, m.values)

    def test_negative_speed_replaced(self):
        m = tiny_matrix([60, -5, 62])
        cleaned = clean_outliers(m)
        assert cleaned.values[1, 0] == pytest.approx(61.0)

    def test_neighboring_outliers_excluded_from_donors(self):
        m = tiny_matrix([60, 200, 300, 62, 61])
        cleaned = clean_outliers(m, CleaningConfig(outlier_window=3))
        # 200 sees donors {60}; 300 sees donors {62}
        assert cleaned.values[1, 0] == 60.0
        assert cleaned.values[2, 0] == 62.0

    def test_all_window_donors_invalid_falls_back_to_daily_mean(self):
        m = tiny_matrix([50, 54, 200, 300, 400, 56, 60])
        cleaned = clean_outliers(m, CleaningConfig(outlier_window=3))
        # the middle outlier has no in-range window neighbors
        assert cleaned.values[3, 0] == pytest.approx((50 + 54 + 56 + 60) / 4)

    def test_idempotent_after_missing_clean(self):
        cfg = SynthConfig(sensor_count=5, day_count=3, missing_rate=0.05,
                          outlier_rate=0.03, noise_std=0.5, rng_seed=11)
        m, _ = generate_synthetic(cfg)
        once, _ = clean_missing(m)
        once = clean_outliers(once)
        twice = clean_outliers(clean_missing(once)[0])
        np.testing.assert_array_equal(once.values, twice.values)

    def test_requires_no_missing(self):
        with pytest.raises(ConfigError):
            clean_outliers(tiny_matrix([60, None, 62]))


class TestSynthetic:
    def test_same_seed_identical(self):
        cfg = SynthConfig(sensor_count=3, day_count=2, missing_rate=0.1,
                          outlier_rate=0.05, rng_seed=21)
        a, _ = generate_synthetic(cfg)
        b, _ = generate_synthetic(cfg)
        np.testing.assert_array_equal(
            np.nan_to_num(a.values, nan=-1), np.nan_to_num(b.values, nan=-1))

    def test_noiseless_field_matches_formula(self):
        cfg = SynthConfig(sensor_count=2, day_count=1, noise_std=0.0,
                          missing_rate=0.0, outlier_rate=0.0)
        m, _ = generate_synthetic(cfg)
        times, field = synthetic_field(cfg)
        np.testing.assert_array_equal(m.values, field)
        # morning rush at 08:30 dips sensor 0 by the full amplitude
        r = m.row_of("2024-03-04 08:30")
        assert m.values[r, 0] == pytest.approx(cfg.base_speed + 0.0 - cfg.morning_dip)

    def test_dip_lags_one_step_per_sensor(self):
        cfg = SynthConfig(sensor_count=4, day_count=1, noise_std=0.0)
        _, field = synthetic_field(cfg)
        offsets = 2.0 * np.sin(2.0 * np.pi * np.arange(4) / 4)
        centered = field - offsets
        for i in range(1, 4):
            np.testing.assert_allclose(centered[i:, i], centered[:-i, 0],
                                       rtol=0, atol=1e-9)

    def test_missing_injection_rate_within_3_sigma(self):
        cfg = SynthConfig(sensor_count=20, day_count=28, missing_rate=0.05,
                          rng_seed=13)
        m, _ = generate_synthetic(cfg)
        cells = m.values.size
        injected = int(np.isnan(m.values).sum())
        expect = 0.05 * cells
        sigma = np.sqrt(cells * 0.05 * 0.95)
        assert abs(injected - expect) <= 3 * sigma

    def test_weekend_uplift_applied(self):
        cfg = SynthConfig(sensor_count=1, day_count=7, noise_std=0.0)
        m, _ = generate_synthetic(cfg)
        monday = m.values[m.row_of("2024-03-04 12:00"), 0]
        saturday = m.values[m.row_of("2024-03-09 12:00"), 0]
        assert saturday - monday == pytest.approx(cfg.weekend_uplift)

    def test_sensor_line_spacing(self):
        cfg = SynthConfig(sensor_count=5, day_count=1)
        _, net = generate_synthetic(cfg)
        for i in range(5):
            for j in range(5):
                assert net.distance[i, j] == pytest.approx(abs(i - j) * 1.0, abs=1e-9)

    def test_cleaning_recovers_field(self):
        cfg = SynthConfig(sensor_count=6, day_count=4, noise_std=0.5,
                          missing_rate=0.04, outlier_rate=0.02, rng_seed=31)
        m, _ = generate_synthetic(cfg)
        _, field = synthetic_field(cfg)
        damaged = np.isnan(m.values) | (m.values < 0) | (m.values > 120)
        cleaned, dropped = clean_missing(m)
        assert dropped == []
        cleaned = clean_outliers(cleaned)
        mae = np.abs(cleaned.values[damaged] - field[damaged]).mean()
        assert mae < cfg.noise_std

    def test_day_grid_is_181_slots(self):
        grid = day_time_grid("2024-03-04", 2)
        assert len(grid) == 362
        assert str(grid[0]) == "2024-03-04T07:00"
        assert str(grid[180]) == "2024-03-04T22:00"
        assert str(grid[181]) == "2024-03-05T07:00"

    def test_invalid_config_rejected(self):
        with pytest.raises(ConfigError):
            SynthConfig(sensor_count=0).validate()
        with pytest.raises(ConfigError):
            SynthConfig(missing_rate=1.0).validate()
