"""Verification suite for the JSON run configuration."""

import json

import pytest

from stsc.config import RunConfig, load_run_config
from stsc.errors import ConfigError, NotFoundError


def write_config(tmp_path, payload):
    path = tmp_path / "run.json"
    path.write_text(json.dumps(payload))
    return path


class TestDefaults:
    def test_empty_dict_is_complete(self):
        cfg = RunConfig.from_dict({})
        assert cfg == RunConfig().validate()

    def test_no_file_gives_defaults(self):
        assert load_run_config(None) == RunConfig().validate()

    def test_default_values(self):
        cfg = RunConfig.from_dict({})
        assert cfg.seed == 0
        assert cfg.threads == 1
        assert cfg.paths.out_dir == "out"
        assert cfg.neighbors.count == 10
        assert cfg.dataset.history_min == 300
        assert cfg.model.x_widths == (16, 32, 64)
        assert cfg.training.pretrain_x_epochs == 50
        assert cfg.evaluation.knn_k == 17


class TestOverrides:
    def test_section_overrides(self):
        cfg = RunConfig.from_dict({
            "seed": 7,
            "threads": 4,
            "dataset": {"history_min": 100, "anchor_stride_min": 30},
            "neighbors": {"count": 6, "weights": [2, 1, 1]},
            "model": {"x_widths": [8, 12, 16], "residual_blocks": 1},
            "training": {"finetune_epochs": 0},
            "evaluation": {"knn_k": 5},
        })
        assert cfg.seed == 7
        assert cfg.threads == 4
        assert cfg.dataset.history_min == 100
        assert cfg.neighbors.weights == (2, 1, 1)
        assert cfg.model.x_widths == (8, 12, 16)
        assert cfg.training.finetune_epochs == 0
        assert cfg.evaluation.knn_k == 5

    def test_partial_section_keeps_other_defaults(self):
        cfg = RunConfig.from_dict({"dataset": {"split_fraction": 0.8}})
        assert cfg.dataset.split_fraction == 0.8
        assert cfg.dataset.history_min == 300


class TestDerivedConfigs:
    def test_model_spec_follows_dataset(self):
        cfg = RunConfig.from_dict({
            "dataset": {"history_min": 100},
            "neighbors": {"count": 6},
        })
        spec = cfg.model_spec()
        assert spec.input_steps == 20
        assert spec.input_sensors == 6
        assert spec.input_channels == 4
        assert spec.horizon_steps == 12

    def test_dataset_config_merges_neighbor_section(self):
        cfg = RunConfig.from_dict({
            "neighbors": {"count": 6, "distance_km": 4.0,
                          "refresh": "day"},
        })
        dcfg = cfg.dataset_config()
        assert dcfg.neighbor_count == 6
        assert dcfg.distance_km == 4.0
        assert dcfg.neighbor_refresh == "day"

    def test_training_config_carries_seed_and_dropout(self):
        cfg = RunConfig.from_dict({
            "seed": 11,
            "model": {"dropout_prob": 0.0},
            "training": {"learning_rate": 0.01, "batch_size": 16},
        })
        tcfg = cfg.training_config(epochs=3)
        assert tcfg.epochs == 3
        assert tcfg.rng_seed == 11
        assert tcfg.dropout_prob == 0.0
        assert tcfg.learning_rate == 0.01
        assert tcfg.batch_size == 16

    def test_phase_plan(self):
        cfg = RunConfig.from_dict({
            "training": {"mapper_epochs": 2, "finetune_epochs": 1}})
        plan = cfg.phase_plan()
        assert (plan.mapper_epochs, plan.finetune_epochs) == (2, 1)


class TestRejection:
    def test_unknown_top_level_key_named(self):
        with pytest.raises(ConfigError, match="pathz"):
            RunConfig.from_dict({"pathz": {}})

    def test_unknown_section_key_named(self):
        with pytest.raises(ConfigError, match="dataset.histry_min"):
            RunConfig.from_dict({"dataset": {"histry_min": 100}})

    def test_section_must_be_object(self):
        with pytest.raises(ConfigError, match="dataset"):
            RunConfig.from_dict({"dataset": 5})

    def test_root_must_be_object(self):
        with pytest.raises(ConfigError):
            RunConfig.from_dict([1, 2])

    def test_cross_field_errors_surface_at_load(self):
        # history_min checked by the dataset stage config
        with pytest.raises(ConfigError, match="history_min"):
            RunConfig.from_dict({"dataset": {"history_min": 25}})
        # horizon divisibility checked by the model spec
        with pytest.raises(ConfigError, match="horizon"):
            RunConfig.from_dict({"dataset": {"horizon_steps": 10}})

    def test_seed_and_threads_validation(self):
        with pytest.raises(ConfigError, match="seed"):
            RunConfig.from_dict({"seed": -1})
        with pytest.raises(ConfigError, match="seed"):
            RunConfig.from_dict({"seed": True})
        with pytest.raises(ConfigError, match="threads"):
            RunConfig.from_dict({"threads": 0})

    def test_weights_must_be_list(self):
        with pytest.raises(ConfigError, match="neighbors.weights"):
            RunConfig.from_dict({"neighbors": {"weights": 3}})
        with pytest.raises(ConfigError, match="3 entries"):
            RunConfig.from_dict({"neighbors": {"weights": [1, 2]}})


class TestLoadFile:
    def test_round_trip(self, tmp_path):
        path = write_config(tmp_path, {"seed": 3,
                                       "dataset": {"targets": ["S0", "S1"]}})
        cfg = load_run_config(path)
        assert cfg.seed == 3
        assert cfg.dataset.targets == ("S0", "S1")

    def test_missing_file(self, tmp_path):
        with pytest.raises(NotFoundError, match="no_such.json"):
            load_run_config(tmp_path / "no_such.json")

    def test_invalid_json_names_file(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError, match="bad.json"):
            load_run_config(path)

    def test_unknown_key_from_file(self, tmp_path):
        path = write_config(tmp_path, {"model": {"depth": 3}})
        with pytest.raises(ConfigError, match="model.depth"):
            load_run_config(path)
