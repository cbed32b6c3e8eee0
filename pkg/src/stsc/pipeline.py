"""Pipeline steps behind the command-line interface.

Each ``step_*`` function reads its declared inputs from disk, writes its
declared artifacts into the output directory, appends a machine-readable
record to ``run_summary.jsonl``, and returns a small summary dict.  Steps
communicate exclusively through files, so any prefix of the chain can be
rerun or resumed.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .data import (
    build_distance_matrix,
    clean_missing,
    clean_outliers,
    generate_synthetic,
    load_distance_csv,
    load_sensors_csv,
    load_speed_csv,
    save_sensors_csv,
    save_speed_csv,
)
from .dataset import build_dataset, build_sample, denormalize, load_dataset, save_dataset
from .errors import ConfigError, StateError
from .evaluate import (
    baseline_history_mean,
    baseline_knn,
    baseline_mlp,
    baseline_persistence,
    evaluate_horizons,
    horizon_index,
)
from .model import (
    PHASE_CROSS,
    PHASE_FINETUNED,
    PHASE_PRETRAIN_X,
    PHASE_PRETRAIN_Y,
    assemble_from_checkpoints,
    build_dae_x,
    build_dae_y,
    load_checkpoint,
    load_model,
    predict,
    pretrain_dae,
    save_checkpoint,
    train_cross,
)
from .neighbors import NeighborQuery, TopsisSpec, select_neighbors
from .reports import (
    append_jsonl,
    write_kwt_csv,
    write_line_chart,
    write_mct_csv,
    write_metrics_csv,
    write_neighbors_csv,
)
from .stats import kruskal_wallis, multiple_comparison

log = logging.getLogger(__name__)

#: Order of techniques in reports; "proposed" is the trained network.
TECHNIQUES = ("proposed", "persistence", "historical-average", "knn", "mlp")

# Independent seed streams per component, so e.g. adding an extra draw to
# the X-side initializer cannot shift the Y side or the MLP baseline.
_STREAM_DAE_X = 0
_STREAM_DAE_Y = 1
_STREAM_MAPPER = 2
_STREAM_MLP = 3


def _rng(cfg, stream):
    return np.random.default_rng([cfg.seed, stream])


def out_dir(cfg):
    path = Path(cfg.paths.out_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def artifact_paths(cfg):
    out = out_dir(cfg)
    return {
        "cleaned": out / "cleaned.csv",
        "neighbors": out / "neighbors.csv",
        "dataset": out / "dataset",
        "dae_x": out / "dae_x.stsc",
        "dae_y": out / "dae_y.stsc",
        "model": out / "model.stsc",
        "metrics": out / "metrics.csv",
        "kwt": out / "stats_kwt.csv",
        "mct": out / "stats_mct.csv",
        "summary": out / "run_summary.jsonl",
    }


def _map(fn, items, threads):
    """Order-preserving map, optionally across a capped thread pool."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _record(cfg, step, started, **extra):
    entry = {"step": step, "elapsed_s": round(time.monotonic() - started, 3),
             "seed": cfg.seed, **extra}
    append_jsonl(artifact_paths(cfg)["summary"], entry)
    return entry


def _load_matrix(cfg, *, cleaned=True):
    paths = artifact_paths(cfg)
    source = paths["cleaned"] if cleaned else Path(cfg.paths.speeds)
    return load_speed_csv(source)


def _load_network(cfg):
    sensors = load_sensors_csv(cfg.paths.sensors)
    overrides = None
    if cfg.paths.distances:
        overrides = load_distance_csv(cfg.paths.distances,
                                      [s.id for s in sensors])
    return build_distance_matrix(sensors, overrides)


def _targets(cfg, matrix):
    if cfg.dataset.targets:
        return list(cfg.dataset.targets)
    return list(matrix.sensors)


# ----- pipeline steps ----------------------------------------------------


def step_synth(cfg):
    started = time.monotonic()
    matrix, network = generate_synthetic(cfg.synth)
    save_speed_csv(matrix, cfg.paths.speeds)
    save_sensors_csv(network.sensors, cfg.paths.sensors)
    return _record(cfg, "synth", started,
                   sensors=len(matrix.sensors), rows=len(matrix.times),
                   speeds=str(cfg.paths.speeds), sensors_csv=str(cfg.paths.sensors))


def step_clean(cfg):
    started = time.monotonic()
    matrix = _load_matrix(cfg, cleaned=False)
    matrix, dropped = clean_missing(matrix, cfg.cleaning)
    matrix = clean_outliers(matrix, cfg.cleaning)
    path = artifact_paths(cfg)["cleaned"]
    save_speed_csv(matrix, path)
    return _record(cfg, "clean", started,
                   kept_sensors=len(matrix.sensors),
                   dropped_sensors=[s for s, _ in dropped],
                   cleaned=str(path))


def step_neighbors(cfg):
    """Rank candidate sensors for each target at the latest valid anchor."""
    started = time.monotonic()
    matrix = _load_matrix(cfg)
    network = _load_network(cfg)
    dcfg = cfg.dataset_config()
    anchors = _anchors_or_error(matrix, dcfg)
    anchor = anchors[-1]
    spec = TopsisSpec(weights=cfg.neighbors.weights)

    def rank(target):
        query = NeighborQuery(target=target, anchor=anchor,
                              distance_km=dcfg.distance_km,
                              history_min=dcfg.history_min,
                              count=dcfg.neighbor_count)
        return select_neighbors(matrix, network, query, spec)

    rankings = _map(rank, _targets(cfg, matrix), cfg.threads)
    path = artifact_paths(cfg)["neighbors"]
    write_neighbors_csv(path, rankings)
    return _record(cfg, "neighbors", started, targets=len(rankings),
                   anchor=str(anchor), neighbors=str(path))


def _anchors_or_error(matrix, dcfg):
    from .dataset import valid_anchors

    anchors = valid_anchors(matrix, dcfg)
    if not len(anchors):
        raise ConfigError(
            "no valid anchors: the speed matrix is too short for the "
            "configured history and horizon (14 prior days are required)")
    return anchors


def step_dataset(cfg):
    started = time.monotonic()
    matrix = _load_matrix(cfg)
    network = _load_network(cfg)
    split = build_dataset(matrix, network, targets=_targets(cfg, matrix),
                          config=cfg.dataset_config())
    directory = artifact_paths(cfg)["dataset"]
    save_dataset(split, directory)
    return _record(cfg, "dataset", started,
                   train=len(split.train), test=len(split.test),
                   minimum=split.params.minimum, maximum=split.params.maximum,
                   dataset=str(directory))


def step_pretrain_x(cfg):
    started = time.monotonic()
    paths = artifact_paths(cfg)
    split = load_dataset(paths["dataset"])
    x, _ = split.stacked("train")
    dae = build_dae_x(cfg.model_spec(), rng=_rng(cfg, _STREAM_DAE_X))
    tcfg = cfg.training_config(cfg.training.pretrain_x_epochs)
    curve = pretrain_dae(dae, x, tcfg, tag="pretrain-x")
    save_checkpoint(paths["dae_x"], dae, phase=PHASE_PRETRAIN_X,
                    spec=cfg.model_spec(), norm=split.params)
    return _record(cfg, "pretrain-x", started, epochs=len(curve),
                   final_loss=curve[-1] if curve else None,
                   checkpoint=str(paths["dae_x"]))


def step_pretrain_y(cfg):
    started = time.monotonic()
    paths = artifact_paths(cfg)
    split = load_dataset(paths["dataset"])
    _, y = split.stacked("train")
    y = y[:, :, np.newaxis, np.newaxis]
    dae = build_dae_y(cfg.model_spec(), rng=_rng(cfg, _STREAM_DAE_Y))
    tcfg = cfg.training_config(cfg.training.pretrain_y_epochs)
    curve = pretrain_dae(dae, y, tcfg, tag="pretrain-y")
    save_checkpoint(paths["dae_y"], dae, phase=PHASE_PRETRAIN_Y,
                    spec=cfg.model_spec(), norm=split.params)
    return _record(cfg, "pretrain-y", started, epochs=len(curve),
                   final_loss=curve[-1] if curve else None,
                   checkpoint=str(paths["dae_y"]))


def step_train(cfg):
    started = time.monotonic()
    paths = artifact_paths(cfg)
    split = load_dataset(paths["dataset"])
    x, y = split.stacked("train")
    y = y[:, :, np.newaxis, np.newaxis]
    net, spec, norm = assemble_from_checkpoints(
        load_checkpoint(paths["dae_x"]), load_checkpoint(paths["dae_y"]),
        rng=_rng(cfg, _STREAM_MAPPER))
    plan = cfg.phase_plan()
    tcfg = cfg.training_config(0)
    curve_a, curve_b = train_cross(net, x, y, tcfg, plan)
    phase = PHASE_FINETUNED if plan.finetune_epochs > 0 else PHASE_CROSS
    save_checkpoint(paths["model"], net, phase=phase, spec=spec, norm=norm)
    return _record(cfg, "train", started, phase=phase,
                   mapper_loss=curve_a[-1] if curve_a else None,
                   finetune_loss=curve_b[-1] if curve_b else None,
                   checkpoint=str(paths["model"]))


def step_predict(cfg, at, sensor):
    """Forecast the next horizon for one sensor from a given anchor time.

    Returns the list of (timestamp, mph) pairs that the CLI prints.
    """
    started = time.monotonic()
    paths = artifact_paths(cfg)
    net, ckpt = load_model(paths["model"])
    if ckpt.norm is None:
        raise StateError("model checkpoint has no normalization parameters; "
                         "retrain via the dataset pipeline")
    matrix = _load_matrix(cfg)
    network = _load_network(cfg)
    anchor = np.datetime64(str(at).strip().replace(" ", "T"), "m")
    sample = build_sample(matrix, network, sensor, anchor,
                          cfg.dataset_config(), ckpt.norm)
    speeds = predict(net, sample.x, ckpt.norm)
    steps = [(str(anchor + np.timedelta64(5 * (i + 1), "m")), float(v))
             for i, v in enumerate(speeds)]
    _record(cfg, "predict", started, sensor=sensor, anchor=str(anchor),
            speeds=[round(v, 3) for _, v in steps])
    return steps


# ----- evaluation --------------------------------------------------------


class PredictionBundle:
    """Test-set ground truth plus per-technique mph predictions."""

    def __init__(self, samples, actual, predictions):
        self.samples = samples            # list of dataset Samples
        self.actual = actual              # (n, horizon) mph
        self.predictions = predictions    # {technique: (n, horizon) mph}


def compute_predictions(cfg):
    """Run the trained model and all four baselines over the test split."""
    paths = artifact_paths(cfg)
    split = load_dataset(paths["dataset"])
    net, ckpt = load_model(paths["model"])
    params = split.params
    if ckpt.norm is not None and ckpt.norm != params:
        raise ConfigError(
            "model checkpoint and dataset disagree on normalization "
            "parameters; rebuild the dataset or retrain")
    matrix = _load_matrix(cfg)

    x_test, y_test = split.stacked("test")
    x_train, y_train = split.stacked("train")
    actual = denormalize(y_test, params)
    horizon_steps = y_test.shape[1]

    predictions = {"proposed": predict(net, x_test, params)}

    def persistence(sample):
        return baseline_persistence(matrix, sample.target, sample.anchor,
                                    horizon_steps=horizon_steps)

    def history(sample):
        return baseline_history_mean(matrix, sample.target, sample.anchor,
                                     horizon_steps=horizon_steps)

    predictions["persistence"] = np.stack(
        _map(persistence, split.test, cfg.threads))
    predictions["historical-average"] = np.stack(
        _map(history, split.test, cfg.threads))

    # both flat baselines see the target sensor's normalized history
    feats_train = x_train[:, :, 0, 0]
    feats_test = x_test[:, :, 0, 0]

    k = min(cfg.evaluation.knn_k, len(feats_train))
    if k < cfg.evaluation.knn_k:
        log.info("knn: k capped to train size %d", k)
    knn_norm = baseline_knn(feats_train, y_train, feats_test, k=k)
    predictions["knn"] = denormalize(knn_norm, params)

    mlp_cfg = cfg.training_config(cfg.evaluation.mlp_epochs)
    mlp, _ = baseline_mlp(feats_train, y_train, mlp_cfg,
                          rng=_rng(cfg, _STREAM_MLP))
    mlp_norm = mlp.forward(feats_test, training=False)
    predictions["mlp"] = denormalize(mlp_norm, params)

    return PredictionBundle(split.test, actual, predictions)


def metrics_table(bundle):
    """Per-technique, per-horizon metrics in report order."""
    return {name: evaluate_horizons(bundle.actual, bundle.predictions[name])
            for name in TECHNIQUES}


def step_evaluate(cfg, bundle=None):
    started = time.monotonic()
    paths = artifact_paths(cfg)
    bundle = bundle or compute_predictions(cfg)
    table = metrics_table(bundle)
    write_metrics_csv(paths["metrics"], table)
    charts = {}
    units = {"mae": "mph", "rmse": "mph", "mape": "%"}
    for metric in ("mae", "rmse", "mape"):
        series = []
        for name in TECHNIQUES:
            horizons = sorted(table[name])
            values = [getattr(table[name][h], metric) for h in horizons]
            series.append((name, horizons, values))
        chart = paths["metrics"].parent / f"{metric}.svg"
        write_line_chart(chart, series,
                         title=f"{metric.upper()} by prediction horizon",
                         x_label="horizon (min)",
                         y_label=f"{metric.upper()} ({units[metric]})")
        charts[metric] = str(chart)
    proposed = {h: m.mae for h, m in table["proposed"].items()}
    return _record(cfg, "evaluate", started, samples=len(bundle.samples),
                   proposed_mae=proposed, metrics=str(paths["metrics"]),
                   charts=charts)


def sensor_mae_groups(bundle, horizon_min):
    """Per-technique vectors of per-sensor MAE at one horizon."""
    idx = horizon_index(horizon_min, bundle.actual.shape[1])
    sensors = sorted({s.target for s in bundle.samples})
    rows_of = {sensor: [i for i, s in enumerate(bundle.samples)
                        if s.target == sensor] for sensor in sensors}
    groups = {}
    for name in TECHNIQUES:
        err = np.abs(bundle.predictions[name][:, idx]
                     - bundle.actual[:, idx])
        groups[name] = [float(err[rows].mean()) for rows in rows_of.values()]
    return sensors, groups


def step_stats(cfg, horizon_min=None, bundle=None):
    started = time.monotonic()
    paths = artifact_paths(cfg)
    horizon = (cfg.evaluation.stats_horizon_min
               if horizon_min is None else horizon_min)
    bundle = bundle or compute_predictions(cfg)
    sensors, groups = sensor_mae_groups(bundle, horizon)
    labels = list(groups)
    kwt = kruskal_wallis([groups[name] for name in labels])
    mct = multiple_comparison(kwt, alpha=cfg.evaluation.alpha)
    write_kwt_csv(paths["kwt"], labels, kwt)
    write_mct_csv(paths["mct"], labels, mct)
    significant = [(labels[p.i], labels[p.j]) for p in mct.significant()]
    return _record(cfg, "stats", started, horizon_min=horizon,
                   sensors=len(sensors), h=kwt.h, p_value=kwt.p_value,
                   significant=significant,
                   kwt=str(paths["kwt"]), mct=str(paths["mct"]))


#: Steps chained by the ``all`` subcommand, in execution order.
ALL_STEPS = ("clean", "neighbors", "dataset", "pretrain-x", "pretrain-y",
             "train", "evaluate", "stats")


def step_all(cfg):
    """Run the full pipeline after ``synth`` (or on external input CSVs)."""
    step_clean(cfg)
    step_neighbors(cfg)
    step_dataset(cfg)
    step_pretrain_x(cfg)
    step_pretrain_y(cfg)
    step_train(cfg)
    bundle = compute_predictions(cfg)
    step_evaluate(cfg, bundle=bundle)
    return step_stats(cfg, bundle=bundle)
