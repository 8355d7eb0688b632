"""
End-to-end steps shared by the CLI commands: data loading, training with model
 files, prediction tables, metrics and parameter sweeps.
"""
import glob
import json
import logging
import os
import typing as ty
from dataclasses import dataclass

import numpy as np
import pandas as pd
import pydantic

from sfcnn.baseline import BaseBaseline
from sfcnn.errors import (
    DataError,
    InsufficientHistoryError,
    ShapeMismatchError,
    UnknownKeyError,
    ValidationError,
)
from sfcnn.ingest import (
    FrameSequence,
    LogTable,
    NormStats,
    Sample,
    fit_norm,
    make_eval_samples,
    make_samples,
    read_log_files,
    training_keys,
)
from sfcnn.model.architecture import Architecture
from sfcnn.model.serialize import ModelBundle, load_model_file, save_model_file
from sfcnn.schema import MethodMetrics, Metrics, RunConfig
from sfcnn.train import RegionModelSet, average_of, evaluate, mse, predict, transfer_train

logger = logging.getLogger(__name__)

PRETRAINED_MODEL_NAME = "model_pretrained.sfcnn"
PREDICTION_COLUMNS = ["item_id", "region_id", "forecast_start", "horizon", "y_pred", "y_true"]
SWEEP_PARAMETERS = ("horizon", "T", "beta")


def model_file_name(region_id: str) -> str:
    return f"model_{region_id}.sfcnn"


def load_table(config: RunConfig) -> LogTable:
    if config.paths.logs is None or config.paths.items is None:
        raise ValidationError("Both --logs and --items are required")
    return read_log_files(config.paths.logs, config.paths.items)


def resolve_day(table: LogTable, value: ty.Optional[ty.Union[int, str]], default: int) -> int:
    """Day index from an int, a numeric string or a YYYY-MM-DD date."""
    if value is None:
        return default
    if isinstance(value, int):
        return value
    if isinstance(value, str) and value.lstrip("-").isdigit():
        return int(value)
    try:
        return table.day_index(str(value))
    except ValueError:
        raise ValidationError(f"Malformed day: {value!r}") from None


def forecast_start_of(table: LogTable, config: RunConfig) -> int:
    """
    Training forecast start: no training target extends past this day. The default
     `num_days - horizon - 1` leaves the last `horizon` days for evaluation.
    """
    return resolve_day(table, config.data.forecast_start, table.num_days - config.data.horizon - 1)


def evaluation_start_of(table: LogTable, config: RunConfig) -> int:
    """First target day of the evaluation window; defaults to the day after `forecast_start`."""
    return resolve_day(table, config.data.test_start, forecast_start_of(table, config) + 1)


def split_days(table: LogTable, config: RunConfig) -> ty.Tuple[int, int]:
    """(forecast_start, evaluation_start) with disjoint training and evaluation targets."""
    forecast_start = forecast_start_of(table, config)
    evaluation_start = evaluation_start_of(table, config)
    if evaluation_start <= forecast_start:
        raise ValidationError(
            f"Evaluation starts on day {evaluation_start}, but training targets reach day {forecast_start}"
        )
    return forecast_start, evaluation_start


@dataclass
class TrainingRun:
    table: LogTable
    arch: Architecture
    stats: NormStats
    models: RegionModelSet
    forecast_start: int


def fit_training_norm(table: LogTable, config: RunConfig, forecast_start: int) -> NormStats:
    """Normalization statistics over the raw frames of every training sample."""
    keys = training_keys(
        table, config.data.T, config.data.horizon, config.data.stride, forecast_start
    )
    return fit_norm(FrameSequence(table, keys, config.data.T, config.data.include_supplier))


def run_training(
    table: LogTable,
    config: RunConfig,
    progress_logger: ty.Optional[logging.Logger] = None,
    threads: int = 1,
) -> TrainingRun:
    forecast_start = forecast_start_of(table, config)
    arch = config.architecture(d=table.d)
    stats = fit_training_norm(table, config, forecast_start)
    per_region = make_samples(
        table,
        config.data.T,
        config.data.horizon,
        config.data.stride,
        forecast_start,
        config.train.effective_beta,
        stats,
    )
    pooled = [sample for region in sorted(per_region) for sample in per_region[region]]
    logger.info(
        f"Training {config.train.variant} on {len(pooled)} samples, {arch.orders} orders,"
        f" flatten size {arch.flatten_size}"
    )
    models = transfer_train(
        pooled, per_region, arch, config.train, progress_logger=progress_logger, threads=threads
    )
    return TrainingRun(
        table=table, arch=arch, stats=stats, models=models, forecast_start=forecast_start
    )


def save_training_run(run: TrainingRun, output_path: str) -> ty.List[str]:
    """Write the pretrained and per-region model files plus history.json."""
    names = run.table.indicator_names
    paths = [os.path.join(output_path, PRETRAINED_MODEL_NAME)]
    save_model_file(paths[0], run.models.pretrained, run.stats, names)
    for region, model in sorted(run.models.models.items()):
        paths.append(os.path.join(output_path, model_file_name(region)))
        save_model_file(paths[-1], model.params, run.stats, names)
    with open(os.path.join(output_path, "history.json"), "w") as fd:
        json.dump(run.models.history_dict(), fd, indent=2, sort_keys=True)
    return paths


def load_models(path: str, region_ids: ty.Sequence[str]) -> ty.Dict[str, ModelBundle]:
    """
    Region -> model bundle from a model file (shared by every region) or from a
     directory of `model_<region>.sfcnn` files.
    """
    if os.path.isfile(path):
        bundle = load_model_file(path)
        return {region: bundle for region in region_ids}
    if not os.path.isdir(path):
        raise InsufficientHistoryError(f"No model file or directory at {path}")
    bundles = {}
    for region in region_ids:
        region_path = os.path.join(path, model_file_name(region))
        if os.path.exists(region_path):
            bundles[region] = load_model_file(region_path)
        else:
            logger.warning(f"No model for region {region} in {path}")
    if not bundles:
        found = sorted(glob.glob(os.path.join(path, "*.sfcnn")))
        raise UnknownKeyError(f"No model matches the logged regions in {path} (found {found})")
    return bundles


def _check_bundle(bundle: ModelBundle, table: LogTable) -> None:
    if bundle.arch.d != table.d or bundle.indicator_names != table.indicator_names:
        raise ShapeMismatchError(
            f"Model expects indicators {bundle.indicator_names} (d={bundle.arch.d}),"
            f" logs have {table.indicator_names} (d={table.d})"
        )


def _eval_samples_by_bundle(
    bundles: ty.Mapping[str, ModelBundle], table: LogTable, horizon: int, forecast_start: int
) -> ty.Dict[str, ty.List[Sample]]:
    """Evaluation samples per region, built once per distinct normalization."""
    sources: ty.Dict[int, ty.Dict[str, ty.List[Sample]]] = {}
    samples = {}
    for region in sorted(bundles):
        bundle = bundles[region]
        _check_bundle(bundle, table)
        key = id(bundle.norm_stats)
        if key not in sources:
            sources[key] = make_eval_samples(
                table, bundle.arch.T, horizon, forecast_start, bundle.norm_stats
            )
        samples[region] = sources[key][region]
    return samples


def predict_table(
    bundles: ty.Mapping[str, ModelBundle], table: LogTable, horizon: int, forecast_start: int
) -> pd.DataFrame:
    """One row per (item, region); `y_true` is empty when the target window is not logged."""
    rows = []
    start_date = table.date_of(forecast_start).isoformat()
    for region, samples in _eval_samples_by_bundle(bundles, table, horizon, forecast_start).items():
        predictions = predict(bundles[region].params, samples)
        for sample, y_pred in zip(samples, predictions):
            rows.append(
                {
                    "item_id": sample.item_id,
                    "region_id": region,
                    "forecast_start": start_date,
                    "horizon": horizon,
                    "y_pred": float(y_pred),
                    "y_true": sample.target,
                }
            )
    return pd.DataFrame(rows, columns=PREDICTION_COLUMNS)


def _require_targets(samples: ty.Mapping[str, ty.Sequence[Sample]], what: str) -> None:
    if any(sample.target is None for region in samples.values() for sample in region):
        raise InsufficientHistoryError(f"Target window of {what} is not logged")


def model_metrics(
    bundles: ty.Mapping[str, ModelBundle], table: LogTable, horizon: int, forecast_start: int
) -> MethodMetrics:
    """Per-region MSE of stored models on the window starting at `forecast_start`."""
    samples = _eval_samples_by_bundle(bundles, table, horizon, forecast_start)
    _require_targets(samples, f"day {forecast_start}")
    result = evaluate({region: bundle.params for region, bundle in bundles.items()}, samples)
    return MethodMetrics(regions=result.regions, average=result.average)


def metrics_from_predictions(frame: pd.DataFrame) -> MethodMetrics:
    if frame.empty:
        raise InsufficientHistoryError("No predictions to evaluate")
    if "y_true" not in frame.columns or frame["y_true"].isna().any():
        raise InsufficientHistoryError("Predictions without y_true can not be evaluated")
    regions = {
        str(region): mse(group["y_pred"].to_numpy(float), group["y_true"].to_numpy(float))
        for region, group in frame.groupby("region_id", sort=True)
    }
    return MethodMetrics(regions=regions, average=average_of(regions))


def read_predictions(path: str) -> pd.DataFrame:
    try:
        return pd.read_csv(path, dtype={"item_id": str, "region_id": str})
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise InsufficientHistoryError(f"Can not read predictions {path}: {exc}") from exc


def baseline_samples(table: LogTable, horizon: int, forecast_start: int) -> ty.Dict[str, ty.List[Sample]]:
    """Evaluation samples without frames; baselines only read raw sales."""
    end_point = forecast_start - 1
    if table.date_range is None or end_point < 0 or forecast_start + horizon - 1 > table.date_range[1]:
        raise InsufficientHistoryError(
            f"Target window [{forecast_start}, {forecast_start + horizon - 1}] is not logged"
        )
    return {
        region: [
            Sample(
                source=None,
                item_id=item,
                region_id=region,
                end_point=end_point,
                target=float(
                    table.cube[
                        table.region_position(region),
                        table.item_position(item),
                        forecast_start : forecast_start + horizon,
                        0,
                    ].sum()
                ),
                weight=1.0,
            )
            for item in table.item_ids
        ]
        for region in table.region_ids
    }


def baseline_metrics(
    table: LogTable, baselines: ty.Sequence[BaseBaseline], horizon: int, forecast_start: int
) -> ty.Dict[str, MethodMetrics]:
    samples = baseline_samples(table, horizon, forecast_start)
    methods = {}
    for baseline in baselines:
        regions = {}
        for region in sorted(samples):
            predictions = baseline.forecast_samples(table, samples[region], horizon)
            targets = np.array([sample.target for sample in samples[region]])
            regions[region] = mse(predictions, targets)
        methods[baseline.name] = MethodMetrics(regions=regions, average=average_of(regions))
    return methods


def write_metrics(metrics: Metrics, output_path: str) -> str:
    path = os.path.join(output_path, "metrics.json")
    with open(path, "w") as fd:
        json.dump(metrics.dump(), fd, indent=2, sort_keys=True)
    return path


@dataclass
class SweepRow:
    param: str
    value: float
    region: str
    mse: ty.Optional[float]


def sweep_point(
    table: LogTable, config: RunConfig, parameter: str, value: float, threads: int = 1
) -> ty.Dict[str, float]:
    """Train and evaluate one grid point; horizon points report MSE / horizon^2."""
    _, evaluation_start = split_days(table, config)
    run = run_training(table, config, progress_logger=logging.getLogger(f"{__name__}.progress"), threads=threads)
    test_samples = make_eval_samples(table, config.data.T, config.data.horizon, evaluation_start, run.stats)
    _require_targets(test_samples, f"{parameter}={value}")
    result = evaluate(run.models, test_samples)
    if parameter == "horizon":
        return {region: error / config.data.horizon**2 for region, error in result.regions.items()}
    return dict(result.regions)


def _with_parameter(config: RunConfig, parameter: str, value: float) -> RunConfig:
    data = config.dump()
    if parameter == "horizon":
        data["data"]["horizon"] = int(value)
    elif parameter == "T":
        data["data"]["T"] = int(value)
    elif parameter == "beta":
        data["train"]["beta"] = float(value)
    else:
        raise ValidationError(f"Unsupported sweep parameter {parameter!r}, expected one of {SWEEP_PARAMETERS}")
    return RunConfig(**data)


def run_sweep(
    table: LogTable,
    config: RunConfig,
    parameter: str,
    grid: ty.Sequence[float],
    threads: int = 1,
) -> ty.List[SweepRow]:
    """`param,value,region,mse` rows; infeasible points yield rows with an empty mse."""
    if parameter not in SWEEP_PARAMETERS:
        raise ValidationError(f"Unsupported sweep parameter {parameter!r}, expected one of {SWEEP_PARAMETERS}")
    rows = []
    for value in grid:
        try:
            point_config = _with_parameter(config, parameter, value)
            errors = sweep_point(table, point_config, parameter, value, threads)
        except (DataError, ValidationError, pydantic.ValidationError) as exc:
            logger.warning(f"Skipping infeasible grid point {parameter}={value}: {exc}")
            errors = {region: None for region in table.region_ids}
        for region in table.region_ids:
            rows.append(SweepRow(param=parameter, value=value, region=region, mse=errors.get(region)))
    return rows


def sweep_frame(rows: ty.Sequence[SweepRow]) -> pd.DataFrame:
    return pd.DataFrame(
        [{"param": it.param, "value": it.value, "region": it.region, "mse": it.mse} for it in rows],
        columns=["param", "value", "region", "mse"],
    )

