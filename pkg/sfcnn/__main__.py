import json
import logging
import os
import sys
import typing as ty
from pathlib import Path

import numpy as np
import pydantic
import retry

from sfcnn.baseline import BaseBaseline
from sfcnn.errors import ConfigError, GradientCheckError, SfcnnError, ValidationError
from sfcnn.logs import close_logger, setup_app_logger, setup_progress_logger, setup_run_logger
from sfcnn.model.architecture import Architecture
from sfcnn.model.gradcheck import (
    DEFAULT_STEP,
    TOLERANCE,
    gradient_check,
    passed,
    random_tiny_architecture,
    tiny_architecture,
)
from sfcnn.pipeline import (
    baseline_metrics,
    load_models,
    evaluation_start_of,
    load_table,
    metrics_from_predictions,
    model_metrics,
    predict_table,
    read_predictions,
    resolve_day,
    run_sweep,
    run_training,
    save_training_run,
    sweep_frame,
    write_metrics,
)
from sfcnn.schema import Metrics, RunConfig, threads_from_env
from sfcnn.synth import SynthConfig, generate, write_dataset

APP_LOGGER_NAME = "sfcnn"


@retry.retry(tries=5, delay=1)
def _check_setup(output_path: str) -> None:
    assert os.access(output_path, os.W_OK), f"Not writable: {output_path=}"


def _prepare_output(output_path: str) -> str:
    try:
        os.makedirs(output_path, exist_ok=True)
        _check_setup(output_path=output_path)
    except (OSError, AssertionError) as exc:
        raise ValidationError(f"Unwritable output path {output_path}: {exc}") from exc
    return output_path


def _int_list(value: ty.Any) -> ty.Optional[ty.List[int]]:
    """Fire hands over `7,4,3` as a tuple and `7` as an int."""
    if value is None:
        return None
    if isinstance(value, (int, float)):
        return [int(value)]
    if isinstance(value, str):
        return [int(it) for it in value.split(",") if it.strip()]
    return [int(it) for it in value]


def _str_list(value: ty.Any) -> ty.List[str]:
    if value is None:
        return []
    if isinstance(value, str):
        return [it.strip() for it in value.split(",") if it.strip()]
    if isinstance(value, (int, float)):
        return [str(value)]
    return [str(it) for it in value]


def _run_config(config: ty.Optional[str], full_scale: bool = False, **overrides) -> RunConfig:
    return RunConfig.from_sources(config, overrides=overrides, full_scale=full_scale)


def cmd_synth(
    out: str = "data",
    seed: ty.Optional[int] = None,
    regions: ty.Optional[int] = None,
    items: ty.Optional[int] = None,
    brands: ty.Optional[int] = None,
    categories: ty.Optional[int] = None,
    suppliers: ty.Optional[int] = None,
    days: ty.Optional[int] = None,
    d: ty.Optional[int] = None,
    noise: ty.Optional[float] = None,
    promo_rate: ty.Optional[float] = None,
    start_date: ty.Optional[str] = None,
    config: ty.Optional[str] = None,
) -> None:
    """
    Generate synthetic logs.csv, items.csv and truth.json.

    :param out: output directory
    :param config: JSON file with SynthConfig fields; flags override it
    """
    values = {}
    if config is not None:
        try:
            with open(config, encoding="utf-8") as fd:
                values = json.load(fd)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"Can not read config {config}: {exc}") from exc
    flags = {
        "seed": seed,
        "num_regions": regions,
        "num_items": items,
        "num_brands": brands,
        "num_categories": categories,
        "num_suppliers": suppliers,
        "num_days": days,
        "d": d,
        "noise_level": noise,
        "promo_rate": promo_rate,
        "start_date": start_date,
    }
    values.update({key: value for key, value in flags.items() if value is not None})
    synth_config = SynthConfig(**values)

    _prepare_output(out)
    dataset = generate(synth_config)
    paths = write_dataset(dataset, out)
    print(
        f"Wrote {dataset.num_rows} log rows ({synth_config.num_items} items,"
        f" {synth_config.num_regions} regions, {synth_config.num_days} days, d={synth_config.d})"
        f" to {paths['logs']}, {paths['items']}, {paths['truth']}"
    )


def cmd_train(
    config: ty.Optional[str] = None,
    logs: ty.Optional[str] = None,
    items: ty.Optional[str] = None,
    out: ty.Optional[str] = None,
    variant: ty.Optional[str] = None,
    pretrain_epochs: ty.Optional[int] = None,
    finetune_epochs: ty.Optional[int] = None,
    batch_size: ty.Optional[int] = None,
    beta: ty.Optional[float] = None,
    alpha: ty.Optional[float] = None,
    seed: ty.Optional[int] = None,
    T: ty.Optional[int] = None,
    horizon: ty.Optional[int] = None,
    stride: ty.Optional[int] = None,
    include_supplier: ty.Optional[bool] = None,
    forecast_start: ty.Optional[ty.Union[int, str]] = None,
    filter_sizes: ty.Any = None,
    pool_sizes: ty.Any = None,
    maps: ty.Any = None,
    dense_dim: ty.Optional[int] = None,
    dropout: ty.Optional[float] = None,
    full_scale: bool = False,
) -> None:
    """
    Pretrain on all regions, fine-tune one model per region and write the model
     files, config.json, log.txt, progress.log and history.json into `out`.
    """
    run_config = _run_config(
        config,
        full_scale,
        logs=logs,
        items=items,
        outputs=out,
        variant=variant,
        pretrain_epochs=pretrain_epochs,
        finetune_epochs=finetune_epochs,
        batch_size=batch_size,
        beta=beta,
        alpha=alpha,
        seed=seed,
        T=T,
        horizon=horizon,
        stride=stride,
        include_supplier=include_supplier,
        forecast_start=forecast_start,
        filter_sizes=_int_list(filter_sizes),
        pool_sizes=_int_list(pool_sizes),
        maps=_int_list(maps),
        dense_dim=dense_dim,
        dropout=dropout,
    )
    threads = threads_from_env()
    output_path = _prepare_output(run_config.paths.outputs)
    with open(os.path.join(output_path, "config.json"), "w") as fd:
        json.dump(run_config.dump(), fd, indent=2, sort_keys=True)

    run_logger = setup_run_logger(APP_LOGGER_NAME, output_path)
    progress_logger = setup_progress_logger(f"{APP_LOGGER_NAME}.progress", output_path)
    try:
        run_logger.info(f"Training with {threads=}, config written to {output_path}/config.json")
        table = load_table(run_config)
        run = run_training(table, run_config, progress_logger=progress_logger, threads=threads)
        paths = save_training_run(run, output_path)
        for region, reason in sorted(run.models.failed.items()):
            run_logger.warning(f"Region {region} failed: {reason}")
        run_logger.info(f"Wrote {len(paths)} model files to {output_path}")
    finally:
        close_logger(progress_logger)
        close_logger(run_logger)
        setup_app_logger(APP_LOGGER_NAME)
    print(f"Trained {len(run.models.models)} region models ({len(run.models.failed)} failed) into {output_path}")


def cmd_predict(
    model: ty.Optional[str] = None,
    logs: ty.Optional[str] = None,
    items: ty.Optional[str] = None,
    forecast_start: ty.Optional[ty.Union[int, str]] = None,
    horizon: ty.Optional[int] = None,
    out: ty.Optional[str] = None,
    config: ty.Optional[str] = None,
) -> None:
    """
    Write `<out>/predictions.csv` for every (item, region).

    :param model: model file used for all regions, or a training output directory;
        defaults to `paths.model` of `--config`
    """
    run_config = _run_config(
        config,
        logs=logs,
        items=items,
        outputs=out,
        model=model,
        horizon=horizon,
        forecast_start=forecast_start,
    )
    if run_config.paths.model is None:
        raise ValidationError("--model is required")
    output_path = _prepare_output(run_config.paths.outputs)
    table = load_table(run_config)
    start = resolve_day(table, run_config.data.forecast_start, table.num_days)
    bundles = load_models(run_config.paths.model, table.region_ids)
    frame = predict_table(bundles, table, run_config.data.horizon, start)
    path = os.path.join(output_path, "predictions.csv")
    frame.to_csv(path, index=False, float_format="%.17g")
    print(f"Wrote {len(frame)} predictions to {path}")


def _method_names(paths: ty.List[str]) -> ty.List[str]:
    stems = [Path(path).stem for path in paths]
    return [
        stem if stems.count(stem) == 1 else f"{Path(path).parent.name}/{stem}"
        for path, stem in zip(paths, stems)
    ]


def cmd_evaluate(
    predictions: ty.Any = None,
    models: ty.Optional[str] = None,
    baselines: ty.Any = None,
    logs: ty.Optional[str] = None,
    items: ty.Optional[str] = None,
    horizon: ty.Optional[int] = None,
    forecast_start: ty.Optional[ty.Union[int, str]] = None,
    out: ty.Optional[str] = None,
    config: ty.Optional[str] = None,
) -> None:
    """
    Write `<out>/metrics.json` with per-method, per-region MSE and the average.

    :param predictions: one or more predictions.csv files; method name = file stem
    :param models: model file or training output directory, evaluated as method "cnn"
    :param baselines: comma list of naive, ma[:weeks], ar[:order]
    :param forecast_start: first target day of the evaluated window, as for predict;
        defaults to `data.test_start`, then to the day after the training window
    """
    run_config = _run_config(
        config, logs=logs, items=items, outputs=out, horizon=horizon, test_start=forecast_start
    )
    prediction_paths = _str_list(predictions)
    baseline_specs = [BaseBaseline.from_flag(flag) for flag in _str_list(baselines)]
    if not prediction_paths and models is None and not baseline_specs:
        raise ValidationError("Nothing to evaluate: pass --predictions, --models or --baselines")
    output_path = _prepare_output(run_config.paths.outputs)

    metrics = Metrics()
    for name, path in zip(_method_names(prediction_paths), prediction_paths):
        metrics.methods[name] = metrics_from_predictions(read_predictions(path))

    if models is not None or baseline_specs:
        table = load_table(run_config)
        start = evaluation_start_of(table, run_config)
        if models is not None:
            bundles = load_models(models, table.region_ids)
            metrics.methods["cnn"] = model_metrics(bundles, table, run_config.data.horizon, start)
        metrics.methods.update(baseline_metrics(table, baseline_specs, run_config.data.horizon, start))

    path = write_metrics(metrics, output_path)
    for name, method in sorted(metrics.methods.items()):
        print(f"{name}: average MSE {method.average:.6g}")
    print(f"Wrote {path}")


def cmd_gradcheck(
    seed: int = 0,
    random: int = 0,
    h: float = DEFAULT_STEP,
    flip_sign: bool = False,
    num_slots: int = 4,
    d: ty.Optional[int] = None,
    T: ty.Optional[int] = None,
    filter_sizes: ty.Any = None,
    pool_sizes: ty.Any = None,
    maps: ty.Any = None,
    dense_dim: ty.Optional[int] = None,
) -> None:
    """
    Finite-difference check of every tensor's gradient; fails unless all relative
     errors are below 1e-6.

    :param random: check this many random tiny architectures instead of one
    :param flip_sign: negate the head gradient (harness self-test, must fail)
    """
    if random > 0:
        rng = np.random.default_rng(seed)
        architectures = [random_tiny_architecture(rng) for _ in range(random)]
    else:
        default = tiny_architecture().model_dump()
        flags = {
            "num_slots": num_slots,
            "d": d,
            "T": T,
            "filter_sizes": _int_list(filter_sizes),
            "pool_sizes": _int_list(pool_sizes),
            "maps": _int_list(maps),
            "dense_dim": dense_dim,
        }
        default.update({key: value for key, value in flags.items() if value is not None})
        architectures = [Architecture(**default)]

    failures = 0
    for index, arch in enumerate(architectures):
        report = gradient_check(arch, seed + index, h=h, flip_sign=flip_sign)
        print(
            f"architecture {index}: d={arch.d} T={arch.T} filters={arch.filter_sizes}"
            f" pools={arch.pool_sizes} maps={arch.maps} dense={arch.dense_dim}"
        )
        for name, error in report.items():
            status = "ok" if error < TOLERANCE else "FAIL"
            print(f"  {name:<16} {error:.3e} {status}")
        failures += not passed(report)
    if failures:
        raise GradientCheckError(f"{failures} of {len(architectures)} architectures failed the check")
    print(f"All {len(architectures)} architectures passed")


def cmd_sweep(
    param: str,
    grid: ty.Any,
    config: ty.Optional[str] = None,
    logs: ty.Optional[str] = None,
    items: ty.Optional[str] = None,
    out: ty.Optional[str] = None,
    variant: ty.Optional[str] = None,
    pretrain_epochs: ty.Optional[int] = None,
    finetune_epochs: ty.Optional[int] = None,
    seed: ty.Optional[int] = None,
    T: ty.Optional[int] = None,
    horizon: ty.Optional[int] = None,
    beta: ty.Optional[float] = None,
    stride: ty.Optional[int] = None,
    full_scale: bool = False,
) -> None:
    """
    Train and evaluate per grid value of `param` (horizon, T or beta) and write
     `<out>/sweep.csv`. Without --logs the default synthetic dataset is used.
    """
    values = [float(it) for it in _str_list(grid)]
    if not values:
        raise ValidationError("Empty sweep grid")
    run_config = _run_config(
        config,
        full_scale,
        logs=logs,
        items=items,
        outputs=out,
        variant=variant,
        pretrain_epochs=pretrain_epochs,
        finetune_epochs=finetune_epochs,
        seed=seed,
        T=T,
        horizon=horizon,
        beta=beta,
        stride=stride,
    )
    output_path = _prepare_output(run_config.paths.outputs)
    if run_config.paths.logs is None:
        paths = write_dataset(generate(SynthConfig(seed=run_config.train.seed)), os.path.join(output_path, "data"))
        run_config.paths.logs, run_config.paths.items = paths["logs"], paths["items"]

    table = load_table(run_config)
    rows = run_sweep(table, run_config, param, values, threads=threads_from_env())
    path = os.path.join(output_path, "sweep.csv")
    sweep_frame(rows).to_csv(path, index=False)
    print(f"Wrote {len(rows)} sweep rows to {path}")


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "gradcheck": cmd_gradcheck,
    "sweep": cmd_sweep,
}


def main(argv: ty.Optional[ty.List[str]] = None) -> int:
    """Run one subcommand; returns 0 on success, 1 on validation and 2 on data errors."""
    import fire

    app_logger = setup_app_logger(APP_LOGGER_NAME, level=logging.INFO)
    try:
        fire.Fire(COMMANDS, command=argv, name="sfcnn")
    except pydantic.ValidationError as exc:
        app_logger.error(f"Invalid configuration: {exc}")
        return 1
    except SfcnnError as exc:
        app_logger.error(f"{type(exc).__name__}: {exc}")
        return exc.exit_code
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
