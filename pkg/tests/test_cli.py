import json
import os

import numpy as np
import pandas as pd
import pytest

from sfcnn.__main__ import main

SMALL_ARCH = ["--T", "14", "--filter_sizes", "3", "--pool_sizes", "2", "--maps", "2", "--dense_dim", "4"]


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(
        json.dumps(
            {
                "data": {"T": 14, "horizon": 3},
                "arch": {"filter_sizes": [3], "pool_sizes": [2], "maps": [2], "dense_dim": 4},
                "train": {"batch_size": 32, "pretrain_epochs": 1, "finetune_epochs": 1},
            }
        )
    )
    return str(path)


def _train(logs, items, out, *extra):
    argv = ["train", "--logs", logs, "--items", items, "--out", out, "--horizon", "3", *SMALL_ARCH]
    argv += ["--batch_size", "16", "--pretrain_epochs", "1", *extra]
    return main(argv)


@pytest.fixture
def trained(synth_files, tmp_path):
    logs, items = synth_files
    out = str(tmp_path / "run")
    assert _train(logs, items, out, "--finetune_epochs", "0") == 0
    return out


def test_synth__deterministic(tmp_path):
    argv = ["synth", "--seed", "7", "--regions", "2", "--items", "4", "--brands", "2", "--days", "20", "--d", "3"]
    assert main(argv + ["--out", str(tmp_path / "a")]) == 0
    assert main(argv + ["--out", str(tmp_path / "b")]) == 0
    for name in ("logs.csv", "items.csv", "truth.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    logs = pd.read_csv(tmp_path / "a" / "logs.csv")
    assert len(logs) == 4 * 2 * 20


def test_synth__regions_flag(tmp_path):
    base = ["synth", "--seed", "1", "--items", "3", "--brands", "1", "--days", "10", "--d", "2"]
    assert main(base + ["--regions", "1", "--out", str(tmp_path / "one")]) == 0
    assert main(base + ["--regions", "5", "--out", str(tmp_path / "five")]) == 0
    assert (tmp_path / "one" / "items.csv").read_text() == (tmp_path / "five" / "items.csv").read_text()
    logs = pd.read_csv(tmp_path / "five" / "logs.csv")
    assert logs["region_id"].nunique() == 5


def test_synth__invalid_config(tmp_path):
    assert main(["synth", "--items", "2", "--brands", "3", "--out", str(tmp_path)]) == 1


def test_train__outputs(trained, synth_table):
    files = sorted(os.listdir(trained))
    assert files == [
        "config.json",
        "history.json",
        "log.txt",
        "model_pretrained.sfcnn",
        "model_region_0.sfcnn",
        "model_region_1.sfcnn",
        "progress.log",
    ]
    pretrained = open(os.path.join(trained, "model_pretrained.sfcnn"), "rb").read()
    for region in synth_table.region_ids:
        assert open(os.path.join(trained, f"model_{region}.sfcnn"), "rb").read() == pretrained

    progress = open(os.path.join(trained, "progress.log")).read().splitlines()
    assert len(progress) == 1
    assert progress[0].startswith("phase=pretrain region=all epoch=1 loss=")

    config = json.load(open(os.path.join(trained, "config.json")))
    assert config["data"]["T"] == 14
    assert config["train"]["finetune_epochs"] == 0
    assert config["arch"]["maps"] == [2]


def test_train__deterministic_across_threads(synth_files, tmp_path, monkeypatch):
    logs, items = synth_files
    assert _train(logs, items, str(tmp_path / "a"), "--finetune_epochs", "1") == 0
    monkeypatch.setenv("SFCNN_THREADS", "2")
    assert _train(logs, items, str(tmp_path / "b"), "--finetune_epochs", "1") == 0
    for name in ("model_pretrained.sfcnn", "model_region_0.sfcnn", "model_region_1.sfcnn", "progress.log"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert len((tmp_path / "a" / "progress.log").read_text().splitlines()) == 3


def test_train__variant_without_transfer(synth_files, tmp_path):
    logs, items = synth_files
    out = tmp_path / "cnn"
    assert _train(logs, items, str(out), "--finetune_epochs", "1", "--variant", "cnn") == 0
    lines = [line.rsplit(" loss=", 1)[0] for line in (out / "progress.log").read_text().splitlines()]
    assert lines == [
        "phase=pretrain region=region_0 epoch=1",
        "phase=finetune region=region_0 epoch=1",
        "phase=pretrain region=region_1 epoch=1",
        "phase=finetune region=region_1 epoch=1",
    ]


def test_train__validation_errors(synth_files, tmp_path):
    logs, items = synth_files
    assert _train(logs, items, str(tmp_path / "a"), "--maps", "2,2") == 1
    assert _train(logs, items, str(tmp_path / "b"), "--batch_size", "0") == 1
    assert main(["train", "--out", str(tmp_path / "c"), *SMALL_ARCH]) == 1


def test_train__data_error(tmp_path, synth_files):
    _, items = synth_files
    broken = tmp_path / "broken.csv"
    broken.write_text("date,item_id,region_id,sales\n2017-01-01,item_000,region_0,oops\n")
    assert _train(str(broken), items, str(tmp_path / "out")) == 2


def test_predict__y_true_matches_logs(trained, synth_files, synth_table, tmp_path):
    logs, items = synth_files
    out = tmp_path / "pred"
    argv = ["predict", "--model", trained, "--logs", logs, "--items", items, "--horizon", "3"]
    assert main(argv + ["--forecast_start", "45", "--out", str(out)]) == 0

    predictions = pd.read_csv(out / "predictions.csv")
    assert list(predictions.columns) == ["item_id", "region_id", "forecast_start", "horizon", "y_pred", "y_true"]
    assert len(predictions) == 4 * 2
    assert set(predictions["forecast_start"]) == {"2017-02-15"}
    for row in predictions.itertuples():
        r = synth_table.region_position(row.region_id)
        i = synth_table.item_position(row.item_id)
        assert row.y_true == synth_table.cube[r, i, 45:48, 0].sum()

    again = tmp_path / "again"
    single = os.path.join(trained, "model_pretrained.sfcnn")
    assert main(["predict", "--model", single, "--logs", logs, "--items", items, "--horizon", "3",
                 "--forecast_start", "2017-02-15", "--out", str(again)]) == 0
    assert (again / "predictions.csv").read_bytes() == (out / "predictions.csv").read_bytes()


def test_predict__future_window_has_no_truth(trained, synth_files, tmp_path):
    logs, items = synth_files
    out = tmp_path / "future"
    assert main(["predict", "--model", trained, "--logs", logs, "--items", items, "--horizon", "3",
                 "--out", str(out)]) == 0
    predictions = pd.read_csv(out / "predictions.csv")
    assert predictions["y_true"].isna().all()
    assert np.isfinite(predictions["y_pred"]).all()

    assert main(["evaluate", "--predictions", str(out / "predictions.csv"), "--out", str(tmp_path / "m")]) == 2


def test_predict__missing_model(synth_files, tmp_path):
    logs, items = synth_files
    assert main(["predict", "--model", str(tmp_path / "nothing"), "--logs", logs, "--items", items,
                 "--out", str(tmp_path / "out")]) == 2


def test_evaluate__methods(trained, synth_files, tmp_path):
    logs, items = synth_files
    pred = tmp_path / "pred"
    common = ["--logs", logs, "--items", items, "--horizon", "3", "--forecast_start", "45"]
    assert main(["predict", "--model", trained, *common, "--out", str(pred)]) == 0

    out = tmp_path / "metrics"
    argv = ["evaluate", "--predictions", str(pred / "predictions.csv"), "--models", trained,
            "--baselines", "naive,ma:1,ar:2", *common, "--out", str(out)]
    assert main(argv) == 0

    metrics = json.load(open(out / "metrics.json"))["methods"]
    assert sorted(metrics) == ["ar_ls_2", "cnn", "moving_average_1", "naive_last_window", "predictions"]
    frame = pd.read_csv(pred / "predictions.csv")
    for region, group in frame.groupby("region_id"):
        expected = float(np.mean((group["y_pred"] - group["y_true"]) ** 2))
        assert metrics["predictions"]["regions"][region] == pytest.approx(expected, rel=1e-12)
        assert metrics["cnn"]["regions"][region] == pytest.approx(expected, rel=1e-12)
    for method in metrics.values():
        assert method["average"] == pytest.approx(np.mean(list(method["regions"].values())))


def test_evaluate__nothing_to_do(tmp_path):
    assert main(["evaluate", "--out", str(tmp_path)]) == 1


def test_evaluate__unknown_baseline(synth_files, tmp_path):
    logs, items = synth_files
    assert main(["evaluate", "--baselines", "arima", "--logs", logs, "--items", items, "--out", str(tmp_path)]) == 1


def test_gradcheck(capsys):
    assert main(["gradcheck"]) == 0
    output = capsys.readouterr().out
    for name in ("conv1.filters", "conv1.biases", "dense", "head"):
        assert name in output
    assert "FAIL" not in output


def test_gradcheck__flip_sign_fails(capsys):
    assert main(["gradcheck", "--flip_sign"]) == 2
    assert "FAIL" in capsys.readouterr().out


def test_gradcheck__random_architectures():
    assert main(["gradcheck", "--random", "3", "--seed", "11"]) == 0


def test_gradcheck__custom_architecture():
    assert main(["gradcheck", "--d", "3", "--T", "12", "--filter_sizes", "3,2", "--pool_sizes", "2,2",
                 "--maps", "2,3"]) == 0


def test_sweep__beta(synth_files, small_config, tmp_path):
    logs, items = synth_files
    out = tmp_path / "sweep"
    argv = ["sweep", "--param", "beta", "--grid", "0,0.02,0.2", "--config", small_config,
            "--logs", logs, "--items", items, "--out", str(out)]
    assert main(argv) == 0
    rows = pd.read_csv(out / "sweep.csv")
    assert list(rows.columns) == ["param", "value", "region", "mse"]
    assert len(rows) == 3 * 2
    assert list(rows["value"]) == [0.0, 0.0, 0.02, 0.02, 0.2, 0.2]
    assert rows["mse"].notna().all()


def test_sweep__infeasible_point(synth_files, small_config, tmp_path):
    logs, items = synth_files
    out = tmp_path / "sweep"
    argv = ["sweep", "--param", "horizon", "--grid", "3,100", "--config", small_config,
            "--logs", logs, "--items", items, "--out", str(out)]
    assert main(argv) == 0
    rows = pd.read_csv(out / "sweep.csv")
    assert len(rows) == 4
    assert rows.loc[rows["value"] == 3, "mse"].notna().all()
    assert rows.loc[rows["value"] == 100, "mse"].isna().all()


def test_sweep__unsupported_parameter(synth_files, small_config, tmp_path):
    logs, items = synth_files
    argv = ["sweep", "--param", "dropout", "--grid", "0.1", "--config", small_config,
            "--logs", logs, "--items", items, "--out", str(tmp_path)]
    assert main(argv) == 1


def test_predict__model_from_config(trained, synth_files, tmp_path):
    logs, items = synth_files
    config = tmp_path / "predict.json"
    config.write_text(json.dumps({"data": {"T": 14, "horizon": 3}, "paths": {"model": trained}}))
    common = ["--logs", logs, "--items", items, "--forecast_start", "45"]
    assert main(["predict", "--config", str(config), *common, "--out", str(tmp_path / "a")]) == 0
    assert main(["predict", "--model", trained, "--horizon", "3", *common, "--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a" / "predictions.csv").read_bytes() == (tmp_path / "b" / "predictions.csv").read_bytes()

    assert main(["predict", *common, "--out", str(tmp_path / "c")]) == 1


def test_evaluate__default_window_follows_training(trained, synth_files, synth_table, tmp_path):
    logs, items = synth_files
    pred = tmp_path / "pred"
    start = str(synth_table.num_days - 3)
    assert main(["predict", "--model", trained, "--logs", logs, "--items", items, "--horizon", "3",
                 "--forecast_start", start, "--out", str(pred)]) == 0
    out = tmp_path / "metrics"
    assert main(["evaluate", "--predictions", str(pred / "predictions.csv"), "--models", trained,
                 "--logs", logs, "--items", items, "--horizon", "3", "--out", str(out)]) == 0
    metrics = json.load(open(out / "metrics.json"))["methods"]
    assert metrics["cnn"]["average"] == pytest.approx(metrics["predictions"]["average"], rel=1e-12)
