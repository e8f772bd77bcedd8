import csv
import json

import pytest
from click.testing import CliRunner

from rksvm.cli import main


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def small_csv(tmp_path):
    path = tmp_path / "small.csv"
    rows = ["id,f1,f2,label"]
    for i in range(12):
        cls = "pos" if i % 2 else "neg"
        base = 3.0 if i % 2 else 0.0
        rows.append(f"p{i},{base + 0.1 * i},{base - 0.05 * i},{cls}")
    path.write_text("\n".join(rows) + "\n")
    return path


def test_train_then_predict(runner, small_csv, tmp_path):
    model = tmp_path / "model.json"
    res = runner.invoke(main, ["train", "--data", str(small_csv), "--label-col", "label", "--drop-col", "id",
                               "--kernel", "poly", "--degree", "1", "--transform", "minmax", "--out", str(model)])
    assert res.exit_code == 0, res.output
    doc = json.loads(model.read_text())
    assert doc["transform"]["kind"] == "min_max"
    out = tmp_path / "pred.csv"
    res = runner.invoke(main, ["predict", "--model", str(model), "--data", str(small_csv), "--label-col", "label",
                               "--drop-col", "id", "--out", str(out)])
    assert res.exit_code == 0, res.output
    with out.open() as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 12
    assert all(r["predicted"] == r["label"] for r in rows)


def test_train_robust_multiclass(runner, iris_path, tmp_path):
    model = tmp_path / "iris.json"
    res = runner.invoke(main, ["train", "--data", str(iris_path), "--label-col", "species", "--rho", "0.01",
                               "--p", "inf", "--q", "inf", "--nu-grid", "0.1,1", "--out", str(model)])
    assert res.exit_code == 0, res.output
    doc = json.loads(model.read_text())
    assert doc["kind"] == "multiclass" and len(doc["classifiers"]) == 3
    assert doc["classifiers"][0]["q_norm"] == "inf"
    assert max(doc["classifiers"][0]["delta"]) > 0


def test_experiment_with_config_override(runner, small_csv, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"data": str(small_csv), "label_col": "label", "drop_cols": ["id"], "repeats": 5,
                               "nu_grid": [0.1, 1.0], "seed": 4}))
    out = tmp_path / "out"
    res = runner.invoke(main, ["experiment", "--config", str(cfg), "--repeats", "2", "--kernel", "poly",
                               "--coef", "auto", "--degree", "2", "--out", str(out)])
    assert res.exit_code == 0, res.output
    report = json.loads((out / "report.json").read_text())
    assert report["config"]["repeats"] == 2
    assert report["config"]["seed"] == 4
    assert report["config"]["kernels"] == [{"family": "polynomial", "degree": 2, "coef": "auto", "alpha": "auto"}]
    assert (out / "summary.csv").exists() and (out / "timings.json").exists()


def test_experiment_needs_data(runner, tmp_path):
    res = runner.invoke(main, ["experiment", "--out", str(tmp_path / "o")])
    assert res.exit_code != 0
    assert "--data" in res.output


def test_ranktest_from_ranks(runner):
    res = runner.invoke(main, ["ranktest", "--ranks", "1.625,1.75,2.625", "--n-datasets", "8", "--alpha", "0.1",
                               "--methods", "a,b,c"])
    assert res.exit_code == 0, res.output
    doc = json.loads(res.output)
    assert round(doc["p_value"], 3) == 0.085
    assert [round(r["p_value"], 3) for r in doc["holm"]] == [0.803, 0.046]


def test_ranktest_from_errors(runner, tmp_path):
    path = tmp_path / "errors.csv"
    path.write_text("dataset,m1,m2,m3\nd1,0.1,0.2,0.3\nd2,0.1,0.3,0.2\nd3,0.05,0.1,0.2\n")
    res = runner.invoke(main, ["ranktest", "--errors", str(path)])
    assert res.exit_code == 0, res.output
    doc = json.loads(res.output)
    assert doc["methods"] == ["m1", "m2", "m3"]
    assert doc["mean_ranks"][0] == 1.0


def test_ranktest_argument_errors(runner):
    assert runner.invoke(main, ["ranktest"]).exit_code != 0
    assert runner.invoke(main, ["ranktest", "--ranks", "1,2"]).exit_code != 0


def test_bounds_command(runner):
    res = runner.invoke(main, ["bounds", "--kernel", "poly", "--degree", "2", "--coef", "1", "--p", "2",
                               "--eta", "1", "--n", "3", "--x-norm", "5"])
    assert res.exit_code == 0
    assert float(res.output) == pytest.approx(123 ** 0.5)
    res = runner.invoke(main, ["bounds", "--kernel", "rbf", "--eta", "0", "--n", "3"])
    assert float(res.output) == 0.0
