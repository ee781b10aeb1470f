import csv
import json

import pytest

from candiff import cli
from candiff.datamodel import lap_filename, load_dataset

TRAIN_FLAGS = ["--epochs", "1", "--steps", "10", "--channels", "8", "--blocks", "1", "--stride", "512"]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    assert cli.main(["synth", "--vehicles", "2", "--laps", "2", "--length", "600", "--seed", "3", "--out", str(data)]) == 0
    assert cli.main(["train", str(data), "--seed", "1", "--out", str(root / "model"), *TRAIN_FLAGS]) == 0
    return root


def test_synth_outputs(workspace):
    data = workspace / "data"
    assert (data / lap_filename("v00", 0)).is_file()
    rep = json.loads((data / "synth_report.json").read_text())
    assert rep["laps"] == 2 and rep["config"]["seed"] == 3


def test_synth_refuses_non_empty_dir(tmp_path):
    big = ["synth", "--vehicles", "2", "--laps", "2", "--length", "600", "--seed", "3", "--out", str(tmp_path)]
    small = ["synth", "--vehicles", "1", "--laps", "1", "--length", "600", "--seed", "3", "--out", str(tmp_path)]
    assert cli.main(big) == cli.EXIT_OK
    assert cli.main(small) == cli.EXIT_IO
    assert cli.main(small + ["--force"]) == cli.EXIT_OK
    assert len(load_dataset(tmp_path).laps) == 1


def test_synth_records_drawn_seed(tmp_path):
    assert cli.main(["synth", "--vehicles", "1", "--laps", "1", "--length", "600", "--out", str(tmp_path)]) == 0
    assert isinstance(json.loads((tmp_path / "synth_report.json").read_text())["config"]["seed"], int)


def test_train_outputs(workspace):
    m = workspace / "model"
    assert (m / "model.ckpt").is_file() and (m / "curve.png").is_file()
    rows = list(csv.reader((m / "curve.csv").open()))
    assert rows[0] == ["epoch", "loss"] and len(rows) == 2


def test_gen_lap_and_eval(workspace):
    out = workspace / "gen"
    args = ["gen-lap", "--model", str(workspace / "model" / "model.ckpt"), str(workspace / "data"),
            "--candidates", "2", "--steps", "2", "--seed", "0", "--out", str(out)]
    assert cli.main(args) == 0
    lap = out / "generated_v00.csv"
    first = lap.read_bytes()
    assert (out / "generated_v00.png").is_file()
    rep = json.loads((out / "report.json").read_text())
    assert rep["plan"]["reverse"] == 2 and len(rep["windows"]) >= 1
    assert cli.main(args) == 0
    assert lap.read_bytes() == first
    assert cli.main(["eval", str(lap), str(workspace / "data"), "--vehicle", "v00", "--out", str(workspace / "ev")]) == 0


def test_impute_with_regions(workspace):
    regions = workspace / "regions.json"
    regions.write_text(json.dumps([[520, 560]]))
    lap = workspace / "data" / lap_filename("v01", 0)
    out = workspace / "imp"
    args = ["impute", "--model", str(workspace / "model" / "model.ckpt"), str(workspace / "data"), str(lap),
            "--regions", str(regions), "--steps", "2", "--candidates", "2", "--channels", "torques", "--seed", "0",
            "--out", str(out)]
    assert cli.main(args) == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["vehicle"] == "v01" and rep["regions"] == [[520, 560]]
    assert json.loads((out / "imputed_regions.json").read_text())["channels"] == "torques"


def test_ablate_csv_schema(workspace):
    model = str(workspace / "model" / "model.ckpt")
    # two laps of 600 samples give 2 windows, fewer than MSE_acc95 needs
    assert cli.main(["ablate", "--model", model, str(workspace / "data"), "--steps-list", "1,2",
                     "--out", str(workspace / "abl0")]) == cli.EXIT_VALIDATION
    long = workspace / "long"
    assert cli.main(["synth", "--vehicles", "1", "--laps", "1", "--length", "10752", "--seed", "2", "--out", str(long)]) == 0
    out = workspace / "abl"
    args = ["ablate", "--model", model, str(long), "--steps-list", "1,2", "--seed", "0", "--out", str(out)]
    assert cli.main(args) == 0
    text = (out / "ablation.csv").read_text()
    rows = list(csv.reader(text.splitlines()))
    assert rows[0] == ["steps", "mse_acc95", "mse_speed", "mse_swa"]
    assert [r[0] for r in rows[1:]] == ["1", "2"]
    assert (out / "ablation.png").is_file()
    assert cli.main(args) == 0
    assert (out / "ablation.csv").read_text() == text


def test_exit_codes(workspace, tmp_path):
    model = str(workspace / "model" / "model.ckpt")
    data = str(workspace / "data")
    assert cli.main(["train", str(tmp_path / "missing")]) == cli.EXIT_IO
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"not a checkpoint")
    assert cli.main(["gen-lap", "--model", str(bad), data, "--out", str(tmp_path / "o")]) == cli.EXIT_IO
    assert cli.main(["gen-lap", "--model", model, data, "--steps", "50", "--out", str(tmp_path / "o")]) == cli.EXIT_VALIDATION
    assert cli.main(["gen-lap", "--model", model, data, "--vehicle", "zz", "--out", str(tmp_path / "o")]) == cli.EXIT_VALIDATION
    with pytest.raises(SystemExit):
        cli.main(["ablate", "--model", model, data, "--steps-list", "a,b"])
