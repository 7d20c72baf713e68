import csv
import json
import shutil
import subprocess
import sys

import numpy as np
import pytest

from nrelaggs import datasets
from nrelaggs.cli import main
from nrelaggs.preprocess import generate_aggregation_plan, read_bundle
from nrelaggs.relaggs import relaggs_width

TRAINS = str(datasets.schema_path("trains"))


def run(*args):
    return main([str(a) for a in args])


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_ingest(tmp_path, capsys):
    assert run("ingest", "--schema", TRAINS, "--out", tmp_path / "a") == 0
    stats = (tmp_path / "a" / "stats.txt").read_text()
    assert "cars" in stats and "63" in stats and "east(10), west(10)" in stats
    lines = {l.split()[0]: l.split()[1:] for l in stats.splitlines()[1:3]}
    assert lines == {"cars": ["10", "63"], "trains": ["2", "20"]}
    batch = read_bundle(tmp_path / "a" / "bundles.bin")
    assert batch.n == 20 and batch.total_rows == [20, 63]
    assert json.loads((tmp_path / "a" / "manifest.json").read_text())["command"] == "ingest"
    run("ingest", "--schema", TRAINS, "--out", tmp_path / "b")
    assert (tmp_path / "a" / "bundles.bin").read_bytes() == (tmp_path / "b" / "bundles.bin").read_bytes()


def test_missing_table_file(tmp_path, capsys):
    shutil.copy(TRAINS, tmp_path / "schema.json")
    shutil.copy(datasets.schema_path("trains").parent / "trains.csv", tmp_path)
    assert run("ingest", "--schema", tmp_path / "schema.json", "--out", tmp_path / "o") != 0
    assert "MissingTableFile" in capsys.readouterr().err


def test_propositionalize_relaggs(tmp_path, trains_batch):
    plan, _, _, batch = trains_batch
    assert run("propositionalize", "--engine", "relaggs", "--schema", TRAINS, "--out", tmp_path, "--dump-bundles") == 0
    rows = read_csv(tmp_path / "propositional.csv")
    width = relaggs_width(plan, batch.widths)
    assert rows[0] == [f"f{i}" for i in range(width)] + ["target"]
    assert len(rows) == 21 and all(len(r) == width + 1 for r in rows)
    assert (tmp_path / "bundles.bin").exists() and (tmp_path / "manifest.json").exists()


def test_propositionalize_nrelaggs_needs_checkpoint(tmp_path, capsys):
    assert run("propositionalize", "--engine", "nrelaggs", "--schema", TRAINS, "--out", tmp_path) != 0
    assert "MissingCheckpoint" in capsys.readouterr().err
    assert run("extract-features", "--schema", TRAINS, "--out", tmp_path, "--checkpoint", tmp_path / "nope.npz") != 0


def test_train_then_extract(tmp_path):
    config = json.dumps({"predictor_layers": [6], "epochs": 5})
    assert run("train", "--schema", TRAINS, "--out", tmp_path / "t", "--config", config) == 0
    ckpt = tmp_path / "t" / "model.npz"
    assert run("extract-features", "--schema", TRAINS, "--out", tmp_path / "e", "--checkpoint", ckpt) == 0
    rows = read_csv(tmp_path / "e" / "features.csv")
    assert rows[0][0] == "e0" and rows[0][-1] == "target"
    assert len(rows) == 21 and len({len(r) for r in rows}) == 1
    assert {r[-1] for r in rows[1:]} == {"east", "west"}
    values = np.array([r[:-1] for r in rows[1:]], dtype=float)
    assert np.all(np.isfinite(values))
    assert run("propositionalize", "--engine", "nrelaggs", "--schema", TRAINS, "--out", tmp_path / "p", "--checkpoint", ckpt) == 0
    assert read_csv(tmp_path / "p" / "propositional.csv") == rows
    assert run("extract-features", "--schema", TRAINS, "--out", tmp_path / "h", "--checkpoint", ckpt,
               "--layer", "predictor_hidden(0)") == 0
    assert len(read_csv(tmp_path / "h" / "features.csv")[0]) == 7
    manifest = json.loads((tmp_path / "t" / "manifest.json").read_text())
    assert manifest["config"]["predictor_layers"] == [6] and manifest["config_grid"] is None


def test_evaluate_majority(tmp_path):
    assert run("evaluate", "--engine", "majority", "--schema", TRAINS, "--out", tmp_path) == 0
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["accuracy_mean"] == 0.5 and len(report["folds"]) == 20
    assert read_csv(tmp_path / "summary.csv")[1][:2] == ["majority", "trains"]


def test_evaluate_fold_flags(tmp_path):
    assert run("evaluate", "--engine", "majority", "--folds", 3, "--repeats", 1, "--schema", TRAINS, "--out", tmp_path) == 0
    assert len(json.loads((tmp_path / "report.json").read_text())["folds"]) == 3


def test_invalid_engine_is_usage_error(tmp_path):
    with pytest.raises(SystemExit) as info:
        run("evaluate", "--engine", "svm", "--schema", TRAINS, "--out", tmp_path)
    assert info.value.code == 2


def test_manifest_reruns_identically(tmp_path):
    out = tmp_path / "first"
    cmd = [sys.executable, "-m", "nrelaggs.cli", "evaluate", "--engine", "fix_nrelaggs", "--folds", "2", "--repeats", "1",
           "--config", '{"predictor_layers": [4], "epochs": 3}', "--jobs", "1", "--schema", TRAINS, "--out", str(out)]
    subprocess.run(cmd, check=True, capture_output=True)
    manifest = json.loads((out / "manifest.json").read_text())
    argv = manifest["argv"]
    argv[argv.index("--out") + 1] = str(tmp_path / "second")
    subprocess.run([sys.executable, "-m", "nrelaggs.cli", *argv], check=True, capture_output=True)
    strip = lambda p: {k: v for k, v in json.loads(p.read_text()).items() if k != "wall_clock_seconds"}
    assert strip(out / "report.json") == strip(tmp_path / "second" / "report.json")
    assert (out / "summary.csv").read_text() == (tmp_path / "second" / "summary.csv").read_text()


def test_console_script_exit_code(tmp_path):
    exe = shutil.which("nrelaggs")
    if exe is None:
        pytest.skip("console script not installed")
    proc = subprocess.run([exe, "ingest", "--schema", str(tmp_path / "none.json"), "--out", str(tmp_path)], capture_output=True)
    assert proc.returncode != 0
