import csv

import numpy as np
import pytest

from main import build_parser, main
from src.core.data_io import DatasetBundle, TaskDataset
from src.mkl.joint_trainer import predict
from src.mkl.kernel_bank import build_bank
from src.mkl.model_store import load_model

CONFIG = """\
DATA_FORMAT=synthetic
SYNTH_TASKS=4
SYNTH_CLUSTERS=2
SYNTH_N=30
SYNTH_DIM=3
KERNELS=polynomial:2
ALGORITHMS=mkmtrl
TRAIN_PER_TASK=16
RUNS=1
GRID_C=1
MAX_OUTER=2
MAX_INNER=3
"""


@pytest.fixture
def experiment(tmp_path):
    path = tmp_path / "exp.env"
    path.write_text(CONFIG)
    return str(path)


def test_validate_ok(experiment, capsys):
    assert main(["validate", experiment]) == 0
    assert capsys.readouterr().out.startswith("OK: 4 tasks, d=3, classification")


def test_validate_missing(tmp_path):
    assert main(["validate", str(tmp_path / "missing.env")]) == 2


def test_run_then_predict(tmp_path, experiment):
    out = tmp_path / "out"
    assert main(["run", experiment, "--output", str(out), "--workers", "1"]) == 0

    (tmp_path / "new").mkdir()
    names = []
    for t in range(4):
        name = f"t{t}.txt"
        (tmp_path / "new" / name).write_text("0 1:0.5 2:-0.3 3:1\n0 1:-1 3:0.25\n")
        names.append(name)
    manifest = tmp_path / "new" / "manifest.txt"
    manifest.write_text("\n".join(names) + "\n")

    scores = tmp_path / "scores.csv"
    model = str(out / "model" / "mkmtrl_n16_run0.json")
    assert main(["predict", model, str(manifest), "--output", str(scores)]) == 0
    with open(scores, newline="") as handle:
        rows = list(csv.reader(handle))
    assert rows[0] == ["task", "index", "score"]
    assert [row[:2] for row in rows[1:]] == [[str(t), str(i)] for t in range(4) for i in range(2)]
    for row in rows[1:]:
        float(row[2])


def test_predict_missing_model(tmp_path):
    assert main(["predict", str(tmp_path / "none.json"), str(tmp_path / "x.txt")]) == 2


def test_parser_requires_command():
    with pytest.raises(SystemExit):
        build_parser().parse_args([])


def test_predict_with_bias_model(tmp_path, experiment):
    with open(experiment, "a") as handle:
        handle.write("DATA_ADD_BIAS=true\n")
    out = tmp_path / "out"
    assert main(["run", experiment, "--output", str(out), "--workers", "1"]) == 0
    model = load_model(str(out / "model" / "mkmtrl_n16_run0.json"))
    assert model.add_bias

    # 训练行还原成未标准化、不含偏置列的原始输入
    (tmp_path / "raw").mkdir()
    names = []
    for t, features in enumerate(model.train_features):
        raw = features * model.scaler.scales[t] + model.scaler.means[t]
        lines = ["0 " + " ".join(f"{j + 1}:{float(v)!r}" for j, v in enumerate(row[:-1])) for row in raw]
        (tmp_path / "raw" / f"t{t}.txt").write_text("\n".join(lines) + "\n")
        names.append(f"t{t}.txt")
    manifest = tmp_path / "raw" / "manifest.txt"
    manifest.write_text("\n".join(names) + "\n")

    scores = tmp_path / "scores.csv"
    assert main(["predict", str(out / "model"), str(manifest), "--output", str(scores)]) == 0
    with open(scores, newline="") as handle:
        rows = list(csv.reader(handle))[1:]

    train = DatasetBundle(tuple(TaskDataset(t, X, y, "classification")
                                for t, (X, y) in enumerate(zip(model.train_features, model.labels))))
    expected = predict(model, build_bank(train, model.specs, train))
    got = [[float(r[2]) for r in rows if r[0] == str(t)] for t in range(4)]
    for a, b in zip(got, expected):
        assert np.allclose(a, b, rtol=1e-8, atol=1e-10)
