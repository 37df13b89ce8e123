import json
from dataclasses import replace

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from src.core.data_io import REGRESSION, add_bias_feature, load_sparse_text, zscore_normalize
from src.core.errors import ConfigError, DimensionError
from src.mkl.joint_trainer import TrainConfig, fit_joint, predict
from src.mkl.kernel_bank import build_bank
from src.mkl.model_store import load_model, predict_points, save_model


@pytest.fixture
def fitted(clustered_bundle, clustered_bank):
    model = fit_joint(clustered_bank, clustered_bundle.labels, TrainConfig(max_outer=2, max_inner=3))
    return replace(model, train_features=tuple(task.features for task in clustered_bundle.tasks))


def test_roundtrip_is_bit_exact(tmp_path, fitted):
    path = save_model(fitted, str(tmp_path / "model" / "m.json"))
    loaded = load_model(path)
    assert_array_equal(loaded.B, fitted.B)
    assert_array_equal(loaded.Omega, fitted.Omega)
    assert_array_equal(loaded.trace_scales, fitted.trace_scales)
    assert loaded.specs == fitted.specs
    assert loaded.history == fitted.history
    for a, b in zip(loaded.models, fitted.models):
        assert_array_equal(a.alpha, b.alpha)
        assert a.bias == b.bias
    for a, b in zip(loaded.train_features, fitted.train_features):
        assert_array_equal(a, b)


def test_directory_with_single_model(tmp_path, fitted):
    save_model(fitted, str(tmp_path / "only.json"))
    assert_array_equal(load_model(str(tmp_path)).B, fitted.B)


def test_load_errors(tmp_path, fitted):
    with pytest.raises(FileNotFoundError):
        load_model(str(tmp_path / "missing.json"))
    save_model(fitted, str(tmp_path / "a.json"))
    save_model(fitted, str(tmp_path / "b.json"))
    with pytest.raises(ConfigError):
        load_model(str(tmp_path))
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        load_model(str(bad))
    old = tmp_path / "old.json"
    old.write_text(json.dumps({"format": 0}))
    with pytest.raises(ConfigError):
        load_model(str(old))


def test_predict_points_matches_bank(clustered_bundle, clustered_bank, fitted):
    expected = predict(fitted, clustered_bank)
    for a, b in zip(predict_points(fitted, clustered_bundle), expected):
        assert_allclose(a, b, rtol=1e-10, atol=1e-12)


def test_predict_points_applies_scaler(tmp_path, clustered_bundle, poly_specs):
    scaled = zscore_normalize(clustered_bundle)
    bank = build_bank(scaled, poly_specs, scaled)
    model = fit_joint(bank, scaled.labels, TrainConfig(max_outer=1, max_inner=2))
    model = replace(model, train_features=tuple(t.features for t in scaled.tasks), scaler=scaled.scaler)
    loaded = load_model(save_model(model, str(tmp_path / "m.json")))
    for a, b in zip(predict_points(loaded, clustered_bundle), predict(model, bank)):
        assert_allclose(a, b, rtol=1e-10, atol=1e-12)


def test_predict_points_errors(clustered_bundle, regression_bundle, fitted):
    with pytest.raises(ConfigError):
        predict_points(replace(fitted, train_features=None), clustered_bundle)
    with pytest.raises(DimensionError):
        predict_points(fitted, regression_bundle)


def _write_sparse(directory, bundle):
    names = []
    for task in bundle.tasks:
        name = f"task{task.task_id}.txt"
        lines = [" ".join([repr(float(y))] + [f"{j + 1}:{float(v)!r}" for j, v in enumerate(row)])
                 for row, y in zip(task.features, task.labels)]
        (directory / name).write_text("\n".join(lines) + "\n")
        names.append(name)
    manifest = directory / "manifest.txt"
    manifest.write_text("\n".join(names) + "\n")
    return str(manifest)


def test_bias_model_scores_raw_rows(tmp_path, regression_bundle, poly_specs):
    train = zscore_normalize(add_bias_feature(regression_bundle))
    bank = build_bank(train, poly_specs, train)
    model = fit_joint(bank, train.labels, TrainConfig(kind="krr", lam=0.1, max_outer=2, max_inner=3))
    model = replace(model, train_features=tuple(t.features for t in train.tasks), scaler=train.scaler,
                    add_bias=True)
    loaded = load_model(save_model(model, str(tmp_path / "m.json")))
    assert loaded.add_bias

    raw = load_sparse_text(_write_sparse(tmp_path, regression_bundle), kind=REGRESSION, dim=regression_bundle.dim)
    for a, b in zip(predict_points(loaded, raw), predict(model, bank)):
        assert_allclose(a, b, rtol=1e-9, atol=1e-10)
    with pytest.raises(DimensionError):
        predict_points(loaded, add_bias_feature(regression_bundle))
