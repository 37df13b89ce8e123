"""
Model serialization as a single JSON document.

Every float is written with float.hex() so a saved model loads back
bit for bit.
"""

import glob
import json
import logging
import os
from typing import List

import numpy as np

from ..core.data_io import DatasetBundle, FeatureScaler, add_bias_feature, apply_scaler
from ..core.errors import ConfigError, DimensionError
from ..utils.utils import decode_array, encode_array
from .joint_trainer import IterationRecord, MkMtrlModel
from .kernel_bank import KernelSpec, compute_gram
from .solvers import DualSolution, predict_scores

logger = logging.getLogger("ModelStore")

FORMAT_VERSION = 1


def _encode_float(value: float) -> str:
    return float(value).hex()


def _solution_payload(sol: DualSolution) -> dict:
    return {
        "alpha": encode_array(sol.alpha),
        "bias": _encode_float(sol.bias),
        "dual_objective": _encode_float(sol.dual_objective),
        "kind": sol.kind,
        "converged": sol.converged,
        "n_iter": sol.n_iter,
    }


def model_to_dict(model: MkMtrlModel) -> dict:
    tasks = []
    for t, sol in enumerate(model.models):
        entry = {"solution": _solution_payload(sol), "labels": encode_array(model.labels[t])}
        if model.train_features is not None:
            entry["features"] = encode_array(model.train_features[t])
        tasks.append(entry)
    payload = {
        "format": FORMAT_VERSION,
        "algorithm": model.algorithm,
        "kind": model.kind,
        "specs": [spec.to_dict() for spec in model.specs],
        "B": encode_array(model.B),
        "Omega": encode_array(model.Omega),
        "trace_scales": encode_array(model.trace_scales),
        "history": [
            {"outer": r.outer, "inner": r.inner,
             "objective": _encode_float(r.objective), "b_change": _encode_float(r.b_change)}
            for r in model.history
        ],
        "tasks": tasks,
        "add_bias": model.add_bias,
    }
    if model.scaler is not None:
        payload["scaler"] = {
            "means": [encode_array(m) for m in model.scaler.means],
            "scales": [encode_array(s) for s in model.scaler.scales],
        }
    return payload


def model_from_dict(payload: dict) -> MkMtrlModel:
    if payload.get("format") != FORMAT_VERSION:
        raise ConfigError(f"unsupported model format {payload.get('format')}")
    models, labels, features = [], [], []
    for entry in payload["tasks"]:
        sol = entry["solution"]
        models.append(DualSolution(
            alpha=decode_array(sol["alpha"]),
            bias=float.fromhex(sol["bias"]),
            dual_objective=float.fromhex(sol["dual_objective"]),
            kind=sol["kind"],
            converged=sol["converged"],
            n_iter=sol["n_iter"],
        ))
        labels.append(decode_array(entry["labels"]))
        if "features" in entry:
            features.append(decode_array(entry["features"]))

    scaler = None
    if "scaler" in payload:
        scaler = FeatureScaler(
            tuple(decode_array(m) for m in payload["scaler"]["means"]),
            tuple(decode_array(s) for s in payload["scaler"]["scales"]),
        )

    return MkMtrlModel(
        B=decode_array(payload["B"]),
        Omega=decode_array(payload["Omega"]),
        models=tuple(models),
        specs=tuple(KernelSpec.from_dict(s) for s in payload["specs"]),
        labels=tuple(labels),
        trace_scales=decode_array(payload["trace_scales"]),
        kind=payload["kind"],
        history=tuple(
            IterationRecord(r["outer"], r["inner"], float.fromhex(r["objective"]), float.fromhex(r["b_change"]))
            for r in payload["history"]
        ),
        algorithm=payload["algorithm"],
        train_features=tuple(features) if len(features) == len(models) else None,
        scaler=scaler,
        add_bias=bool(payload.get("add_bias", False)),
    )


def save_model(model: MkMtrlModel, path: str) -> str:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(model_to_dict(model), handle, indent=1)
    logger.debug(f"Saved model to {path}")
    return path


def load_model(path: str) -> MkMtrlModel:
    """Load a model file, or the single model in a model directory"""
    if os.path.isdir(path):
        candidate = os.path.join(path, "model.json")
        if os.path.exists(candidate):
            path = candidate
        else:
            found = sorted(glob.glob(os.path.join(path, "*.json")))
            if len(found) != 1:
                raise ConfigError(f"{path} holds {len(found)} model files; name one explicitly")
            path = found[0]
    if not os.path.exists(path):
        raise FileNotFoundError(f"Model not found at: {path}")
    with open(path, "r", encoding="utf-8") as handle:
        try:
            payload = json.load(handle)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path} is not a model document: {e}") from None
    return model_from_dict(payload)


def predict_points(model: MkMtrlModel, bundle: DatasetBundle, scale: bool = True) -> List[np.ndarray]:
    """
    Score new rows against the stored training rows.

    Args:
        model: Model carrying train_features
        bundle: Raw (unscaled) rows, one task per model task, without the bias
            column when the model was trained with one
        scale: Apply the stored train scaler first
    """
    if model.train_features is None:
        raise ConfigError("model does not carry training rows; cannot score new points")
    if bundle.n_tasks != model.n_tasks:
        raise DimensionError(f"model has {model.n_tasks} tasks, data has {bundle.n_tasks}")
    if model.add_bias:
        bundle = add_bias_feature(bundle)
    if bundle.dim != model.train_features[0].shape[1]:
        raise DimensionError(f"model expects d={model.train_features[0].shape[1]}, data has d={bundle.dim}")
    if scale and model.scaler is not None:
        bundle = apply_scaler(bundle, model.scaler)

    scores = []
    for t, task in enumerate(bundle.tasks):
        cross = np.stack([
            compute_gram(spec, task.features, model.train_features[t]).values / model.trace_scales[t][k]
            for k, spec in enumerate(model.specs)
        ])
        scores.append(predict_scores(cross, model.B[:, t], model.models[t], model.labels[t]))
    return scores
