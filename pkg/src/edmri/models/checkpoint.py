"""JSON checkpoints for fitted classifiers.

Schema (``format`` = ``edmri-model/1``)::

    {
      "format": "edmri-model/1",
      "kind": "logreg" | "linear_svm" | "mlp" | "fusion" | "mtl",
      "hyperparameters": {...},            # estimator get_params()
      "network": {...},                    # layer sizes
      "feature_names": [...],              # input column order
      "standardization": {"mean": [...], "scale": [...]},
      "parameters": {name: {"shape": [...], "values": [...]}},   # row-major
      "aux": {"age_mean": float, "age_scale": float},            # mtl only
      "history": {"train_loss": [...], "val_balanced_accuracy": [...], "learning_rate": [...]},
      "best_epoch": int
    }
"""

from __future__ import annotations

import json

import numpy as np

from edmri.errors import FormatError
from edmri.models.estimators import MODEL_KINDS, TrainingHistory
from edmri.models.networks import build_network

FORMAT = "edmri-model/1"


def to_checkpoint(model, feature_names=None) -> dict:
    model._check_fitted()
    names = list(feature_names) if feature_names is not None else [
        f"x{i}" for i in range(model.n_features_in_)
    ]
    doc = {
        "format": FORMAT,
        "kind": model.kind,
        "hyperparameters": model.get_params(),
        "network": model.network_.config(),
        "feature_names": names,
        "standardization": {"mean": model.mean_.tolist(), "scale": model.scale_.tolist()},
        "parameters": {
            name: {"shape": list(arr.shape), "values": arr.ravel().tolist()}
            for name, arr in model.params_.items()
        },
        "history": model.history_.to_dict(),
        "best_epoch": int(model.best_epoch_),
    }
    if model.kind == "mtl":
        doc["aux"] = {"age_mean": model.age_mean_, "age_scale": model.age_scale_}
    return doc


def from_checkpoint(doc: dict):
    if doc.get("format") != FORMAT:
        raise FormatError(f"not an {FORMAT} checkpoint")
    try:
        cls = MODEL_KINDS[doc["kind"]]
        model = cls(**doc["hyperparameters"])
        model.network_ = build_network(cls.arch, **doc["network"])
        layout = model.network_.layout
        flat = np.zeros(layout.size)
        views = layout.views(flat)
        for name, arr in views.items():
            entry = doc["parameters"][name]
            values = np.asarray(entry["values"], dtype=float)
            if tuple(entry["shape"]) != arr.shape or values.size != arr.size:
                raise FormatError(f"parameter {name} has shape {entry['shape']}, expected {list(arr.shape)}")
            arr[...] = values.reshape(arr.shape)
        model.params_flat_ = flat
        model.params_ = views
        model.mean_ = np.asarray(doc["standardization"]["mean"], dtype=float)
        model.scale_ = np.asarray(doc["standardization"]["scale"], dtype=float)
        model.n_features_in_ = model.mean_.size
        model.classes_ = np.array([0, 1])
        model.history_ = TrainingHistory(**doc["history"])
        model.best_epoch_ = int(doc["best_epoch"])
        model.n_epochs_ = len(model.history_.train_loss)
        if model.kind == "mtl":
            model.age_mean_ = float(doc["aux"]["age_mean"])
            model.age_scale_ = float(doc["aux"]["age_scale"])
    except (KeyError, TypeError) as exc:
        raise FormatError(f"malformed checkpoint: {exc}") from None
    model.feature_names_in_ = np.asarray(doc["feature_names"], dtype=object)
    return model


def save_checkpoint(model, path, feature_names=None):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(to_checkpoint(model, feature_names), fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path):
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: invalid JSON: {exc}") from None
    return from_checkpoint(doc)
