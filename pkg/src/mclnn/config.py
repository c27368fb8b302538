"""Model and training configuration.

Configs are JSON documents merged over :data:`DEFAULTS`. The defaults
describe the two-layer Urbansound8k model: masked layers of 300 and 200
units (bandwidth 20 / overlap -5, bandwidth 5 / overlap 3), order 15,
5 pooled frames and two dense layers of 100 units.

Schema (version 1)::

    {
      "version": 1,
      "feature_length": 120,
      "order": 15,
      "layers": [{"width": 300, "bandwidth": 20, "overlap": -5, "masked": true}, ...],
      "extra_frames": 5,
      "dense_widths": [100, 100],
      "classes": [],
      "dropout": 0.5,
      "seed": 42,
      "train_hop": 1,
      "inference_hop": 1,
      "dtype": "float32",
      "optimizer": {"learning_rate": 0.001, "beta1": 0.9, "beta2": 0.999, "epsilon": 1e-8,
                    "batch_size": 200, "max_epochs": 200, "patience": 20}
    }

``layers`` replaces the default list wholesale; ``optimizer`` is merged key
by key. An empty ``classes`` list means "take the labels from the data".
"""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .masks import MaskSpec
from .network import ModelParams, init_params, segment_width

__all__ = ["ConfigError", "LayerConfig", "ModelConfig", "DEFAULTS", "load_config", "config_from_dict", "build_params"]

DEFAULTS = {
    "version": 1,
    "feature_length": 120,
    "order": 15,
    "layers": [
        {"width": 300, "bandwidth": 20, "overlap": -5, "masked": True},
        {"width": 200, "bandwidth": 5, "overlap": 3, "masked": True},
    ],
    "extra_frames": 5,
    "dense_widths": [100, 100],
    "classes": [],
    "dropout": 0.5,
    "seed": 42,
    "train_hop": 1,
    "inference_hop": 1,
    "dtype": "float32",
    "optimizer": {
        "learning_rate": 0.001,
        "beta1": 0.9,
        "beta2": 0.999,
        "epsilon": 1e-8,
        "batch_size": 200,
        "max_epochs": 200,
        "patience": 20,
    },
}

_LAYER_KEYS = {"width", "bandwidth", "overlap", "masked"}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class LayerConfig:
    width: int
    bandwidth: int = 1
    overlap: int = 0
    masked: bool = True

    @property
    def mask_spec(self) -> MaskSpec | None:
        return MaskSpec(self.bandwidth, self.overlap) if self.masked else None


@dataclass(frozen=True)
class ModelConfig:
    feature_length: int
    order: int
    layers: tuple[LayerConfig, ...]
    extra_frames: int
    dense_widths: tuple[int, ...]
    classes: tuple[str, ...]
    dropout: float
    seed: int
    train_hop: int
    inference_hop: int
    dtype: str
    learning_rate: float
    beta1: float
    beta2: float
    epsilon: float
    batch_size: int
    max_epochs: int
    patience: int
    version: int = 1

    @property
    def k(self) -> int:
        return self.extra_frames

    @property
    def segment_width(self) -> int:
        return segment_width(self.order, len(self.layers), self.extra_frames)

    def with_classes(self, classes) -> "ModelConfig":
        return replace(self, classes=tuple(classes))

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "feature_length": self.feature_length,
            "order": self.order,
            "layers": [
                {"width": l.width, "bandwidth": l.bandwidth, "overlap": l.overlap, "masked": l.masked}
                for l in self.layers
            ],
            "extra_frames": self.extra_frames,
            "dense_widths": list(self.dense_widths),
            "classes": list(self.classes),
            "dropout": self.dropout,
            "seed": self.seed,
            "train_hop": self.train_hop,
            "inference_hop": self.inference_hop,
            "dtype": self.dtype,
            "optimizer": {
                "learning_rate": self.learning_rate,
                "beta1": self.beta1,
                "beta2": self.beta2,
                "epsilon": self.epsilon,
                "batch_size": self.batch_size,
                "max_epochs": self.max_epochs,
                "patience": self.patience,
            },
        }


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _merge(doc: dict) -> dict:
    unknown = set(doc) - set(DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown key(s): {', '.join(sorted(unknown))}")
    merged = copy.deepcopy(DEFAULTS)
    for key, value in doc.items():
        if key == "optimizer":
            if not isinstance(value, dict):
                raise ConfigError("optimizer: must be an object")
            bad = set(value) - set(DEFAULTS["optimizer"])
            if bad:
                raise ConfigError(f"optimizer: unknown key(s): {', '.join(sorted(bad))}")
            merged["optimizer"].update(value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def _check(cond: bool, path: str, message: str):
    if not cond:
        raise ConfigError(f"{path}: {message}")


def config_from_dict(doc: dict) -> ModelConfig:
    """Merge ``doc`` over the defaults and validate the result."""
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    d = _merge(doc)
    _check(d["version"] == 1, "version", f"unsupported schema version {d['version']!r}")
    for key in ("feature_length", "order", "extra_frames", "seed", "train_hop", "inference_hop"):
        _check(_is_int(d[key]), key, "must be an integer")
    for key in ("feature_length", "order", "extra_frames", "train_hop", "inference_hop"):
        _check(d[key] >= 1, key, "must be >= 1")
    _check(d["seed"] >= 0, "seed", "must be >= 0")

    _check(isinstance(d["layers"], list) and d["layers"], "layers", "must be a non-empty list")
    layers = []
    width = d["feature_length"]
    for i, layer in enumerate(d["layers"]):
        path = f"layers[{i}]"
        _check(isinstance(layer, dict), path, "must be an object")
        bad = set(layer) - _LAYER_KEYS
        _check(not bad, path, f"unknown key(s): {', '.join(sorted(bad))}")
        _check("width" in layer, path, "missing width")
        masked = layer.get("masked", True)
        _check(isinstance(masked, bool), f"{path}.masked", "must be true or false")
        _check(_is_int(layer["width"]) and layer["width"] >= 1, f"{path}.width", "must be an integer >= 1")
        if masked:
            for key in ("bandwidth", "overlap"):
                _check(key in layer, path, f"masked layer needs {key}")
                _check(_is_int(layer[key]), f"{path}.{key}", "must be an integer")
            bw, ov = layer["bandwidth"], layer["overlap"]
            _check(bw >= 1, f"{path}.bandwidth", "must be >= 1")
            _check(bw <= width, f"{path}.bandwidth", f"must not exceed the layer input length {width}")
            _check(ov < bw, f"{path}.overlap", f"must be smaller than bandwidth ({bw})")
            layers.append(LayerConfig(layer["width"], bw, ov, True))
        else:
            layers.append(LayerConfig(layer["width"], layer.get("bandwidth", 1), layer.get("overlap", 0), False))
        width = layer["width"]

    _check(isinstance(d["dense_widths"], list), "dense_widths", "must be a list")
    for i, w in enumerate(d["dense_widths"]):
        _check(_is_int(w) and w >= 1, f"dense_widths[{i}]", "must be an integer >= 1")
    _check(isinstance(d["classes"], list) and all(isinstance(c, str) for c in d["classes"]),
           "classes", "must be a list of strings")
    _check(len(set(d["classes"])) == len(d["classes"]), "classes", "labels must be unique")
    _check(_is_number(d["dropout"]) and 0 <= d["dropout"] < 1, "dropout", "must be in [0, 1)")
    _check(d["dtype"] in ("float32", "float64"), "dtype", "must be float32 or float64")

    opt = d["optimizer"]
    for key in ("learning_rate", "beta1", "beta2", "epsilon"):
        _check(_is_number(opt[key]) and np.isfinite(opt[key]), f"optimizer.{key}", "must be a finite number")
    _check(opt["learning_rate"] > 0, "optimizer.learning_rate", "must be > 0")
    for key in ("beta1", "beta2"):
        _check(0 <= opt[key] < 1, f"optimizer.{key}", "must be in [0, 1)")
    _check(opt["epsilon"] > 0, "optimizer.epsilon", "must be > 0")
    for key, low in (("batch_size", 1), ("max_epochs", 1), ("patience", 0)):
        _check(_is_int(opt[key]) and opt[key] >= low, f"optimizer.{key}", f"must be an integer >= {low}")

    return ModelConfig(
        feature_length=d["feature_length"],
        order=d["order"],
        layers=tuple(layers),
        extra_frames=d["extra_frames"],
        dense_widths=tuple(d["dense_widths"]),
        classes=tuple(d["classes"]),
        dropout=float(d["dropout"]),
        seed=d["seed"],
        train_hop=d["train_hop"],
        inference_hop=d["inference_hop"],
        dtype=d["dtype"],
        learning_rate=float(opt["learning_rate"]),
        beta1=float(opt["beta1"]),
        beta2=float(opt["beta2"]),
        epsilon=float(opt["epsilon"]),
        batch_size=opt["batch_size"],
        max_epochs=opt["max_epochs"],
        patience=opt["patience"],
        version=d["version"],
    )


def load_config(path) -> ModelConfig:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return config_from_dict(doc)


def build_params(config: ModelConfig, rng, dtype=None) -> ModelParams:
    """Freshly initialised parameters for ``config`` (classes must be set)."""
    if not config.classes:
        raise ConfigError("classes: must be set before building a model")
    return init_params(
        config.feature_length,
        [(l.width, l.mask_spec) for l in config.layers],
        config.order,
        config.extra_frames,
        config.dense_widths,
        len(config.classes),
        rng,
        dtype=np.dtype(dtype or config.dtype),
        labels=config.classes,
    )
