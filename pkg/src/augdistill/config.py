"""Experiment configuration: a strict, versioned JSON document.

Unknown keys are rejected with their full key path; every key has a
documented default, so the empty document ``{}`` is a valid configuration.
The resolved form round-trips losslessly through serialization, and its
canonical JSON is hashed to tie checkpoints to the configuration that
produced them.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

from .augment import CLASSIFICATION, MODES
from .datasets import DATASET_NAMES
from .exceptions import ConfigError
from .models import FAMILIES, ModelSpec
from .policies import N_POLICIES
from .trainer import TrainConfig

SCHEMA_VERSION = 1


class _Key:
    """One leaf key: default value, accepted types, and a range check."""

    def __init__(self, default, kinds, check=None, nullable=False):
        self.default = default
        self.kinds = kinds if isinstance(kinds, tuple) else (kinds,)
        self.check = check
        self.nullable = nullable

    def resolve(self, value, path: str):
        if value is None:
            if self.nullable:
                return None
            raise ConfigError(f"{path}: may not be null")
        if bool in self.kinds:
            if not isinstance(value, bool):
                raise ConfigError(f"{path}: expected a boolean, got {value!r}")
            return value
        if isinstance(value, bool):
            raise ConfigError(f"{path}: expected a number, got a boolean")
        if float in self.kinds and isinstance(value, int):
            value = float(value)
        if not isinstance(value, self.kinds):
            names = "/".join(k.__name__ for k in self.kinds)
            raise ConfigError(f"{path}: expected {names}, got {type(value).__name__}")
        if self.check is not None:
            msg = self.check(value)
            if msg:
                raise ConfigError(f"{path}: {msg}")
        return value


def _in_range(lo=None, hi=None, lo_open=False):
    def check(v):
        if lo is not None and (v <= lo if lo_open else v < lo):
            op = ">" if lo_open else ">="
            return f"must be {op} {lo}, got {v}"
        if hi is not None and v > hi:
            return f"must be <= {hi}, got {v}"
        return None

    return check


def _one_of(options):
    def check(v):
        if v not in options:
            return f"must be one of {sorted(options)}, got {v!r}"
        return None

    return check


def _epoch_list(v):
    if not isinstance(v, list) or not all(isinstance(e, int) for e in v):
        return "must be a list of integers"
    if any(e < 1 for e in v):
        return "entries must be >= 1"
    return None


_SCHEMA: dict = {
    "schema_version": _Key(SCHEMA_VERSION, int, _one_of({SCHEMA_VERSION})),
    "seed": _Key(0, int, _in_range(0)),
    "mode": _Key(CLASSIFICATION, str, _one_of(set(MODES))),
    "dataset": {
        "name": _Key("toy-synthetic", str, _one_of(set(DATASET_NAMES))),
        "fraction": _Key(1.0, float, _in_range(0.0, 1.0, lo_open=True)),
        "train_size": _Key(4000, int, _in_range(10)),
        "test_size": _Key(1000, int, _in_range(10)),
    },
    "teacher": {
        "family": _Key("mid-cnn", str, _one_of(set(FAMILIES))),
        "width": _Key(1.0, float, _in_range(0.0, lo_open=True)),
        "depth": _Key(3, int, _in_range(1)),
        "pretrain_epochs": _Key(30, int, _in_range(0)),
        "pretrain_lr": _Key(0.05, float, _in_range(0.0, lo_open=True)),
        "min_accuracy": _Key(0.85, float, _in_range(0.0, 1.0)),
    },
    "student": {
        "family": _Key("tiny-cnn", str, _one_of(set(FAMILIES))),
        "width": _Key(1.0, float, _in_range(0.0, lo_open=True)),
        "depth": _Key(2, int, _in_range(1)),
    },
    "train": {
        "ce_weight": _Key(1.0, float, _in_range(0.0)),
        "kl_weight": _Key(1.0, float, _in_range(0.0)),
        "alpha": _Key(1.0, float, _in_range(0.0)),
        "beta": _Key(1.0, float, _in_range(0.0)),
        "kd_temperature": _Key(4.0, float, _in_range(0.0, lo_open=True)),
        "sample_temperature": _Key(0.05, float, _in_range(0.0, lo_open=True)),
        "n_select": _Key(4, int, _in_range(1, N_POLICIES)),
        "epochs": _Key(16, int, _in_range(1)),
        "batch_size": _Key(128, int, _in_range(1)),
        "search_epochs": _Key(None, list, _epoch_list, nullable=True),
        "fit_iters": _Key(2000, int, _in_range(0)),
        "fit_lr": _Key(5e-3, float, _in_range(0.0, lo_open=True)),
        "fit_batch_size": _Key(64, int, _in_range(1)),
        "fit_mse_bound": _Key(5e-3, float, _in_range(0.0, lo_open=True)),
        "search_iters": _Key(40, int, _in_range(0)),
        "student_iters": _Key(None, int, _in_range(1), nullable=True),
        "student_lr": _Key(0.05, float, _in_range(0.0, lo_open=True)),
        "search_lr": _Key(1e-2, float, _in_range(0.0, lo_open=True)),
        "momentum": _Key(0.9, float, _in_range(0.0, 1.0)),
        "weight_decay": _Key(5e-4, float, _in_range(0.0)),
        "diversity_noise": _Key(True, bool),
        "param_init_std": _Key(0.1, float, _in_range(0.0)),
        "augment_batch": _Key(True, bool),
        "prior_dim": _Key(16, int, _in_range(2)),
    },
}


def _resolve(schema: dict, doc: dict, path: str = "") -> dict:
    if not isinstance(doc, dict):
        raise ConfigError(f"{path or '<root>'}: expected an object")
    for key in doc:
        if key not in schema:
            where = f"{path}{key}"
            raise ConfigError(f"unknown configuration key {where!r}")
    out = {}
    for key, spec in schema.items():
        where = f"{path}{key}"
        if isinstance(spec, dict):
            out[key] = _resolve(spec, doc.get(key, {}), path=f"{where}.")
        else:
            value = doc.get(key, spec.default)
            out[key] = spec.resolve(value, where)
    return out


class ExperimentConfig:
    """A fully-resolved configuration document."""

    def __init__(self, document: dict | None = None):
        self.data = _resolve(_SCHEMA, document or {})
        # epochs must bound the search schedule; cross-key, so checked here
        epochs = self.data["train"]["epochs"]
        sched = self.data["train"]["search_epochs"]
        if sched is not None:
            for e in sched:
                if e > epochs:
                    raise ConfigError(
                        f"train.search_epochs: entry {e} exceeds train.epochs={epochs}"
                    )

    def __eq__(self, other) -> bool:
        return isinstance(other, ExperimentConfig) and self.data == other.data

    def __getitem__(self, key: str):
        return self.data[key]

    def to_json(self) -> str:
        return json.dumps(self.data, indent=2, sort_keys=True) + "\n"

    def config_hash(self) -> str:
        canonical = json.dumps(self.data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()

    def with_overrides(self, **top_level) -> "ExperimentConfig":
        doc = json.loads(json.dumps(self.data))
        for key, value in top_level.items():
            if isinstance(value, dict):
                doc.setdefault(key, {}).update(value)
            else:
                doc[key] = value
        return ExperimentConfig(doc)

    # -- runtime object builders -------------------------------------------

    def train_config(self) -> TrainConfig:
        t = self.data["train"]
        return TrainConfig(
            ce_weight=t["ce_weight"],
            kl_weight=t["kl_weight"],
            alpha=t["alpha"],
            beta=t["beta"],
            kd_temperature=t["kd_temperature"],
            sample_temperature=t["sample_temperature"],
            n_select=t["n_select"],
            epochs=t["epochs"],
            batch_size=t["batch_size"],
            search_epochs=tuple(t["search_epochs"]) if t["search_epochs"] is not None else None,
            fit_iters=t["fit_iters"],
            fit_lr=t["fit_lr"],
            fit_batch_size=t["fit_batch_size"],
            fit_mse_bound=t["fit_mse_bound"],
            search_iters=t["search_iters"],
            student_iters=t["student_iters"],
            student_lr=t["student_lr"],
            search_lr=t["search_lr"],
            momentum=t["momentum"],
            weight_decay=t["weight_decay"],
            seed=self.data["seed"],
            mode=self.data["mode"],
            diversity_noise=t["diversity_noise"],
            param_init_std=t["param_init_std"],
            augment_batch=t["augment_batch"],
            prior_dim=t["prior_dim"],
        )

    def _model_spec(self, section: str, n_classes: int, in_shape) -> ModelSpec:
        s = self.data[section]
        return ModelSpec(
            family=s["family"],
            width=s["width"],
            depth=s["depth"],
            n_classes=n_classes,
            in_shape=tuple(in_shape),
        )

    def teacher_spec(self, n_classes: int, in_shape=(3, 32, 32)) -> ModelSpec:
        return self._model_spec("teacher", n_classes, in_shape)

    def student_spec(self, n_classes: int, in_shape=(3, 32, 32)) -> ModelSpec:
        return self._model_spec("student", n_classes, in_shape)

    def dataset_kwargs(self) -> dict:
        d = self.data["dataset"]
        return {
            "name": d["name"],
            "fraction": d["fraction"],
            "seed": self.data["seed"],
            "train_size": d["train_size"],
            "test_size": d["test_size"],
        }


def parse_config(document: dict) -> ExperimentConfig:
    return ExperimentConfig(document)


def load_config(path: str | Path) -> ExperimentConfig:
    """Load and validate a configuration file (JSON object)."""
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"configuration file not found: {p}")
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{p}: not valid JSON ({e})") from e
    if not isinstance(doc, dict):
        raise ConfigError(f"{p}: top level must be a JSON object")
    return ExperimentConfig(doc)
