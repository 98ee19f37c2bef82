"""Experiment configuration: file format, defaults, and object builders.

Config files are flat key-value sections in a TOML subset (scalars,
strings, booleans, and one-level lists), with JSON accepted as an
alternative. Parsing and serialization round-trip exactly. The builder
functions turn a parsed configuration into datasets, a classifier, and a
training configuration.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from ._rng import named_rng
from .attacks import AttackConfig
from .data import (ArrayDataset, AugmentationPolicy, load_cifar_binary,
                   synthetic_image_dataset, two_gaussians_dataset)
from .losses import ObjectiveConfig
from .models import Classifier, cnn_spec, linear_spec, mlp_spec
from .training import TrainConfig
from .validation import ConfigurationError, require

DATASET_SOURCES = ("two-gaussians", "synthetic-image", "cifar10-bin")

DEFAULTS: dict = {
    "seed": 0,
    "out_dir": "runs/default",
    "dataset": {
        "source": "two-gaussians",
        "path": "",
        "eval_path": "",
        "classes": [0, 1],
        "per_class": 1000,
        "eval_per_class": 250,
        "augment": False,
        "crop_padding": 4,
        "flip_probability": 0.5,
    },
    "model": {
        "architecture": "mlp",
        "hidden": [64, 64],
        "channels": [16, 32, 32, 64],
        "dtype": "float64",
    },
    "train": {
        "epochs": 10,
        "batch_size": 128,
        "momentum": 0.9,
        "weight_decay": 0.0005,
        "learning_rate": 0.01,
        "decay_epochs": [8, 9],
        "decay_factor": 0.1,
        "ema": False,
        "ema_decay": 0.999,
    },
    "objective": {
        "variant": "raat",
        "lambda": 1.0,
        "eta": 0.1,
        "gamma": 0.75,
        "misclassified_mode": "gated",
        "supervised_branch": "raw-input",
        "boundary_reduction": True,
    },
    "attack": {
        "norm": "linf",
        "eps": 8 / 255,
        "alpha": 2 / 255,
        "steps": 10,
        "random_start": True,
    },
    "eval": {
        "attacks": ["pgd10"],
        "mu_grid": [0.0, 0.25, 0.5, 0.75, 1.0],
        "alignment_probes": 0,
    },
    "ablate": {
        "eta_values": [0.05, 0.1, 0.2],
        "lambda_values": [0.5, 1.0, 2.0],
    },
}


# ----------------------------------------------------------- flat TOML subset

def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_format_value(item) for item in v) + "]"
    raise ConfigurationError(f"cannot serialize config value {v!r}")


def _parse_scalar(token: str):
    token = token.strip()
    if token == "true":
        return True
    if token == "false":
        return False
    if token.startswith('"'):
        return json.loads(token)
    try:
        return int(token)
    except ValueError:
        pass
    try:
        return float(token)
    except ValueError as exc:
        raise ConfigurationError(f"cannot parse config value {token!r}") from exc


def _parse_value(token: str):
    token = token.strip()
    if token.startswith("["):
        if not token.endswith("]"):
            raise ConfigurationError(f"unterminated list: {token!r}")
        inner = token[1:-1].strip()
        if not inner:
            return []
        return [_parse_scalar(part) for part in inner.split(",")]
    return _parse_scalar(token)


def parse_config_text(text: str) -> dict:
    """Parse the flat TOML subset into a nested mapping."""
    out: dict = {}
    section: dict | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigurationError(f"line {lineno}: malformed section header {line!r}")
            name = line[1:-1].strip()
            section = out.setdefault(name, {})
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, value = line.partition("=")
        target = out if section is None else section
        target[key.strip()] = _parse_value(value)
    return out


def serialize_config(mapping: dict) -> str:
    """Inverse of :func:`parse_config_text` for mappings it produced."""
    top = {k: v for k, v in mapping.items() if not isinstance(v, dict)}
    sections = {k: v for k, v in mapping.items() if isinstance(v, dict)}
    lines = [f"{k} = {_format_value(v)}" for k, v in top.items()]
    for name, body in sections.items():
        lines.append("")
        lines.append(f"[{name}]")
        lines.extend(f"{k} = {_format_value(v)}" for k, v in body.items())
    return "\n".join(lines) + "\n"


def _merge(defaults: dict, override: dict) -> dict:
    out = {}
    for key, value in defaults.items():
        if isinstance(value, dict):
            out[key] = _merge(value, override.get(key, {}))
        elif key in override:
            out[key] = override[key]
        else:
            out[key] = value
    for key in override:
        if key not in defaults:
            raise ConfigurationError(f"unknown config key {key!r}")
    return out


@dataclass
class ExperimentConfig:
    """Validated experiment settings plus the raw mapping for round-trips."""

    mapping: dict = field(default_factory=lambda: _merge(DEFAULTS, {}))

    def __post_init__(self):
        ds = self.mapping["dataset"]
        require(ds["source"] in DATASET_SOURCES,
                f"dataset source must be one of {DATASET_SOURCES}, got {ds['source']!r}")
        arch = self.mapping["model"]["architecture"]
        require(arch in ("mlp", "cnn", "linear"), f"unknown architecture {arch!r}")
        # constructing the typed configs validates their fields
        self.objective_config()
        self.attack_config()

    @staticmethod
    def load(path: str | Path) -> "ExperimentConfig":
        path = Path(path)
        text = path.read_text(encoding="utf-8")
        if path.suffix == ".json":
            raw = json.loads(text)
        else:
            raw = parse_config_text(text)
        return ExperimentConfig(_merge(DEFAULTS, raw))

    def dump(self, path: str | Path) -> None:
        path = Path(path)
        if path.suffix == ".json":
            path.write_text(json.dumps(self.mapping, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        else:
            path.write_text(serialize_config(self.mapping), encoding="utf-8")

    # ------------------------------------------------------------------ pieces

    @property
    def seed(self) -> int:
        return int(self.mapping["seed"])

    @property
    def out_dir(self) -> Path:
        return Path(self.mapping["out_dir"])

    def augmentation_policy(self) -> AugmentationPolicy:
        ds = self.mapping["dataset"]
        return AugmentationPolicy(crop_padding=int(ds["crop_padding"]),
                                  flip_probability=float(ds["flip_probability"]),
                                  enabled=bool(ds["augment"]))

    def objective_config(self) -> ObjectiveConfig:
        o = self.mapping["objective"]
        return ObjectiveConfig(
            variant=o["variant"], lam=float(o["lambda"]), eta=float(o["eta"]),
            gamma=float(o["gamma"]), misclassified_mode=o["misclassified_mode"],
            supervised_branch=o["supervised_branch"],
            boundary_reduction=bool(o["boundary_reduction"]))

    def attack_config(self) -> AttackConfig:
        a = self.mapping["attack"]
        return AttackConfig(norm=a["norm"], eps=float(a["eps"]), alpha=float(a["alpha"]),
                            steps=int(a["steps"]), random_start=bool(a["random_start"]))

    def train_config(self, **overrides) -> TrainConfig:
        t = self.mapping["train"]
        params = dict(
            epochs=int(t["epochs"]), batch_size=int(t["batch_size"]),
            momentum=float(t["momentum"]), weight_decay=float(t["weight_decay"]),
            learning_rate=float(t["learning_rate"]),
            decay_epochs=tuple(int(e) for e in t["decay_epochs"]),
            decay_factor=float(t["decay_factor"]), seed=self.seed,
            ema_enabled=bool(t["ema"]), ema_decay=float(t["ema_decay"]),
            objective=self.objective_config(), attack=self.attack_config(),
            augmentation=self.augmentation_policy(),
        )
        params.update(overrides)
        return TrainConfig(**params)

    def build_classifier(self) -> Classifier:
        m = self.mapping["model"]
        ds = self.mapping["dataset"]
        if ds["source"] == "two-gaussians":
            n_features, n_classes = 2, 2
        elif ds["source"] == "cifar10-bin":
            n_features, n_classes = 3 * 32 * 32, len(ds["classes"])
        else:
            n_features, n_classes = 3 * 32 * 32, 2
        if m["architecture"] == "cnn":
            spec = cnn_spec(n_classes, channels=tuple(int(c) for c in m["channels"]))
        elif m["architecture"] == "linear":
            spec = linear_spec(n_features, n_classes)
        else:
            spec = mlp_spec(n_features, n_classes, hidden=tuple(int(h) for h in m["hidden"]))
        return Classifier(spec, dtype=m["dtype"], rng=named_rng(self.seed, "init"))

    def build_datasets(self) -> tuple[ArrayDataset, ArrayDataset]:
        """Train and eval datasets per the dataset section."""
        ds = self.mapping["dataset"]
        per_class = int(ds["per_class"])
        eval_per_class = int(ds["eval_per_class"])
        if ds["source"] == "two-gaussians":
            train = two_gaussians_dataset(per_class, named_rng(self.seed, "dataset", "train"))
            evalset = two_gaussians_dataset(eval_per_class, named_rng(self.seed, "dataset", "eval"))
            return train, evalset
        if ds["source"] == "synthetic-image":
            train = synthetic_image_dataset(per_class, named_rng(self.seed, "dataset", "train"))
            evalset = synthetic_image_dataset(eval_per_class, named_rng(self.seed, "dataset", "eval"))
            return train, evalset
        require(bool(ds["path"]), "cifar10-bin source needs dataset.path")
        classes = [int(c) for c in ds["classes"]]
        train_pool = ArrayDataset.from_examples(load_cifar_binary(ds["path"]), 10)
        train = train_pool.subset_classes(classes, per_class)
        if ds["eval_path"]:
            eval_pool = ArrayDataset.from_examples(load_cifar_binary(ds["eval_path"]), 10)
            evalset = eval_pool.subset_classes(classes, eval_per_class)
        else:
            # no held-out file: evaluate on the slice after the training cap
            evalset = train_pool.subset_classes(classes, eval_per_class, skip=per_class)
        return train, evalset
