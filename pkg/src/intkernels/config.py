"""Experiment configuration: JSON loading, schema validation, defaults and hashing."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema

from .models import ModelVariant

DEFAULT_SEEDS = (42, 72, 102)

DEFAULTS = {
    "split": {"fractions": [15, 3, 3], "window": 7},
    "halo": 1,
    "mask_summary": "fraction",
    "log1p_target": True,
    "train": {
        "batch_size": 500,
        "lr": 5e-4,
        "kernel_lr_scale": 10.0,
        "max_epochs": 20,
        "lr_patience": 2,
        "lr_factor": 0.5,
        "min_lr": 1e-6,
        "stop_patience": 4,
        "dropout": 0.1,
        "hidden": [256, 128, 64, 32],
        "freeze_kernels": False,
        "kernel_init_scale": 0.01,
    },
    "seeds": list(DEFAULT_SEEDS),
    "eval": {"n_bootstrap": 1000, "bootstrap_seed": 0},
}


class ConfigError(ValueError):
    pass


def schema() -> dict:
    return json.loads(resources.files("intkernels").joinpath("config.schema.json").read_text())


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def config_hash(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()[:16]


def _merge(defaults: dict, given: dict) -> dict:
    out = copy.deepcopy(defaults)
    for k, v in given.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class ExperimentConfig:
    raw: dict
    base_dir: Path = field(default_factory=Path.cwd)

    @property
    def hash(self) -> str:
        return config_hash(self.raw)

    @property
    def train(self) -> dict:
        return self.raw["train"]

    @property
    def seeds(self) -> list[int]:
        return list(self.raw["seeds"])

    @property
    def variant(self) -> ModelVariant:
        if "variant" in self.raw:
            return ModelVariant.from_json(self.raw["variant"])
        if "variants" in self.raw and len(self.raw["variants"]) == 1:
            return ModelVariant.from_json(self.raw["variants"][0])
        raise ConfigError("config defines no single 'variant'")

    @property
    def variants(self) -> list[ModelVariant]:
        if "variants" in self.raw:
            return [ModelVariant.from_json(v) for v in self.raw["variants"]]
        return [self.variant]

    def data_path(self) -> Path | None:
        p = self.raw["data"].get("path")
        return None if p is None else (self.base_dir / p)


def parse_config(obj: dict, base_dir=None) -> ExperimentConfig:
    """Validate against the published schema, fill defaults, and check variants."""
    try:
        jsonschema.validate(obj, schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"schema violation at {where}: {exc.message}") from None
    cfg = ExperimentConfig(_merge(DEFAULTS, obj), Path(base_dir) if base_dir else Path.cwd())
    for v in cfg.raw.get("variants", []) + ([cfg.raw["variant"]] if "variant" in cfg.raw else []):
        try:
            ModelVariant.from_json(v)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"invalid variant {v.get('name', v)}: {exc}") from None
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        obj = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    return parse_config(obj, path.parent)
