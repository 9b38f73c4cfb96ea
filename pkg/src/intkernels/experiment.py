"""End-to-end pipeline: data preparation, training runs, checkpoints, evaluation, kernel export."""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .data import (Dataset, SyntheticSpec, Split, Standardizer, chronological_split, fit_standardizer, generate,
                   load_dataset)
from .evaluate import MetricReport, metric_report
from .kernels import KernelError
from .models import HierarchyModel, ModelVariant, SampleSet, build_model
from .nn import Adam, TrainController, train

CHECKPOINT_FORMAT = "intkernels-checkpoint"
CHECKPOINT_VERSION = 1


class DegenerateKernelError(KernelError):
    pass


@dataclass
class PreparedData:
    raw: Dataset
    standardized: Dataset
    split: Split
    standardizer: Standardizer
    planted: list | None = None


def prepare_data(cfg: ExperimentConfig) -> PreparedData:
    """Load or synthesize the dataset, split it chronologically and standardize on train only."""
    planted = None
    if "synthetic" in cfg.raw["data"]:
        gen = generate(SyntheticSpec.from_json(cfg.raw["data"]["synthetic"]))
        ds = gen.dataset
        planted = [{"family": k.family, "dims": list(k.dims), "params": k.params} for k in gen.planted]
    else:
        ds, manifest = load_dataset(cfg.data_path())
        planted = manifest.get("planted_kernels")
    s = cfg.raw["split"]
    split = chronological_split(ds.n_times, s.get("fractions", (15, 3, 3)), s["window"], ds.steps_per_year,
                                s.get("boundaries"))
    std = fit_standardizer(ds, split, cfg.raw["halo"], cfg.raw["log1p_target"])
    return PreparedData(ds, std.apply(ds), split, std, planted)


def sample_sets(cfg: ExperimentConfig, data: PreparedData, variant: ModelVariant) -> dict[str, SampleSet]:
    return {part: SampleSet.from_split(data.standardized, data.split, part, variant.domain, cfg.raw["halo"],
                                       cfg.raw["mask_summary"])
            for part in ("train", "validation", "test")}


def make_model(cfg: ExperimentConfig, data: PreparedData, variant: ModelVariant, seed: int) -> HierarchyModel:
    t = cfg.train
    return build_model(variant, data.standardized, seed=seed, mask_summary=cfg.raw["mask_summary"],
                       hidden=tuple(t["hidden"]), dropout=t["dropout"], freeze_kernels=t["freeze_kernels"],
                       kernel_init_scale=t["kernel_init_scale"])


def round_to_f32(model: HierarchyModel) -> None:
    """Snap every parameter to float32 so in-memory and checkpointed models agree."""
    for v in model.all_params().values():
        v[...] = v.astype(np.float32)


def check_kernels(model: HierarchyModel) -> None:
    for row in model.kernels:
        for k in row:
            if k.weights().degenerate:
                raise DegenerateKernelError(
                    f"kernel for predictor {k.spec.predictor_id} has a vanishing integral")


def train_variant(cfg: ExperimentConfig, data: PreparedData, variant: ModelVariant, seed: int, callback=None):
    """Train one variant with one seed; returns model, per-epoch log and optimizer."""
    t = cfg.train
    sets = sample_sets(cfg, data, variant)
    model = make_model(cfg, data, variant, seed)
    controller = TrainController(t["lr_patience"], t["lr_factor"], t["min_lr"], t["stop_patience"], t["max_epochs"])
    optimizer = Adam(lr=t["lr"])
    model, log = train(model, sets["train"], sets["validation"], controller, seed, t["batch_size"], t["lr"],
                       {"kernel": t["kernel_lr_scale"]}, optimizer, callback)
    round_to_f32(model)
    check_kernels(model)
    return model, log, optimizer


def predict_set(model: HierarchyModel, samples: SampleSet, chunk: int = 4096):
    preds, truth = [], []
    for i in range(0, len(samples), chunk):
        b, y = samples.take(np.arange(i, min(i + chunk, len(samples))))
        preds.append(model.predict(b))
        truth.append(y)
    return np.concatenate(preds), np.concatenate(truth)


def evaluate_variant(cfg: ExperimentConfig, data: PreparedData, model: HierarchyModel, seed=None,
                     part: str = "test") -> tuple[MetricReport, np.ndarray, np.ndarray]:
    sets = sample_sets(cfg, data, model.variant)
    pred, truth = predict_set(model, sets[part])
    e = cfg.raw["eval"]
    return metric_report(model.variant.name, pred, truth, e["n_bootstrap"], e["bootstrap_seed"], seed), pred, truth


# ----------------------------------------------------------------------------
# checkpoints

def _encode(a: np.ndarray) -> dict:
    a = np.asarray(a, dtype="<f4")
    return {"shape": list(a.shape), "dtype": "f32", "data": base64.b64encode(a.tobytes()).decode("ascii")}


def _decode(obj: dict) -> np.ndarray:
    if obj.get("dtype") != "f32":
        raise ValueError(f"unsupported checkpoint dtype {obj.get('dtype')}")
    raw = base64.b64decode(obj["data"])
    return np.frombuffer(raw, dtype="<f4").reshape(obj["shape"]).astype(np.float64)


def checkpoint_dict(cfg: ExperimentConfig, model: HierarchyModel, seed: int, optimizer: Adam | None,
                    log: list | None, standardizer: Standardizer | None, predictor_names=None) -> dict:
    t = cfg.train
    out = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config_hash": cfg.hash,
        "seed": seed,
        "variant": model.variant.to_json(),
        "grid": model.grid.to_json(),
        "n_predictors": model.n_predictors,
        "predictor_names": list(predictor_names or []),
        "n_locals": model.n_locals,
        "n_levels": model.n_levels,
        "mask_summary": model.mask_summary,
        "hidden": list(t["hidden"]),
        "dropout": t["dropout"],
        "input_layout": {
            "width": model.input_width,
            "order": ("predictor,time,pressure,x,y" if model.variant.level == "baseline"
                      else "predictor,kernel") + ",locals,mask_summary",
        },
        "params": {k: _encode(v) for k, v in sorted(model.all_params().items())},
        "log": log or [],
    }
    if optimizer is not None:
        out["optimizer"] = {"lr": optimizer.lr, "step": optimizer.step_count, "beta1": optimizer.beta1,
                            "beta2": optimizer.beta2, "eps": optimizer.eps,
                            "m": {k: _encode(v) for k, v in sorted(optimizer.m.items())},
                            "v": {k: _encode(v) for k, v in sorted(optimizer.v.items())}}
    if standardizer is not None:
        out["standardizer"] = standardizer.to_json()
    return out


def save_checkpoint(path, ckpt: dict) -> None:
    Path(path).write_text(json.dumps(ckpt, sort_keys=True, indent=1) + "\n")


def load_checkpoint(path) -> tuple[HierarchyModel, dict]:
    ckpt = json.loads(Path(path).read_text())
    if ckpt.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a checkpoint")
    if ckpt.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {ckpt.get('version')}")
    from .grid import Grid

    variant = ModelVariant.from_json(ckpt["variant"])
    grid = Grid.from_json(ckpt["grid"])
    model = HierarchyModel(variant, grid, ckpt["n_predictors"], ckpt["n_locals"], ckpt["seed"], ckpt["mask_summary"],
                           ckpt["n_levels"], tuple(ckpt["hidden"]), ckpt["dropout"])
    params = model.all_params()
    for k, obj in ckpt["params"].items():
        if k not in params:
            raise ValueError(f"{path}: unknown parameter {k}")
        params[k][...] = _decode(obj)
    return model, ckpt


# ----------------------------------------------------------------------------
# kernel export

def export_kernels(model: HierarchyModel, predictor_names=None, extra: dict | None = None) -> dict:
    """Normalized kernel weights with physical coordinates for every (predictor, kernel)."""
    names = predictor_names or [f"predictor_{i}" for i in range(model.n_predictors)]
    axes = {a.name: a.values.tolist() for a in model.grid.axes if a.count > 1}
    kernels = []
    for i, row in enumerate(model.kernels):
        for ell, k in enumerate(row):
            kw = k.weights()
            entry = {
                "predictor": names[i], "predictor_id": i, "feature_id": ell, "family": k.spec.family,
                "dims": list(k.spec.dims), "params": k.constrained(),
                "weights": np.squeeze(kw.normalized).tolist(), "degenerate": bool(kw.degenerate),
            }
            comps = k.mixture_components()
            if comps is not None:
                entry["components"] = [np.squeeze(c).tolist() for c in comps]
            kernels.append(entry)
    return {"format": "intkernels-kernels", "version": 1, "model": model.variant.name, "axes": axes,
            "kernels": kernels, **(extra or {})}
