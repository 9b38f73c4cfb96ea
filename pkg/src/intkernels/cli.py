"""Command-line entry point: ``intkernels <command> [--config PATH] [--seed N ...] [--out DIR]``."""

from __future__ import annotations

import argparse
import datetime
import json
import logging
import re
import sys
from pathlib import Path

from . import __version__
from .config import load_config
from .data import SyntheticSpec, generate, save_dataset
from .evaluate import aggregate_reports, metrics_csv, metrics_json
from .experiment import (checkpoint_dict, evaluate_variant, export_kernels, load_checkpoint, prepare_data,
                         save_checkpoint, train_variant)
from .plotting import profile_svg

log = logging.getLogger("intkernels")

COMMANDS = ("synth-gen", "train", "eval", "export-kernels", "plot", "hierarchy")


class CliError(RuntimeError):
    pass


def slug(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9]+", "_", name).strip("_") or "model"


class SidecarLog:
    """Timestamped progress lines kept apart from the deterministic outputs."""

    def __init__(self, out: Path):
        self.path = out / "run.log"

    def __call__(self, **fields):
        stamp = datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")
        with self.path.open("a") as f:
            f.write(json.dumps({"time": stamp, **fields}, sort_keys=True) + "\n")


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _seeds(args, cfg) -> list[int]:
    return list(args.seed) if args.seed else cfg.seeds


def _write_metrics(out: Path, stem: str, reports, cfg_hash: str, fmt: str) -> Path:
    path = out / f"{stem}.{fmt}"
    path.write_text(metrics_csv(reports, cfg_hash) if fmt == "csv" else metrics_json(reports, cfg_hash))
    return path


def _train_and_save(cfg, data, variant, seed, out: Path, prefix: str, sidecar):
    def progress(entry):
        sidecar(event="epoch", model=variant.name, seed=seed, **entry)

    log.info("training %s seed %d", variant.name, seed)
    model, epochs, opt = train_variant(cfg, data, variant, seed, progress)
    path = out / f"{prefix}{slug(variant.name)}_seed{seed}.ckpt.json"
    save_checkpoint(path, checkpoint_dict(cfg, model, seed, opt, epochs, data.standardizer,
                                          data.raw.predictor_names))
    sidecar(event="checkpoint", model=variant.name, seed=seed, path=path.name)
    return model, path


# ----------------------------------------------------------------------------
# commands

def cmd_synth_gen(args) -> list[Path]:
    cfg = _require_config(args)
    if "synthetic" not in cfg.raw["data"]:
        raise CliError("synth-gen needs a config with data.synthetic")
    spec = SyntheticSpec.from_json(cfg.raw["data"]["synthetic"])
    gen = generate(spec)
    planted = [{"family": k.family, "dims": list(k.dims), "params": k.params} for k in gen.planted]
    manifest = save_dataset(_out_dir(args), gen.dataset,
                            {"config_hash": cfg.hash, "synthetic_spec": spec.to_json(), "planted_kernels": planted,
                             "planted_weights": [w.squeeze().tolist() for w in gen.planted_weights]})
    return [manifest]


def cmd_train(args) -> list[Path]:
    cfg = _require_config(args)
    out = _out_dir(args)
    data = prepare_data(cfg)
    sidecar = SidecarLog(out)
    written = []
    for variant in cfg.variants:
        for seed in _seeds(args, cfg):
            written.append(_train_and_save(cfg, data, variant, seed, out, "", sidecar)[1])
    return written


def cmd_eval(args) -> list[Path]:
    cfg = _require_config(args)
    if not args.checkpoint:
        raise CliError("eval needs at least one --checkpoint")
    data = prepare_data(cfg)
    reports = []
    for path in args.checkpoint:
        model, ckpt = load_checkpoint(path)
        if ckpt["config_hash"] != cfg.hash:
            raise CliError(f"{path} was trained with config {ckpt['config_hash']}, not {cfg.hash}")
        reports.append(evaluate_variant(cfg, data, model, ckpt["seed"])[0])
    out = _out_dir(args)
    return [_write_metrics(out, "metrics", reports, cfg.hash, args.format),
            _write_metrics(out, "metrics_summary", aggregate_reports(reports), cfg.hash, args.format)]


def cmd_export_kernels(args) -> list[Path]:
    if not args.checkpoint:
        raise CliError("export-kernels needs at least one --checkpoint")
    out = _out_dir(args)
    written = []
    for path in args.checkpoint:
        model, ckpt = load_checkpoint(path)
        if model.variant.level == "baseline":
            raise CliError(f"{path} is a baseline model and has no kernels")
        extra = {"config_hash": ckpt["config_hash"], "seed": ckpt["seed"]}
        ex = export_kernels(model, ckpt.get("predictor_names"), extra)
        target = out / (Path(path).name.replace(".ckpt.json", "") + ".kernels.json")
        target.write_text(json.dumps(ex, indent=1, sort_keys=True) + "\n")
        written.append(target)
    return written


def cmd_plot(args) -> list[Path]:
    if not args.kernels:
        raise CliError("plot needs at least one --kernels export")
    exports = [json.loads(Path(p).read_text()) for p in args.kernels]
    out = _out_dir(args)
    written = []
    for entry in exports[0]["kernels"]:
        svg = profile_svg(exports, entry["predictor_id"], entry["feature_id"])
        target = out / f"{slug(exports[0]['model'])}_{slug(entry['predictor'])}_{entry['feature_id']}.svg"
        target.write_text(svg)
        written.append(target)
    return written


def cmd_hierarchy(args) -> list[Path]:
    cfg = _require_config(args)
    out = _out_dir(args)
    data = prepare_data(cfg)
    sidecar = SidecarLog(out)
    reports, written = [], []
    for idx, variant in enumerate(cfg.variants):
        for seed in _seeds(args, cfg):
            model, ckpt_path = _train_and_save(cfg, data, variant, seed, out, f"{idx:02d}_", sidecar)
            reports.append(evaluate_variant(cfg, data, model, seed)[0])
            written.append(ckpt_path)
            if variant.level != "baseline":
                ex = export_kernels(model, data.raw.predictor_names, {"config_hash": cfg.hash, "seed": seed})
                kpath = ckpt_path.with_name(ckpt_path.name.replace(".ckpt.json", ".kernels.json"))
                kpath.write_text(json.dumps(ex, indent=1, sort_keys=True) + "\n")
                written.append(kpath)
    written.append(_write_metrics(out, "metrics", reports, cfg.hash, args.format))
    written.append(_write_metrics(out, "metrics_summary", aggregate_reports(reports), cfg.hash, args.format))
    return written


HANDLERS = {"synth-gen": cmd_synth_gen, "train": cmd_train, "eval": cmd_eval,
            "export-kernels": cmd_export_kernels, "plot": cmd_plot, "hierarchy": cmd_hierarchy}


def _require_config(args):
    if not args.config:
        raise CliError(f"{args.command} needs --config")
    return load_config(args.config)


# ----------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="intkernels", description="Learn normalized integration kernels.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="experiment config (JSON)")
    p.add_argument("--seed", type=int, action="append", help="training seed; repeat for several (default 42,72,102)")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--format", choices=("csv", "json"), default="csv", help="metrics format")
    p.add_argument("--checkpoint", action="append", help="checkpoint file (eval, export-kernels)")
    p.add_argument("--kernels", action="append", help="kernel export, one per seed (plot)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def error_code(exc: BaseException) -> str:
    mod = type(exc).__module__
    if mod.startswith("intkernels."):
        mod = mod.split(".", 1)[1]
    elif isinstance(exc, OSError):
        mod = "io"
    else:
        mod = "cli"
    return f"{mod}.{type(exc).__name__}"


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(message)s")
    try:
        for path in HANDLERS[args.command](args):
            print(path)
    except (ValueError, RuntimeError, OSError, KeyError) as exc:
        msg = str(exc.args[0]) if isinstance(exc, KeyError) and exc.args else str(exc)
        json.dump({"error": {"code": error_code(exc), "message": msg}}, sys.stderr)
        sys.stderr.write("\n")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
