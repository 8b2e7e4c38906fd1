"""Command-line entry point: ``kernel-harmony <command> ...``.

Commands: phantom, train, harmonize, emphysema, analyze, info. On failure
the process exits nonzero and prints one JSON object to stderr.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .domains import DomainRegistry, PAPER_DOMAINS
from .errors import ConfigurationError, HarmonyError
from .losses import LossConfig
from .networks import ArchConfig
from .trainer import TrainConfig

log = logging.getLogger("kernel_harmony")

CACHE_ENV = "KERNEL_HARMONY_CACHE"
CONFIG_KEYS = {"domains", "arch", "train", "loss", "data"}


class CLIError(HarmonyError):
    def __init__(self, message, key=None, path=None):
        super().__init__(message)
        self.key = key
        self.path = path


def cache_dir() -> Path:
    env = os.environ.get(CACHE_ENV)
    return Path(env) if env else Path.home() / ".cache" / "kernel_harmony"


@dataclass
class RunConfig:
    registry: DomainRegistry = field(default_factory=lambda: DomainRegistry(PAPER_DOMAINS))
    arch: ArchConfig = field(default_factory=ArchConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    data: dict = field(default_factory=dict)

    def to_dict(self):
        return {"domains": self.registry.to_config(), "arch": self.arch.to_dict(), "train": self.train.to_dict(),
                "loss": self.loss.to_dict(), "data": dict(self.data)}


def resolve_config(raw: dict | None) -> RunConfig:
    """Fill a (possibly partial) JSON config with defaults and validate it."""
    raw = dict(raw or {})
    unknown = set(raw) - CONFIG_KEYS
    if unknown:
        raise ConfigurationError(f"unknown config keys {sorted(unknown)}", key=sorted(unknown)[0])
    for k in ("arch", "train", "loss", "data"):
        if not isinstance(raw.get(k, {}), dict):
            raise ConfigurationError(f"config section {k!r} must be an object", key=k)
    try:
        cfg = RunConfig(
            registry=DomainRegistry.from_config(raw["domains"]) if "domains" in raw else DomainRegistry(PAPER_DOMAINS),
            arch=ArchConfig.from_dict(raw.get("arch", {})),
            train=TrainConfig.from_dict(raw.get("train", {})),
            loss=LossConfig.from_dict(raw.get("loss", {})),
            data=raw.get("data", {}),
        )
    except TypeError as exc:
        raise ConfigurationError(f"bad config value: {exc}") from None
    return cfg


def load_config_file(path) -> dict:
    if path is None:
        return {}
    path = Path(path)
    if not path.exists():
        raise CLIError(f"config file {path} not found", key="--config", path=str(path))
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise CLIError(f"config file {path} is not valid JSON: {exc}", key="--config", path=str(path)) from None


def write_metadata(out_dir: Path, command: str, args: argparse.Namespace, config: dict | None = None):
    cfg_text = json.dumps(config or {}, sort_keys=True)
    record = {
        "command": command,
        "argv": sys.argv[1:],
        "args": {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items() if k != "func"},
        "config": config or {},
        "config_sha256": hashlib.sha256(cfg_text.encode()).hexdigest(),
        "seed": getattr(args, "seed", None),
        "versions": _versions(),
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / f"{command}_metadata.json").write_text(json.dumps(record, indent=2, sort_keys=True, default=str))


def _versions():
    import scipy
    import torch
    return {"kernel_harmony": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "torch": torch.__version__}


def _require(path, flag):
    if path is None:
        raise CLIError(f"{flag} is required", key=flag)
    if not Path(path).exists():
        raise CLIError(f"{flag} {path} does not exist", key=flag, path=str(path))
    return Path(path)


def cmd_phantom(args) -> int:
    from .phantom import DEFAULT_STYLES, PhantomConfig, StyleParams, build_phantom_dataset, write_phantom_dataset
    raw = load_config_file(args.config)
    allowed = {"subjects_per_domain", "slices_per_subject", "size", "fraction_range", "styles", "seed"}
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigurationError(f"unknown phantom config keys {sorted(unknown)}", key=sorted(unknown)[0])
    styles = dict(DEFAULT_STYLES)
    for d, p in raw.get("styles", {}).items():
        styles[d] = StyleParams(**p)
    seed = args.seed if args.seed is not None else raw.get("seed", 0)
    pcfg = PhantomConfig(styles=styles, seed=seed,
                         **{k: (tuple(v) if k == "fraction_range" else v) for k, v in raw.items()
                            if k in allowed - {"styles", "seed"}})
    out = Path(args.out_dir) if args.out_dir else cache_dir() / f"phantom_seed{seed}"
    ds = build_phantom_dataset(pcfg)
    paths = write_phantom_dataset(ds, out)
    write_metadata(out, "phantom", args, {**raw, "seed": seed})
    print(json.dumps({k: str(v) for k, v in paths.items()}, indent=2))
    return 0


def cmd_train(args) -> int:
    from .trainer import load_training_slices, plan_run, read_train_manifest, train
    raw = load_config_file(args.config)
    if args.seed is not None:
        raw.setdefault("train", {})["seed"] = args.seed
    cfg = resolve_config(raw)
    print(json.dumps(cfg.to_dict(), indent=2))
    manifest_path = args.manifest or cfg.data.get("manifest")
    if manifest_path is None:
        raise CLIError("no training manifest: pass --manifest or set data.manifest", key="--manifest")
    manifest_path = _require(manifest_path, "--manifest")
    rows = read_train_manifest(manifest_path)
    plan = plan_run(cfg.train, rows, cfg.registry)
    if args.dry_run:
        print(json.dumps({"plan": plan.to_dict()}, indent=2))
        return 0
    out = Path(args.out_dir or "runs/train")
    data = load_training_slices(rows, cfg.registry, cfg.arch.image_size, base_dir=manifest_path.parent)
    plan = plan_run(cfg.train, rows, cfg.registry, {d: len(v) for d, v in data.items()})
    print(json.dumps({"plan": plan.to_dict()}, indent=2))
    write_metadata(out, "train", args, cfg.to_dict())
    final = train(cfg.train, data, out, cfg.registry, cfg.arch, cfg.loss, resume=args.resume, device=args.device,
                  metadata={"manifest": str(manifest_path)})
    print(json.dumps({"checkpoint": str(final)}))
    return 0


def cmd_harmonize(args) -> int:
    from .harmonizer import batch_harmonize, read_harmonize_manifest
    ckpt = _require(args.checkpoint, "--checkpoint")
    manifest = read_harmonize_manifest(_require(args.manifest, "--manifest"))
    out = Path(args.out_dir or "harmonized")
    report = batch_harmonize(ckpt, manifest, out, batch_size=args.batch_size, device=args.device)
    (out / "harmonize_report.json").write_text(json.dumps(report.to_dict(), indent=2))
    write_metadata(out, "harmonize", args)
    print(json.dumps({"successes": len(report.successes), "failures": len(report.failures)}))
    return 0 if not report.failures else 3


def cmd_emphysema(args) -> int:
    from .quantify import read_cohort_manifest, score_cohort, write_records
    entries = read_cohort_manifest(_require(args.manifest, "--manifest"))
    records, failures = score_cohort(entries, allow_surrogate=args.allow_surrogate_mask)
    out = Path(args.out_dir or ".")
    path = write_records(records, out / (args.output or "scores.csv"))
    write_metadata(out, "emphysema", args, {"mask_policy": "surrogate allowed" if args.allow_surrogate_mask
                                            else "external masks only"})
    provenance = sorted({r.mask_provenance for r in records})
    print(json.dumps({"scores": str(path), "n_scored": len(records), "mask_provenance": provenance,
                      "failures": [{"subject_id": s, "error": e} for s, e in failures]}, indent=2))
    return 0 if not failures else 3


def cmd_analyze(args) -> int:
    from .quantify import read_records
    from .stats import analyze, format_table, write_report
    before = read_records(args.before)
    after = read_records(args.after)
    res_b, res_a = analyze(before), analyze(after)
    print(format_table(res_b, res_a))
    if args.out_dir:
        out = Path(args.out_dir)
        write_report(res_b, res_a, out, before, after)
        write_metadata(out, "analyze", args)
    return 0


def cmd_info(args) -> int:
    from .checkpoint import checkpoint_hash, read_meta
    ckpt = _require(args.checkpoint, "--checkpoint")
    meta = read_meta(ckpt)
    info = {k: meta[k] for k in ("version", "arch", "domains", "epoch", "step", "init_seed")}
    info["train"] = meta.get("extra", {}).get("train")
    info["loss"] = meta.get("extra", {}).get("loss")
    info["sha256"] = checkpoint_hash(ckpt)
    print(json.dumps(info, indent=2))
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CLIError(message, key="argv")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="kernel-harmony", description="Multipath cycle-GAN CT kernel harmonization.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("phantom", help="build a synthetic 4-domain dataset")
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.add_argument("--out-dir")
    s.set_defaults(func=cmd_phantom)

    s = sub.add_parser("train", help="train the multipath model")
    s.add_argument("--config")
    s.add_argument("--manifest")
    s.add_argument("--seed", type=int)
    s.add_argument("--out-dir")
    s.add_argument("--device", default="cpu")
    s.add_argument("--resume")
    s.add_argument("--dry-run", action="store_true", help="print the resolved config and run plan only")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("harmonize", help="harmonize volumes listed in a manifest")
    s.add_argument("--checkpoint")
    s.add_argument("--manifest")
    s.add_argument("--out-dir")
    s.add_argument("--device", default="cpu")
    s.add_argument("--batch-size", type=int, default=8)
    s.set_defaults(func=cmd_harmonize)

    s = sub.add_parser("emphysema", help="score LAA-950 for a cohort")
    s.add_argument("--manifest")
    s.add_argument("--out-dir")
    s.add_argument("--output", help="scores CSV file name (default scores.csv)")
    s.add_argument("--allow-surrogate-mask", action="store_true")
    s.set_defaults(func=cmd_emphysema)

    s = sub.add_parser("analyze", help="linear model + ANOVA before/after harmonization")
    s.add_argument("before")
    s.add_argument("after")
    s.add_argument("--out-dir")
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("info", help="inspect a checkpoint")
    s.add_argument("--checkpoint")
    s.set_defaults(func=cmd_info)
    return p


def _error_json(exc) -> str:
    payload = {"error": type(exc).__name__, "message": str(exc)}
    for attr in ("key", "path"):
        v = getattr(exc, attr, None)
        if v is not None:
            payload[attr] = str(v)
    if isinstance(exc, OSError) and getattr(exc, "filename", None):
        payload["path"] = str(exc.filename)
    return json.dumps(payload)


def main(argv=None) -> int:
    try:
        parser = build_parser()
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except (HarmonyError, OSError, ValueError, KeyError) as exc:
        print(_error_json(exc), file=sys.stderr)
        return 2 if isinstance(exc, (CLIError, ConfigurationError)) else 1


if __name__ == "__main__":
    sys.exit(main())
