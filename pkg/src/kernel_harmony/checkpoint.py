"""Deterministic checkpoint container.

A checkpoint is a zip archive of ``meta.json`` plus one ``.npy`` member per
tensor. Members are written in sorted order with a fixed timestamp, so equal
training state always serializes to equal bytes.
"""
from __future__ import annotations

import hashlib
import io
import json
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .domains import DomainRegistry
from .errors import CheckpointError
from .networks import ArchConfig, ModelBundle

FORMAT = "kernel_harmony.checkpoint"
VERSION = 1
_EPOCH_1980 = (1980, 1, 1, 0, 0, 0)


@dataclass
class Checkpoint:
    bundle: ModelBundle
    epoch: int = 0
    step: int = 0
    optimizers: dict = field(default_factory=dict)   # name -> torch optimizer state_dict
    rng_state: dict | None = None                    # numpy bit_generator.state
    extra: dict = field(default_factory=dict)        # train/loss config and other metadata


def _npy_bytes(t) -> bytes:
    buf = io.BytesIO()
    arr = t.detach().cpu().numpy() if isinstance(t, torch.Tensor) else np.asarray(t)
    np.save(buf, np.ascontiguousarray(arr), allow_pickle=False)
    return buf.getvalue()


def _jsonable_groups(groups):
    out = []
    for g in groups:
        g = dict(g)
        if "betas" in g:
            g["betas"] = list(g["betas"])
        out.append(g)
    return out


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    bundle = ckpt.bundle
    members = {}
    for name, t in bundle.state_dict().items():
        members[f"model/{name}.npy"] = _npy_bytes(t)
    opt_meta = {}
    for oname, sd in sorted(ckpt.optimizers.items()):
        opt_meta[oname] = {"param_groups": _jsonable_groups(sd["param_groups"]), "state": {}}
        for idx, st in sd["state"].items():
            keys = {}
            for k, v in st.items():
                if isinstance(v, torch.Tensor):
                    members[f"optim/{oname}/{idx}/{k}.npy"] = _npy_bytes(v)
                    keys[k] = "tensor"
                else:
                    keys[k] = v
            opt_meta[oname]["state"][str(idx)] = keys
    meta = {
        "format": FORMAT,
        "version": VERSION,
        "arch": bundle.arch.to_dict(),
        "domains": bundle.registry.to_config(),
        "init_seed": bundle.seed,
        "epoch": ckpt.epoch,
        "step": ckpt.step,
        "optimizers": opt_meta,
        "rng_state": ckpt.rng_state,
        "extra": ckpt.extra,
    }
    members["meta.json"] = json.dumps(meta, sort_keys=True, indent=1).encode()
    tmp = path.with_name(path.name + ".tmp")
    with zipfile.ZipFile(tmp, "w", compression=zipfile.ZIP_STORED) as zf:
        for name in sorted(members):
            info = zipfile.ZipInfo(name, date_time=_EPOCH_1980)
            info.external_attr = 0o644 << 16
            zf.writestr(info, members[name])
    tmp.replace(path)
    return path


def _read_npy(zf, name):
    return torch.from_numpy(np.load(io.BytesIO(zf.read(name)), allow_pickle=False))


def read_meta(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"{path}: checkpoint not found")
    try:
        with zipfile.ZipFile(path) as zf:
            meta = json.loads(zf.read("meta.json"))
    except (zipfile.BadZipFile, KeyError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: not a readable checkpoint ({exc})") from exc
    if meta.get("format") != FORMAT:
        raise CheckpointError(f"{path}: unknown checkpoint format {meta.get('format')!r}")
    if meta.get("version") != VERSION:
        raise CheckpointError(f"{path}: checkpoint version {meta.get('version')} != supported version {VERSION}")
    return meta


def load_checkpoint(path, device="cpu") -> Checkpoint:
    meta = read_meta(path)
    registry = DomainRegistry.from_config(meta["domains"])
    bundle = ModelBundle(registry, ArchConfig.from_dict(meta["arch"]), seed=meta["init_seed"])
    with zipfile.ZipFile(path) as zf:
        state = {name: _read_npy(zf, f"model/{name}.npy") for name in bundle.state_dict()}
        bundle.load_state_dict(state)
        optimizers = {}
        for oname, om in meta["optimizers"].items():
            groups = []
            for g in om["param_groups"]:
                g = dict(g)
                if "betas" in g:
                    g["betas"] = tuple(g["betas"])
                groups.append(g)
            st = {}
            for idx, keys in om["state"].items():
                st[int(idx)] = {k: (_read_npy(zf, f"optim/{oname}/{idx}/{k}.npy") if v == "tensor" else v)
                                for k, v in keys.items()}
            optimizers[oname] = {"state": st, "param_groups": groups}
    bundle.to(device)
    return Checkpoint(bundle, meta["epoch"], meta["step"], optimizers, meta["rng_state"], meta["extra"])


def checkpoint_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
