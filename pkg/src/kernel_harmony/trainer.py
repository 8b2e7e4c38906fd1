"""Simultaneous training of all translation paths."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import platform
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import torch

from . import __version__
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .domains import DomainRegistry, default_registry
from .errors import CheckpointError, ConfigurationError, IngestionError, TrainingDivergedError
from .losses import DEFAULT_LOSS, LossConfig, StepLosses, assemble_step_losses
from .networks import ArchConfig, ModelBundle
from .volume_io import augment_for_training, extract_axial_slices, load_size_for, load_volume

log = logging.getLogger(__name__)

LOG_COLUMNS = ["step", "path", "adv", "cyc", "disc"]


@dataclass(frozen=True)
class TrainConfig:
    epochs_total: int = 30
    epochs_constant: int = 15
    batch_size: int = 8
    lr0: float = 2e-4
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    seed: int = 0
    checkpoint_every: int = 5
    n_shards: int = 1
    augment: bool = True

    def __post_init__(self):
        if self.epochs_total < 1:
            raise ConfigurationError("epochs_total must be >= 1", key="train.epochs_total")
        if not 0 <= self.epochs_constant <= self.epochs_total:
            raise ConfigurationError("epochs_constant must lie in [0, epochs_total]", key="train.epochs_constant")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1", key="train.batch_size")
        if not self.lr0 > 0:
            raise ConfigurationError("lr0 must be positive", key="train.lr0")
        if self.checkpoint_every < 1:
            raise ConfigurationError("checkpoint_every must be >= 1", key="train.checkpoint_every")
        if self.n_shards < 1 or self.batch_size % self.n_shards:
            raise ConfigurationError("n_shards must divide batch_size", key="train.n_shards")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "TrainConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigurationError(f"unknown train keys {sorted(unknown)}", key=f"train.{sorted(unknown)[0]}")
        return cls(**d)


def learning_rate(epoch: int, cfg: TrainConfig = TrainConfig()) -> float:
    """Constant ``lr0`` for ``epochs_constant`` epochs, then linear decay to 0 at ``epochs_total``."""
    if not 0 <= epoch <= cfg.epochs_total:
        raise ConfigurationError(f"epoch {epoch} outside [0, {cfg.epochs_total}]", key="epoch")
    decay_epochs = cfg.epochs_total - cfg.epochs_constant + 1
    return cfg.lr0 * (1.0 - max(0, epoch - (cfg.epochs_constant - 1)) / decay_epochs)


def make_optimizers(bundle: ModelBundle, cfg: TrainConfig):
    betas = (cfg.adam_beta1, cfg.adam_beta2)
    opt_g = torch.optim.Adam(bundle.generator_parameters(), lr=cfg.lr0, betas=betas)
    opt_d = torch.optim.Adam(bundle.discriminator_parameters(), lr=cfg.lr0, betas=betas)
    return opt_g, opt_d


def set_lr(optimizer, lr: float):
    for g in optimizer.param_groups:
        g["lr"] = lr


class TrainState:
    """Bundle plus its two Adam optimizers; the single writer of parameters."""

    def __init__(self, bundle: ModelBundle, cfg: TrainConfig = TrainConfig(), loss_cfg: LossConfig = DEFAULT_LOSS):
        self.bundle = bundle
        self.cfg = cfg
        self.loss_cfg = loss_cfg
        self.opt_g, self.opt_d = make_optimizers(bundle, cfg)
        self.epoch = 0
        self.step = 0


def _mean_losses(parts: Sequence[StepLosses]) -> StepLosses:
    if len(parts) == 1:
        return parts[0]
    k = len(parts)
    avg = lambda kind: {p: sum(getattr(s, kind)[p] for s in parts) / k for p in parts[0].paths}
    return StepLosses(avg("adversarial"), avg("cycle"), avg("discriminator"))


def compute_gradients(state: TrainState, batches: Mapping[str, torch.Tensor], n_shards: int = 1,
                      discriminator: bool = True) -> StepLosses:
    """Accumulate generator and discriminator gradients for one batch.

    The batch is split into ``n_shards`` equal shards whose gradients are
    averaged, mirroring data-parallel workers; the result equals the
    single-shard gradient of the whole batch.
    """
    bundle = state.bundle
    gen_params = bundle.generator_parameters()
    disc_params = bundle.discriminator_parameters()
    state.opt_g.zero_grad(set_to_none=True)
    state.opt_d.zero_grad(set_to_none=True)
    sizes = {len(b) for b in batches.values()}
    if any(s % n_shards for s in sizes):
        raise ConfigurationError("batch size must be divisible by n_shards", key="train.n_shards")
    parts = []
    for i in range(n_shards):
        shard = {d: b.chunk(n_shards)[i] for d, b in batches.items()}
        losses = assemble_step_losses(bundle, shard, state.loss_cfg)
        bad = losses.first_nonfinite()
        if bad is not None:
            raise TrainingDivergedError(f"non-finite {bad[0]} loss on path {bad[1]} at step {state.step}",
                                        path=bad[1])
        g_total = losses.generator_total(state.loss_cfg) / n_shards
        g_total.backward(inputs=gen_params)
        if discriminator:
            (losses.discriminator_total() / n_shards).backward(inputs=disc_params)
        parts.append(StepLosses(*({p: v.detach() for p, v in m.items()}
                                  for m in (losses.adversarial, losses.cycle, losses.discriminator))))
    return _mean_losses(parts)


def train_step(state: TrainState, batches: Mapping[str, torch.Tensor], update_discriminator: bool = True) -> StepLosses:
    """One simultaneous update of every encoder/decoder and every discriminator.

    Both updates use losses evaluated before either parameter set moves;
    the returned :class:`StepLosses` are those pre-update values.
    """
    losses = compute_gradients(state, batches, state.cfg.n_shards, discriminator=update_discriminator)
    state.opt_g.step()
    if update_discriminator:
        state.opt_d.step()
    for name, p in state.bundle.named_parameters():
        if not torch.isfinite(p).all():
            raise TrainingDivergedError(f"parameter {name} became non-finite at step {state.step}")
    state.step += 1
    return losses


def epoch_indices(sizes: Mapping[str, int], batch_size: int, rng: np.random.Generator) -> dict:
    """Per-domain (n_steps, batch_size) index arrays for one epoch.

    The largest domain sets the epoch length; every domain is drawn without
    replacement from fresh permutations, smaller ones cycling through several.
    """
    n_steps = math.ceil(max(sizes.values()) / batch_size)
    out = {}
    for d in sorted(sizes):
        need = n_steps * batch_size
        reps = [rng.permutation(sizes[d]) for _ in range(math.ceil(need / sizes[d]))]
        out[d] = np.concatenate(reps)[:need].reshape(n_steps, batch_size)
    return out


def make_batch(slices: np.ndarray, idx: np.ndarray, rng: np.random.Generator, augment: bool, domain: str,
               device="cpu") -> torch.Tensor:
    size = slices.shape[-1]
    if augment:
        load = load_size_for(size)
        arr = np.stack([augment_for_training(slices[i], rng, domain, load, size).pixels for i in idx])
    else:
        arr = slices[idx]
    return torch.from_numpy(np.ascontiguousarray(arr, dtype=np.float32))[:, None].to(device)


def dataset_hash(datasets: Mapping[str, np.ndarray]) -> str:
    h = hashlib.sha256()
    for d in sorted(datasets):
        h.update(d.encode())
        h.update(np.ascontiguousarray(datasets[d], dtype=np.float32).tobytes())
    return h.hexdigest()


def run_metadata(cfg: TrainConfig, loss_cfg: LossConfig, arch: ArchConfig, registry: DomainRegistry,
                 data_hash: str, extra: dict | None = None) -> dict:
    return {
        "package_version": __version__,
        "python": platform.python_version(),
        "torch": torch.__version__,
        "numpy": np.__version__,
        "seed": cfg.seed,
        "train": cfg.to_dict(),
        "loss": loss_cfg.to_dict(),
        "arch": arch.to_dict(),
        "domains": registry.to_config(),
        "dataset_sha256": data_hash,
        **(extra or {}),
    }


def _check_datasets(datasets, registry, arch):
    for d in registry.ids:
        if d not in datasets or len(datasets[d]) == 0:
            raise ConfigurationError(f"training dataset for domain {d!r} is empty", key=d)
        shape = tuple(datasets[d].shape[1:])
        if shape != (arch.image_size, arch.image_size):
            raise ConfigurationError(
                f"domain {d!r} slices are {shape}, arch expects {arch.image_size}x{arch.image_size}",
                key="arch.image_size")


def _ensure_writable(out_dir: Path):
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        probe = out_dir / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise ConfigurationError(f"output directory {out_dir} is not writable ({exc})", key="out_dir") from exc


def train(cfg: TrainConfig, datasets: Mapping[str, np.ndarray], out_dir, registry: DomainRegistry | None = None,
          arch: ArchConfig = ArchConfig(), loss_cfg: LossConfig = DEFAULT_LOSS, resume=None, device="cpu",
          stop_after_epoch: int | None = None, metadata: dict | None = None) -> Path:
    """Train all paths for ``cfg.epochs_total`` epochs and return the final checkpoint path.

    ``datasets`` maps domain id to an ``(N, H, W)`` array of normalized
    slices. Writes ``loss_log.csv``, ``run.json`` and
    ``checkpoint_epochNNN.ckpt`` files into ``out_dir``; ``resume`` continues
    from a checkpoint written by a previous run. ``stop_after_epoch`` ends
    the run early (for staged runs).
    """
    registry = registry or default_registry()
    out_dir = Path(out_dir)
    _check_datasets(datasets, registry, arch)
    _ensure_writable(out_dir)
    torch.manual_seed(cfg.seed)

    if resume is not None:
        ckpt = load_checkpoint(resume, device=device)
        if ckpt.bundle.arch != arch:
            raise CheckpointError(f"{resume}: architecture {ckpt.bundle.arch} differs from requested {arch}")
        if ckpt.bundle.registry.ids != registry.ids:
            raise CheckpointError(f"{resume}: domains {ckpt.bundle.registry.ids} differ from {registry.ids}")
        state = TrainState(ckpt.bundle, cfg, loss_cfg)
        state.opt_g.load_state_dict(ckpt.optimizers["generator"])
        state.opt_d.load_state_dict(ckpt.optimizers["discriminator"])
        state.epoch, state.step = ckpt.epoch, ckpt.step
        rng = np.random.default_rng()
        rng.bit_generator.state = ckpt.rng_state
    else:
        bundle = ModelBundle(registry, arch, seed=cfg.seed).to(device)
        state = TrainState(bundle, cfg, loss_cfg)
        rng = np.random.default_rng(cfg.seed)

    data = {d: np.asarray(datasets[d], dtype=np.float32) for d in registry.ids}
    meta = run_metadata(cfg, loss_cfg, arch, registry, dataset_hash(data), metadata)
    (out_dir / "run.json").write_text(json.dumps(meta, indent=2, sort_keys=True))

    log_path = out_dir / "loss_log.csv"
    new_log = resume is None or not log_path.exists()
    sizes = {d: len(data[d]) for d in registry.ids}
    last = out_dir / "checkpoint_latest.ckpt"
    final_epoch = cfg.epochs_total if stop_after_epoch is None else min(stop_after_epoch, cfg.epochs_total)

    with open(log_path, "w" if new_log else "a", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=LOG_COLUMNS, lineterminator="\n")
        if new_log:
            writer.writeheader()
        while state.epoch < final_epoch:
            lr = learning_rate(state.epoch, cfg)
            set_lr(state.opt_g, lr)
            set_lr(state.opt_d, lr)
            plan = epoch_indices(sizes, cfg.batch_size, rng)
            n_steps = len(next(iter(plan.values())))
            for k in range(n_steps):
                batches = {d: make_batch(data[d], plan[d][k], rng, cfg.augment, d, device) for d in registry.ids}
                losses = train_step(state, batches)
                writer.writerows(losses.rows(state.step - 1))
            fh.flush()
            state.epoch += 1
            log.info("epoch %d/%d lr=%.3g G=%.4f D=%.4f", state.epoch, cfg.epochs_total, lr,
                     float(losses.generator_total(loss_cfg)), float(losses.discriminator_total()))
            if state.epoch % cfg.checkpoint_every == 0 or state.epoch == final_epoch:
                ckpt = Checkpoint(state.bundle, state.epoch, state.step,
                                  {"generator": state.opt_g.state_dict(), "discriminator": state.opt_d.state_dict()},
                                  rng.bit_generator.state,
                                  {"train": cfg.to_dict(), "loss": loss_cfg.to_dict()})
                path = save_checkpoint(ckpt, out_dir / f"checkpoint_epoch{state.epoch:03d}.ckpt")
                save_checkpoint(ckpt, last)
                log.info("wrote %s", path)
    if not last.exists():
        raise CheckpointError(f"no epochs left to run: checkpoint is at epoch {state.epoch}")
    return out_dir / f"checkpoint_epoch{state.epoch:03d}.ckpt"


@dataclass
class RunPlan:
    n_volumes: int
    volumes_per_domain: dict
    slices_per_domain: dict | None = None
    epoch_length: int | None = None
    total_steps: int | None = None

    def to_dict(self):
        return asdict(self)


def plan_run(cfg: TrainConfig, manifest: Sequence[Mapping], registry: DomainRegistry | None = None,
             slices_per_domain: Mapping[str, int] | None = None) -> RunPlan:
    """Summarize a training run from its manifest rows (``volume_path``, ``domain``)."""
    registry = registry or default_registry()
    counts = {d: 0 for d in registry.ids}
    for row in manifest:
        d = row["domain"]
        registry[d]
        counts[d] += 1
    plan = RunPlan(sum(counts.values()), counts)
    if slices_per_domain:
        plan.slices_per_domain = dict(slices_per_domain)
        plan.epoch_length = math.ceil(max(slices_per_domain.values()) / cfg.batch_size)
        plan.total_steps = plan.epoch_length * cfg.epochs_total
    return plan


def read_train_manifest(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for i, r in enumerate(rows):
        if "volume_path" not in r or "domain" not in r:
            raise ConfigurationError(f"{path}: row {i + 1} lacks volume_path/domain columns", key="manifest")
    return rows


def load_training_slices(manifest: Sequence[Mapping], registry: DomainRegistry, image_size: int,
                         base_dir=None) -> dict:
    """Normalized axial slices per domain from NIfTI volumes listed in ``manifest``."""
    out = {d: [] for d in registry.ids}
    for row in manifest:
        d = row["domain"]
        registry[d]
        p = Path(row["volume_path"])
        if base_dir is not None and not p.is_absolute():
            p = Path(base_dir) / p
        vol = load_volume(p)
        out[d].extend(s.pixels for s in extract_axial_slices(vol, domain=d, size=image_size))
    empty = [d for d, v in out.items() if not v]
    if empty:
        raise IngestionError(f"manifest has no volumes for domain(s) {empty}")
    return {d: np.stack(v) for d, v in out.items()}
