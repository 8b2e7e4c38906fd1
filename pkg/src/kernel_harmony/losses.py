"""Least-squares adversarial losses and the L1 cycle-consistency loss."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Mapping

import torch

from .domains import DomainRegistry, TranslationPath, enumerate_paths
from .errors import ConfigurationError, ShapeError


@dataclass(frozen=True)
class LossConfig:
    lambda_cycle: float = 10.0
    # weight on the adversarial term; set to 10 with lambda_cycle=1 for the
    # "lambda weights the adversarial loss" reading
    lambda_adversarial: float = 1.0
    real_label: float = 1.0
    fake_label: float = 0.0

    def __post_init__(self):
        if not self.lambda_cycle > 0:
            raise ConfigurationError("lambda_cycle must be positive", key="loss.lambda_cycle")
        if not self.lambda_adversarial > 0:
            raise ConfigurationError("lambda_adversarial must be positive", key="loss.lambda_adversarial")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "LossConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigurationError(f"unknown loss keys {sorted(unknown)}", key=f"loss.{sorted(unknown)[0]}")
        return cls(**d)


DEFAULT_LOSS = LossConfig()


def gen_adversarial_loss(fake_scores: torch.Tensor, cfg: LossConfig = DEFAULT_LOSS) -> torch.Tensor:
    if fake_scores.numel() == 0:
        raise ShapeError("empty score map")
    return torch.mean((fake_scores - cfg.real_label) ** 2)


def disc_loss(real_scores: torch.Tensor, fake_scores: torch.Tensor, cfg: LossConfig = DEFAULT_LOSS) -> torch.Tensor:
    if real_scores.shape != fake_scores.shape:
        raise ShapeError(f"score maps differ in shape: {tuple(real_scores.shape)} vs {tuple(fake_scores.shape)}")
    if real_scores.numel() == 0:
        raise ShapeError("empty score map")
    return 0.5 * (torch.mean((real_scores - cfg.real_label) ** 2) + torch.mean((fake_scores - cfg.fake_label) ** 2))


def cycle_loss(original: torch.Tensor, reconstructed: torch.Tensor, cfg: LossConfig = DEFAULT_LOSS) -> torch.Tensor:
    if original.shape != reconstructed.shape:
        raise ShapeError(f"cycle loss shape mismatch: {tuple(original.shape)} vs {tuple(reconstructed.shape)}")
    return cfg.lambda_cycle * torch.mean(torch.abs(original - reconstructed))


@dataclass
class StepLosses:
    """Per-path loss terms of one training step (scalar tensors keyed by path)."""
    adversarial: dict
    cycle: dict
    discriminator: dict

    def generator_total(self, cfg: LossConfig = DEFAULT_LOSS) -> torch.Tensor:
        return sum(cfg.lambda_adversarial * self.adversarial[p] + self.cycle[p] for p in self.adversarial)

    def discriminator_total(self) -> torch.Tensor:
        return sum(self.discriminator.values())

    @property
    def paths(self) -> list[TranslationPath]:
        return list(self.adversarial)

    def rows(self, step: int) -> list[dict]:
        f = lambda t: float(t.detach())
        return [{"step": step, "path": str(p), "adv": f(self.adversarial[p]), "cyc": f(self.cycle[p]),
                 "disc": f(self.discriminator[p])} for p in self.paths]

    def first_nonfinite(self):
        """(kind, path) of the first non-finite term, or None."""
        for kind in ("adversarial", "cycle", "discriminator"):
            for p, v in getattr(self, kind).items():
                if not torch.isfinite(v).all():
                    return kind, p
        return None


def assemble_step_losses(model, batches: Mapping[str, torch.Tensor], cfg: LossConfig = DEFAULT_LOSS,
                         registry: DomainRegistry | None = None) -> StepLosses:
    """Compute the adversarial, cycle and discriminator loss for every path.

    ``model`` needs ``translate(path, x)`` and ``discriminate(domain, x)``;
    a :class:`~kernel_harmony.networks.ModelBundle` qualifies, so does a stub.
    Fakes enter the discriminator loss detached, so that loss carries no
    gradient back into the generators.
    """
    registry = registry if registry is not None else model.registry
    missing = [d for d in registry.ids if d not in batches]
    if missing:
        raise ConfigurationError(f"missing batch for domain(s) {missing}", key=missing[0])
    adv, cyc, dis = {}, {}, {}
    real_scores = {}
    for path in enumerate_paths(registry):
        x_s, x_t = batches[path.source], batches[path.target]
        fake = model.translate(path, x_s)
        rec = model.translate(path.reversed(), fake)
        adv[path] = gen_adversarial_loss(model.discriminate(path.target, fake), cfg)
        cyc[path] = cycle_loss(x_s, rec, cfg)
        if path.target not in real_scores:
            real_scores[path.target] = model.discriminate(path.target, x_t)
        dis[path] = disc_loss(real_scores[path.target], model.discriminate(path.target, fake.detach()), cfg)
    return StepLosses(adv, cyc, dis)
