"""Per-domain U-Net halves and PatchGAN discriminators.

A U-Net generator is split at its bottleneck: every domain owns an encoder
(image -> latent + skip maps) and a decoder (latent + skip maps -> image).
Because all encoders share one architecture, any domain's latent code can be
decoded by any other domain's decoder, which is what makes a single set of
4 encoders + 4 decoders cover all 12 translation paths.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Mapping, NamedTuple, Sequence

import torch
import torch.nn as nn

from .domains import DomainRegistry, TranslationPath, resolve_generator
from .errors import ConfigurationError, ShapeError, UnknownDomainError, WiringError


@dataclass(frozen=True)
class ArchConfig:
    image_size: int = 512
    depth: int = 9
    base_channels: int = 64
    max_channels: int = 512
    disc_channels: int = 64
    disc_layers: int = 3
    init_std: float = 0.02

    def __post_init__(self):
        if self.depth < 1:
            raise ConfigurationError("depth must be >= 1", key="arch.depth")
        if self.image_size % (2 ** self.depth):
            raise ConfigurationError(
                f"image_size {self.image_size} is not divisible by 2**depth = {2 ** self.depth}",
                key="arch.image_size")
        if self.disc_layers < 1:
            raise ConfigurationError("disc_layers must be >= 1", key="arch.disc_layers")
        if patch_map_size(self.image_size, self.disc_layers) < 1:
            raise ConfigurationError(
                f"image_size {self.image_size} too small for a {self.disc_layers}-layer discriminator",
                key="arch.disc_layers")

    def encoder_channels(self) -> list[int]:
        return [min(self.base_channels * 2 ** i, self.max_channels) for i in range(self.depth)]

    @property
    def latent_shape(self) -> tuple[int, int, int]:
        s = self.image_size // 2 ** self.depth
        return (self.encoder_channels()[-1], s, s)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "ArchConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown arch keys {sorted(unknown)}", key=f"arch.{sorted(unknown)[0]}")
        return cls(**d)


def _conv_out(n, k, s, p):
    return (n + 2 * p - k) // s + 1


def patch_map_size(image_size: int, disc_layers: int = 3) -> int:
    """Side of the PatchGAN score map for a square input."""
    n = image_size
    for _ in range(disc_layers):
        n = _conv_out(n, 4, 2, 1)
    n = _conv_out(n, 4, 1, 1)
    return _conv_out(n, 4, 1, 1)


class LatentCode(NamedTuple):
    features: torch.Tensor
    skips: tuple  # shallowest first: skips[0] has size image_size / 2


class Encoder(nn.Module):
    def __init__(self, arch: ArchConfig):
        super().__init__()
        chans = arch.encoder_channels()
        self.arch = arch
        blocks = []
        size, c_in = arch.image_size, 1
        for i, c_out in enumerate(chans):
            size //= 2
            layers = [nn.Conv2d(c_in, c_out, 4, stride=2, padding=1)]
            # instance norm of a 1x1 map is identically zero
            if i > 0 and size > 1:
                layers.append(nn.InstanceNorm2d(c_out))
            layers.append(nn.LeakyReLU(0.2))
            blocks.append(nn.Sequential(*layers))
            c_in = c_out
        self.blocks = nn.ModuleList(blocks)

    def forward(self, x: torch.Tensor) -> LatentCode:
        n = self.arch.image_size
        if x.dim() == 3:
            x = x.unsqueeze(0)
        if x.dim() != 4 or tuple(x.shape[1:]) != (1, n, n):
            raise ShapeError(f"encoder expects (B, 1, {n}, {n}) input, got {tuple(x.shape)}")
        skips = []
        for block in self.blocks:
            x = block(x)
            skips.append(x)
        return LatentCode(skips[-1], tuple(skips[:-1]))


class Decoder(nn.Module):
    def __init__(self, arch: ArchConfig):
        super().__init__()
        chans = arch.encoder_channels()
        self.arch = arch
        ups = []
        c_in = chans[-1]
        for level in range(arch.depth - 2, -1, -1):
            c_out = chans[level]
            ups.append(nn.Sequential(
                nn.ConvTranspose2d(c_in, c_out, 4, stride=2, padding=1),
                nn.InstanceNorm2d(c_out),
                nn.ReLU(),
            ))
            c_in = 2 * c_out
        self.ups = nn.ModuleList(ups)
        self.out = nn.Sequential(nn.ConvTranspose2d(c_in, 1, 4, stride=2, padding=1), nn.Tanh())

    def forward(self, code: LatentCode) -> torch.Tensor:
        features, skips = code
        arch = self.arch
        if len(skips) != arch.depth - 1:
            raise WiringError(f"decoder needs {arch.depth - 1} skip maps, got {len(skips)}")
        if tuple(features.shape[1:]) != arch.latent_shape:
            raise WiringError(f"latent shape {tuple(features.shape[1:])} != expected {arch.latent_shape}")
        h = features
        for up, skip in zip(self.ups, reversed(skips)):
            h = up(h)
            if h.shape != skip.shape:
                raise WiringError(f"skip map {tuple(skip.shape)} does not match decoder level {tuple(h.shape)}")
            h = torch.cat([h, skip], dim=1)
        return self.out(h)


class PatchDiscriminator(nn.Module):
    """PatchGAN: stride-2 convs, one stride-1 conv, then a 1-channel score conv."""

    def __init__(self, arch: ArchConfig):
        super().__init__()
        self.arch = arch
        c = arch.disc_channels
        layers = [nn.Conv2d(1, c, 4, stride=2, padding=1), nn.LeakyReLU(0.2)]
        c_prev = c
        for i in range(1, arch.disc_layers):
            c_next = c * min(2 ** i, 8)
            layers += [nn.Conv2d(c_prev, c_next, 4, stride=2, padding=1), nn.InstanceNorm2d(c_next), nn.LeakyReLU(0.2)]
            c_prev = c_next
        c_next = c * min(2 ** arch.disc_layers, 8)
        layers += [nn.Conv2d(c_prev, c_next, 4, stride=1, padding=1), nn.InstanceNorm2d(c_next), nn.LeakyReLU(0.2),
                   nn.Conv2d(c_next, 1, 4, stride=1, padding=1)]
        self.net = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        n = self.arch.image_size
        if x.dim() == 3:
            x = x.unsqueeze(0)
        if x.dim() != 4 or tuple(x.shape[1:]) != (1, n, n):
            raise ShapeError(f"discriminator expects (B, 1, {n}, {n}) input, got {tuple(x.shape)}")
        return self.net(x)


def init_weights(module: nn.Module, generator: torch.Generator, std: float = 0.02):
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
            with torch.no_grad():
                m.weight.copy_(torch.randn(m.weight.shape, generator=generator, dtype=m.weight.dtype) * std)
                if m.bias is not None:
                    m.bias.zero_()


class ModelBundle(nn.Module):
    """Four encoders, four decoders and four discriminators keyed by domain id."""

    def __init__(self, registry: DomainRegistry, arch: ArchConfig = ArchConfig(), seed: int = 0):
        super().__init__()
        self.registry = registry
        self.arch = arch
        self.seed = seed
        self.encoders = nn.ModuleDict({d: Encoder(arch) for d in registry.ids})
        self.decoders = nn.ModuleDict({d: Decoder(arch) for d in registry.ids})
        self.discriminators = nn.ModuleDict({d: PatchDiscriminator(arch) for d in registry.ids})
        g = torch.Generator().manual_seed(seed)
        for group in (self.encoders, self.decoders, self.discriminators):
            for d in registry.ids:
                init_weights(group[d], g, arch.init_std)

    def _get(self, group: nn.ModuleDict, domain: str) -> nn.Module:
        if domain not in group:
            raise UnknownDomainError(domain)
        return group[domain]

    def encode(self, domain: str, x: torch.Tensor) -> LatentCode:
        return self._get(self.encoders, domain)(x)

    def decode(self, domain: str, code: LatentCode) -> torch.Tensor:
        return self._get(self.decoders, domain)(code)

    def translate(self, path: TranslationPath, x: torch.Tensor) -> torch.Tensor:
        route = resolve_generator(path, self.registry)
        return self.decode(route.decoder, self.encode(route.encoder, x))

    def discriminate(self, domain: str, x: torch.Tensor) -> torch.Tensor:
        return self._get(self.discriminators, domain)(x)

    def generator_parameters(self) -> list[nn.Parameter]:
        return [*self.encoders.parameters(), *self.decoders.parameters()]

    def discriminator_parameters(self) -> list[nn.Parameter]:
        return list(self.discriminators.parameters())


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def as_tensor(pixels, device=None, dtype=torch.float32) -> torch.Tensor:
    """(H, W), (B, H, W) or (B, 1, H, W) array -> (B, 1, H, W) tensor."""
    t = torch.as_tensor(pixels, dtype=dtype, device=device)
    if t.dim() == 2:
        t = t[None, None]
    elif t.dim() == 3:
        t = t[:, None]
    return t


def translate_many(bundle: ModelBundle, path: TranslationPath, slices: Sequence, batch_size: int = 8):
    """Translate a stack of slices in batches without tracking gradients."""
    outs = []
    param = next(bundle.parameters())
    with torch.no_grad():
        for i in range(0, len(slices), batch_size):
            x = as_tensor(slices[i:i + batch_size], device=param.device, dtype=param.dtype)
            outs.append(bundle.translate(path, x)[:, 0].cpu())
    if not outs:
        return torch.empty(0)
    return torch.cat(outs)
