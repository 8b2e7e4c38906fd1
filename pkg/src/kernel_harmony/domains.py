"""Kernel domains and the translation paths between them.

Four reconstruction kernels (two Siemens, two GE) give six unordered
harmonization directions and twelve ordered paths. Every path is served by
the source domain's encoder, the target domain's decoder and the target
domain's discriminator.
"""
from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass
from typing import Iterable, Iterator, Mapping, NamedTuple

from .errors import ConfigurationError, UnknownDomainError


class Vendor(str, enum.Enum):
    SIEMENS = "SIEMENS"
    GE = "GE"


class Hardness(str, enum.Enum):
    HARD = "HARD"
    SOFT = "SOFT"


@dataclass(frozen=True)
class KernelDomain:
    id: str
    vendor: Vendor
    kernel_name: str
    hardness: Hardness

    @classmethod
    def from_dict(cls, d: Mapping) -> "KernelDomain":
        try:
            return cls(
                id=str(d["id"]),
                vendor=Vendor(str(d["vendor"]).upper()),
                kernel_name=str(d["kernel_name"]),
                hardness=Hardness(str(d["hardness"]).upper()),
            )
        except KeyError as exc:
            raise ConfigurationError(f"domain entry missing field {exc.args[0]!r}", key=f"domains.{exc.args[0]}") from None
        except ValueError as exc:
            raise ConfigurationError(f"bad domain entry {dict(d)!r}: {exc}", key="domains") from None

    def to_dict(self) -> dict:
        return {"id": self.id, "vendor": self.vendor.value, "kernel_name": self.kernel_name,
                "hardness": self.hardness.value}


@dataclass(frozen=True, order=True)
class TranslationPath:
    source: str
    target: str

    def __post_init__(self):
        if self.source == self.target:
            raise ConfigurationError(f"path source and target are both {self.source!r}", key="path")

    def reversed(self) -> "TranslationPath":
        return TranslationPath(self.target, self.source)

    def __str__(self):
        return f"{self.source}->{self.target}"

    @classmethod
    def parse(cls, text: str) -> "TranslationPath":
        source, sep, target = text.partition("->")
        if not sep:
            raise ConfigurationError(f"cannot parse path {text!r}; expected 'source->target'", key="path")
        return cls(source.strip(), target.strip())


class GeneratorRoute(NamedTuple):
    encoder: str
    decoder: str
    discriminator: str


class DomainRegistry:
    """Immutable, id-keyed collection of kernel domains."""

    def __init__(self, domains: Iterable[KernelDomain]):
        domains = tuple(domains)
        ids = [d.id for d in domains]
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        if dupes:
            raise ConfigurationError(f"duplicate domain ids: {dupes}", key="domains")
        self._by_id = {d.id: d for d in sorted(domains, key=lambda d: d.id)}

    @classmethod
    def from_config(cls, entries: Iterable[Mapping]) -> "DomainRegistry":
        return cls(KernelDomain.from_dict(e) for e in entries)

    def to_config(self) -> list[dict]:
        return [d.to_dict() for d in self]

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(self._by_id)

    def __getitem__(self, domain_id: str) -> KernelDomain:
        try:
            return self._by_id[domain_id]
        except KeyError:
            raise UnknownDomainError(domain_id) from None

    def __contains__(self, domain_id) -> bool:
        return domain_id in self._by_id

    def __iter__(self) -> Iterator[KernelDomain]:
        return iter(self._by_id.values())

    def __len__(self) -> int:
        return len(self._by_id)

    def __repr__(self):
        return f"DomainRegistry({list(self._by_id)})"

    def check_path(self, path: TranslationPath) -> TranslationPath:
        self[path.source], self[path.target]
        return path


PAPER_DOMAINS = (
    KernelDomain("siemens_b50f", Vendor.SIEMENS, "B50f", Hardness.HARD),
    KernelDomain("siemens_b30f", Vendor.SIEMENS, "B30f", Hardness.SOFT),
    KernelDomain("ge_bone", Vendor.GE, "BONE", Hardness.HARD),
    KernelDomain("ge_std", Vendor.GE, "STD", Hardness.SOFT),
)

REFERENCE_DOMAIN = "siemens_b30f"


def default_registry() -> DomainRegistry:
    return DomainRegistry(PAPER_DOMAINS)


def _require_pairs(registry: DomainRegistry):
    if len(registry) < 2:
        raise ConfigurationError(
            f"need at least 2 kernel domains to harmonize, got {len(registry)}", key="domains")


def enumerate_directions(registry: DomainRegistry) -> list[tuple[str, str]]:
    """All unordered domain pairs, lexicographic by id."""
    _require_pairs(registry)
    return list(itertools.combinations(registry.ids, 2))


def enumerate_paths(registry: DomainRegistry) -> list[TranslationPath]:
    """Both orderings of every direction, sorted by (source, target)."""
    _require_pairs(registry)
    return sorted(TranslationPath(s, t) for s, t in itertools.permutations(registry.ids, 2))


def resolve_generator(path: TranslationPath, registry: DomainRegistry | None = None) -> GeneratorRoute:
    if registry is not None:
        registry.check_path(path)
    return GeneratorRoute(encoder=path.source, decoder=path.target, discriminator=path.target)
