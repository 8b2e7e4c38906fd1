"""Slice-by-slice inference: convert a CT volume from one kernel to another."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .checkpoint import checkpoint_hash, load_checkpoint
from .domains import TranslationPath
from .errors import CheckpointError, ConfigurationError, HarmonyError
from .networks import ModelBundle, translate_many
from .volume_io import DEFAULT_SPEC, NormalizationSpec, Volume, denormalize, extract_axial_slices, load_volume, \
    save_volume

log = logging.getLogger(__name__)


def _bundle(model, device="cpu") -> ModelBundle:
    if isinstance(model, ModelBundle):
        return model
    return load_checkpoint(model, device=device).bundle


def harmonize_volume(model, v: Volume, path: TranslationPath, batch_size: int = 8,
                     spec: NormalizationSpec = DEFAULT_SPEC, device="cpu") -> Volume:
    """Translate every axial slice of ``v`` along ``path`` and return an HU volume.

    ``model`` is a :class:`ModelBundle` or a checkpoint path. No augmentation
    or cropping is applied, so the result is a pure per-slice function of the
    input and independent of ``batch_size``.
    """
    bundle = _bundle(model, device)
    for d in (path.source, path.target):
        if d not in bundle.registry:
            raise CheckpointError(f"checkpoint has no domain {d!r} (has {list(bundle.registry.ids)})")
    bundle.eval()
    slices = np.stack([s.pixels for s in extract_axial_slices(v, spec, path.source, bundle.arch.image_size)])
    out = translate_many(bundle, path, slices, batch_size).numpy()
    hu = denormalize(np.moveaxis(out, 0, -1), spec)
    return v.with_voxels(hu)


@dataclass
class ManifestEntry:
    volume_path: str
    path: TranslationPath


@dataclass
class HarmonizeReport:
    checkpoint: str
    checkpoint_sha256: str
    successes: list = field(default_factory=list)
    failures: list = field(default_factory=list)

    def to_dict(self):
        return {"checkpoint": self.checkpoint, "checkpoint_sha256": self.checkpoint_sha256,
                "successes": self.successes, "failures": self.failures}


def read_harmonize_manifest(path) -> list[ManifestEntry]:
    """CSV with columns volume_path, source_domain, target_domain."""
    entries = []
    with open(path, newline="") as fh:
        for i, row in enumerate(csv.DictReader(fh)):
            try:
                entries.append(ManifestEntry(row["volume_path"],
                                             TranslationPath(row["source_domain"], row["target_domain"])))
            except KeyError as exc:
                raise ConfigurationError(f"{path}: row {i + 1} lacks column {exc.args[0]!r}",
                                         key=exc.args[0]) from None
    return entries


def output_name(volume_path, path: TranslationPath) -> str:
    name = Path(volume_path).name
    for ext in (".nii.gz", ".nii"):
        if name.endswith(ext):
            name = name[: -len(ext)]
            break
    return f"{name}_{path.source}-to-{path.target}.nii.gz"


def batch_harmonize(checkpoint, manifest: Sequence[ManifestEntry], out_dir, batch_size: int = 8,
                    device="cpu") -> HarmonizeReport:
    """Harmonize every manifest entry; per-entry failures are recorded, not raised."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = HarmonizeReport(str(checkpoint), checkpoint_hash(checkpoint) if manifest else "")
    if not manifest:
        return report
    bundle = load_checkpoint(checkpoint, device=device).bundle
    for entry in manifest:
        try:
            vol = load_volume(entry.volume_path)
            result = harmonize_volume(bundle, vol, entry.path, batch_size)
            dest = save_volume(result, out_dir / output_name(entry.volume_path, entry.path))
            sidecar = {
                "input": str(entry.volume_path),
                "output": str(dest),
                "source_kernel": entry.path.source,
                "target_kernel": entry.path.target,
                "checkpoint": str(checkpoint),
                "checkpoint_sha256": report.checkpoint_sha256,
                "warnings": vol.warnings,
            }
            dest.with_name(dest.name.replace(".nii.gz", ".json")).write_text(json.dumps(sidecar, indent=2))
            report.successes.append({"input": str(entry.volume_path), "output": str(dest), "path": str(entry.path)})
        except (HarmonyError, OSError, KeyError) as exc:
            log.warning("failed to harmonize %s: %s", entry.volume_path, exc)
            report.failures.append({"input": str(entry.volume_path), "path": str(entry.path),
                                    "error": f"{type(exc).__name__}: {exc}"})
    return report
