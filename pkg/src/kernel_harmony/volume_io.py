"""NIfTI ingestion, HU clipping/normalization and training augmentation.

Volumes are stored with axial slices along the last array axis, i.e.
``voxels[:, :, k]`` is axial slice ``k``.
"""
from __future__ import annotations

import logging
import os
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import nibabel as nib
import numpy as np
import torch
import torch.nn.functional as F

from .errors import ConfigurationError, IngestionError, ShapeError

log = logging.getLogger(__name__)

HU_MIN = -1024.0
HU_MAX = 3072.0
SLICE_SIZE = 512
LOAD_SIZE = 572


@dataclass(frozen=True)
class NormalizationSpec:
    hu_min: float = HU_MIN
    hu_max: float = HU_MAX
    out_min: float = -1.0
    out_max: float = 1.0

    def __post_init__(self):
        if not self.hu_min < self.hu_max:
            raise ConfigurationError("hu_min must be below hu_max", key="hu_min")
        if not self.out_min < self.out_max:
            raise ConfigurationError("out_min must be below out_max", key="out_min")


DEFAULT_SPEC = NormalizationSpec()


@dataclass
class Volume:
    voxels: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)
    affine: np.ndarray = field(default_factory=lambda: np.eye(4))
    source_path: str = ""
    warnings: list = field(default_factory=list)

    @property
    def shape(self):
        return self.voxels.shape

    @property
    def n_slices(self) -> int:
        return self.voxels.shape[2]

    def axial(self, k: int) -> np.ndarray:
        return self.voxels[:, :, k]

    def with_voxels(self, voxels: np.ndarray, source_path: str = "") -> "Volume":
        """Same geometry, new intensities."""
        return Volume(voxels, tuple(self.spacing), self.affine.copy(), source_path, [])


@dataclass
class TrainingSlice:
    pixels: np.ndarray
    domain: str


def load_volume(path, spec: NormalizationSpec = DEFAULT_SPEC) -> Volume:
    """Read a 3-D NIfTI-1 file into a :class:`Volume` of HU values.

    Non-finite voxels are replaced by ``spec.hu_min`` and a warning is both
    emitted and recorded on ``Volume.warnings``.
    """
    path = os.fspath(path)
    if not os.path.exists(path):
        raise IngestionError(f"{path}: no such file")
    try:
        img = nib.load(path)
        data = np.asarray(img.dataobj, dtype=np.float64)
    except Exception as exc:
        raise IngestionError(f"{path}: cannot read NIfTI image ({exc})") from exc
    if data.ndim == 4 and data.shape[3] == 1:
        data = data[..., 0]
    if data.ndim != 3:
        raise IngestionError(f"{path}: expected 3-D volume, got {data.ndim}-D array of shape {data.shape}")

    notes = []
    bad = ~np.isfinite(data)
    if bad.any():
        msg = f"{path}: {int(bad.sum())} non-finite voxels replaced by {spec.hu_min:g} HU"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        notes.append(msg)
        data[bad] = spec.hu_min
    spacing = tuple(float(z) for z in img.header.get_zooms()[:3])
    return Volume(data, spacing, np.asarray(img.affine, dtype=np.float64), path, notes)


def save_volume(volume: Volume, path, spec: NormalizationSpec = DEFAULT_SPEC) -> Path:
    """Write HU voxels as float32, clipped to the HU window, keeping geometry."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = np.clip(volume.voxels, spec.hu_min, spec.hu_max).astype(np.float32)
    img = nib.Nifti1Image(data, volume.affine)
    img.header.set_zooms(tuple(volume.spacing)[:3])
    img.header.set_xyzt_units("mm")
    nib.save(img, str(path))
    return path


def clip_and_normalize(v, spec: NormalizationSpec = DEFAULT_SPEC) -> np.ndarray:
    """Clip HU to the window and map it affinely onto [out_min, out_max]."""
    x = v.voxels if isinstance(v, Volume) else np.asarray(v, dtype=np.float64)
    x = np.clip(x, spec.hu_min, spec.hu_max)
    return (x - spec.hu_min) / (spec.hu_max - spec.hu_min) * (spec.out_max - spec.out_min) + spec.out_min


def denormalize(pixels, spec: NormalizationSpec = DEFAULT_SPEC) -> np.ndarray:
    y = np.clip(np.asarray(pixels, dtype=np.float64), spec.out_min, spec.out_max)
    return (y - spec.out_min) / (spec.out_max - spec.out_min) * (spec.hu_max - spec.hu_min) + spec.hu_min


def extract_axial_slices(v: Volume, spec: NormalizationSpec = DEFAULT_SPEC, domain: str = "",
                         size: int = SLICE_SIZE) -> list[TrainingSlice]:
    h, w = v.voxels.shape[:2]
    if (h, w) != (size, size):
        raise ShapeError(
            f"{v.source_path or 'volume'}: in-plane shape {h}x{w} != {size}x{size}; "
            f"resample the volume to {size}x{size} before use")
    norm = clip_and_normalize(v, spec).astype(np.float32)
    return [TrainingSlice(np.ascontiguousarray(norm[:, :, k]), domain) for k in range(norm.shape[2])]


def draw_augmentation(rng: np.random.Generator, load_size: int = LOAD_SIZE, crop_size: int = SLICE_SIZE):
    """Random (top, left, flip) triple; draw order is part of the determinism contract."""
    top, left = (int(i) for i in rng.integers(0, load_size - crop_size + 1, size=2))
    flip = bool(rng.random() < 0.5)
    return top, left, flip


def resize_bilinear(pixels: np.ndarray, size: int) -> np.ndarray:
    t = torch.from_numpy(np.ascontiguousarray(pixels, dtype=np.float32))[None, None]
    return F.interpolate(t, size=(size, size), mode="bilinear", align_corners=False)[0, 0].numpy()


def augment_for_training(pixels: np.ndarray, rng: np.random.Generator, domain: str = "",
                         load_size: int = LOAD_SIZE, crop_size: int = SLICE_SIZE,
                         spec: NormalizationSpec = DEFAULT_SPEC) -> TrainingSlice:
    """Resize to ``load_size``, random ``crop_size`` crop, random horizontal flip."""
    pixels = np.asarray(pixels)
    if pixels.shape != (crop_size, crop_size):
        raise ShapeError(f"augmentation expects a {crop_size}x{crop_size} slice, got {pixels.shape}")
    top, left, flip = draw_augmentation(rng, load_size, crop_size)
    big = resize_bilinear(pixels, load_size)
    out = big[top:top + crop_size, left:left + crop_size]
    if flip:
        out = out[:, ::-1]
    out = np.clip(out, spec.out_min, spec.out_max)
    return TrainingSlice(np.ascontiguousarray(out, dtype=np.float32), domain)


def load_size_for(crop_size: int) -> int:
    """Training load size for a crop size, keeping the 572/512 ratio."""
    return int(round(crop_size * LOAD_SIZE / SLICE_SIZE))
