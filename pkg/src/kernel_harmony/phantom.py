"""Synthetic chest-like slices rendered in four kernel "styles".

Stand-in for access-restricted scanner data. A base image has an elliptical
soft-tissue body, two lung ellipses of parenchyma just above -950 HU, and
low-density pockets well below -950 HU covering a controlled fraction of the
lung. Styles emulate reconstruction kernels: soft kernels blur and carry
little noise, hard kernels sharpen and carry strong noise; vendors differ in
noise grain (correlation length).

Geometry and covariate distributions are fixed module constants so that
everything derived from a seed is reproducible.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np
from scipy import ndimage

from .domains import DomainRegistry, Vendor, default_registry
from .errors import ConfigurationError
from .volume_io import HU_MAX, HU_MIN, Volume, save_volume

MIN_SIZE = 32

BACKGROUND_HU = HU_MIN
TISSUE_HU, TISSUE_TEXTURE_HU = 40.0, 20.0
PARENCHYMA_HU, PARENCHYMA_TEXTURE_HU = -880.0, 12.0
PARENCHYMA_RANGE = (-925.0, -840.0)
POCKET_HU, POCKET_TEXTURE_HU = -1000.0, 8.0
POCKET_RANGE = (-1020.0, -965.0)
POCKET_CORRELATION = 1 / 40           # pocket field smoothing, fraction of image size
VESSEL_HU = 20.0
N_VESSELS = 6

BODY_SEMI_AXES = (0.40, 0.46)       # (rows, cols) as fractions of image size
LUNG_SEMI_AXES = (0.28, 0.14)
LUNG_OFFSET = 0.20                  # lung centre distance from midline, fraction of width
GEOMETRY_JITTER = 0.04

AGE_RANGE = (55, 74)                # integer years, uniform
P_MALE = 0.5
P_CURRENT_SMOKER = 0.5
FRACTION_RANGE = (0.02, 0.20)


@dataclass(frozen=True)
class StyleParams:
    blur_sigma: float = 0.0
    sharpen_amount: float = 0.0
    noise_sigma: float = 0.0
    grain_sigma: float = 0.0

    def __post_init__(self):
        for name in ("blur_sigma", "sharpen_amount", "noise_sigma", "grain_sigma"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be nonnegative", key=f"style.{name}")


DEFAULT_STYLES = {
    "siemens_b50f": StyleParams(blur_sigma=0.0, sharpen_amount=1.0, noise_sigma=45.0, grain_sigma=0.6),
    "siemens_b30f": StyleParams(blur_sigma=1.0, sharpen_amount=0.0, noise_sigma=8.0, grain_sigma=0.6),
    "ge_bone": StyleParams(blur_sigma=0.0, sharpen_amount=0.8, noise_sigma=40.0, grain_sigma=1.0),
    "ge_std": StyleParams(blur_sigma=0.8, sharpen_amount=0.0, noise_sigma=12.0, grain_sigma=1.0),
}


@dataclass
class BaseSlice:
    image: np.ndarray
    lung_mask: np.ndarray
    tissue_mask: np.ndarray
    true_fraction: float


def _size2(size):
    h, w = (size, size) if np.isscalar(size) else tuple(size)
    if min(h, w) < MIN_SIZE:
        raise ConfigurationError(f"phantom size must be >= {MIN_SIZE}, got {(h, w)}", key="size")
    return int(h), int(w)


def _smooth_field(rng, shape, sigma):
    f = ndimage.gaussian_filter(rng.standard_normal(shape), sigma, mode="wrap")
    return (f - f.mean()) / (f.std() + 1e-12)


def _ellipse(rr, cc, center, semi):
    return ((rr - center[0]) / semi[0]) ** 2 + ((cc - center[1]) / semi[1]) ** 2 <= 1.0


def generate_base(seed, size=128, fraction: float = 0.1) -> BaseSlice:
    """Render one unstyled HU phantom slice.

    Exactly ``round(fraction * n_lung)`` lung voxels are pockets below
    -950 HU; every other lung voxel stays above it.
    """
    h, w = _size2(size)
    if not 0.0 <= fraction <= 1.0:
        raise ConfigurationError("fraction must lie in [0, 1]", key="fraction")
    rng = np.random.default_rng(seed)
    rr, cc = np.mgrid[0:h, 0:w].astype(np.float64)
    jit = lambda: 1.0 + GEOMETRY_JITTER * rng.uniform(-1, 1)
    scale = min(h, w)

    body = _ellipse(rr, cc, (h / 2, w / 2), (BODY_SEMI_AXES[0] * h * jit(), BODY_SEMI_AXES[1] * w * jit()))
    lungs = np.zeros((h, w), bool)
    for side in (-1, 1):
        center = (h / 2 + 0.02 * h * rng.uniform(-1, 1), w / 2 + side * LUNG_OFFSET * w * jit())
        lungs |= _ellipse(rr, cc, center, (LUNG_SEMI_AXES[0] * h * jit(), LUNG_SEMI_AXES[1] * w * jit()))
    lungs &= body

    img = np.full((h, w), BACKGROUND_HU)
    img[body] = TISSUE_HU + TISSUE_TEXTURE_HU * _smooth_field(rng, (h, w), scale / 32)[body]
    paren = PARENCHYMA_HU + PARENCHYMA_TEXTURE_HU * _smooth_field(rng, (h, w), scale / 64)
    img[lungs] = np.clip(paren, *PARENCHYMA_RANGE)[lungs]

    # vessels: small soft-tissue disks inside the lungs
    lung_idx = np.flatnonzero(lungs.ravel())
    for k in rng.choice(lung_idx, size=min(N_VESSELS, lung_idx.size), replace=False):
        r0, c0 = divmod(int(k), w)
        disk = (rr - r0) ** 2 + (cc - c0) ** 2 <= (scale / 100 + rng.uniform(0, scale / 100)) ** 2
        img[disk & lungs] = VESSEL_HU

    # pockets: the highest-valued lung voxels of a smooth field, excluding vessels
    candidates = lungs & (img < PARENCHYMA_RANGE[1] + 1)
    n_lung = int(lungs.sum())
    k = int(round(fraction * n_lung))
    k = min(k, int(candidates.sum()))
    if k > 0:
        field_ = _smooth_field(rng, (h, w), scale * POCKET_CORRELATION)
        cand_idx = np.flatnonzero(candidates.ravel())
        chosen = cand_idx[np.argsort(-field_.ravel()[cand_idx], kind="stable")[:k]]
        texture = POCKET_HU + POCKET_TEXTURE_HU * _smooth_field(rng, (h, w), scale / 64).ravel()[chosen]
        img.ravel()[chosen] = np.clip(texture, *POCKET_RANGE)

    tissue = ndimage.binary_erosion(body & ~ndimage.binary_dilation(lungs, iterations=3), iterations=3)
    return BaseSlice(img, lungs, tissue, k / n_lung if n_lung else 0.0)


def _noise_gain(grain_sigma: float) -> float:
    """L2 norm of the discrete Gaussian filter, i.e. std of filtered unit white noise."""
    if grain_sigma <= 0:
        return 1.0
    n = int(8 * grain_sigma) * 2 + 1
    delta = np.zeros((n, n))
    delta[n // 2, n // 2] = 1.0
    return float(np.sqrt((ndimage.gaussian_filter(delta, grain_sigma) ** 2).sum()))


def apply_style(base: np.ndarray, p: StyleParams, rng: np.random.Generator) -> np.ndarray:
    """Blur, unsharp-mask, add correlated Gaussian noise, clip to the HU window."""
    x = np.asarray(base, dtype=np.float64).copy()
    if p.blur_sigma > 0:
        x = ndimage.gaussian_filter(x, p.blur_sigma, mode="nearest")
    if p.sharpen_amount > 0:
        x = x + p.sharpen_amount * (x - ndimage.gaussian_filter(x, 1.0, mode="nearest"))
    if p.noise_sigma > 0:
        noise = rng.standard_normal(x.shape)
        if p.grain_sigma > 0:
            noise = ndimage.gaussian_filter(noise, p.grain_sigma, mode="wrap") / _noise_gain(p.grain_sigma)
        x = x + p.noise_sigma * noise
        return np.clip(x, HU_MIN, HU_MAX)
    if p.blur_sigma > 0 or p.sharpen_amount > 0:
        return np.clip(x, HU_MIN, HU_MAX)
    return x


_LAPLACIAN = np.array([[0, 1, 0], [1, -4, 1], [0, 1, 0]], dtype=np.float64)


def high_pass_energy(image: np.ndarray, mask: np.ndarray | None = None) -> float:
    """Mean |3x3 Laplacian| over ``mask`` (whole image if None)."""
    r = np.abs(ndimage.convolve(np.asarray(image, dtype=np.float64), _LAPLACIAN, mode="nearest"))
    return float(r[mask].mean() if mask is not None else r.mean())


@dataclass
class PhantomConfig:
    styles: Mapping[str, StyleParams] = field(default_factory=lambda: dict(DEFAULT_STYLES))
    subjects_per_domain: int = 10
    slices_per_subject: int = 8
    size: int = 128
    seed: int = 0
    fraction_range: tuple = FRACTION_RANGE
    registry: DomainRegistry = field(default_factory=default_registry)

    def validate(self):
        missing = [d for d in self.registry.ids if d not in self.styles]
        if missing:
            raise ConfigurationError(f"no style for domain(s) {missing}", key="styles")
        if self.subjects_per_domain < 1:
            raise ConfigurationError("subjects_per_domain must be >= 1", key="subjects_per_domain")
        if self.slices_per_subject < 1:
            raise ConfigurationError("slices_per_subject must be >= 1", key="slices_per_subject")
        lo, hi = self.fraction_range
        if not 0 <= lo <= hi <= 1:
            raise ConfigurationError("fraction_range must satisfy 0 <= lo <= hi <= 1", key="fraction_range")
        _size2(self.size)


MANIFEST_COLUMNS = ["subject_id", "domain", "age", "sex", "smoking", "vendor", "true_fraction", "slice"]


@dataclass
class PhantomDataset:
    """Styled slices per domain plus ground truth.

    ``images``, ``bases``, ``lung_masks`` and ``tissue_masks`` map domain id
    to ``(N, H, W)`` arrays whose rows line up with ``records`` filtered to
    that domain (in order).
    """
    images: dict
    bases: dict
    lung_masks: dict
    tissue_masks: dict
    records: list
    config: PhantomConfig

    def domain_records(self, domain: str) -> list:
        return [r for r in self.records if r["domain"] == domain]

    def subjects(self, domain: str) -> list[str]:
        return list(dict.fromkeys(r["subject_id"] for r in self.domain_records(domain)))

    def manifest_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=MANIFEST_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for r in self.records:
            writer.writerow({**r, "true_fraction": f"{r['true_fraction']:.8f}"})
        return buf.getvalue()


def build_phantom_dataset(config: PhantomConfig) -> PhantomDataset:
    config.validate()
    h, w = _size2(config.size)
    root = np.random.SeedSequence(config.seed)
    domain_seqs = root.spawn(len(config.registry))
    images, bases, lungs, tissue, records = {}, {}, {}, {}, []
    for dom, seq in zip(config.registry, domain_seqs):
        subj_seqs = seq.spawn(config.subjects_per_domain)
        imgs, bs, ls, ts = [], [], [], []
        for s_idx, sseq in enumerate(subj_seqs):
            cov_seq, *slice_seqs = sseq.spawn(1 + config.slices_per_subject)
            crng = np.random.default_rng(cov_seq)
            subject = {
                "subject_id": f"{dom.id}_{s_idx:03d}",
                "domain": dom.id,
                "age": int(crng.integers(AGE_RANGE[0], AGE_RANGE[1] + 1)),
                "sex": int(crng.random() < P_MALE),
                "smoking": int(crng.random() < P_CURRENT_SMOKER),
                "vendor": 0 if dom.vendor is Vendor.SIEMENS else 1,
            }
            fraction = float(crng.uniform(*config.fraction_range))
            for k, slseq in enumerate(slice_seqs):
                base_seed, style_seed = slseq.spawn(2)
                base = generate_base(base_seed, (h, w), fraction)
                styled = apply_style(base.image, config.styles[dom.id], np.random.default_rng(style_seed))
                imgs.append(styled)
                bs.append(base.image)
                ls.append(base.lung_mask)
                ts.append(base.tissue_mask)
                records.append({**subject, "true_fraction": base.true_fraction, "slice": k})
        images[dom.id] = np.stack(imgs).astype(np.float32)
        bases[dom.id] = np.stack(bs).astype(np.float32)
        lungs[dom.id] = np.stack(ls)
        tissue[dom.id] = np.stack(ts)
    return PhantomDataset(images, bases, lungs, tissue, records, config)


def subject_volumes(ds: PhantomDataset, domain: str, spacing=(0.7, 0.7, 1.0)):
    """Yield (subject record, image Volume, lung-mask array) per subject, slices stacked axially."""
    recs = ds.domain_records(domain)
    n = ds.config.slices_per_subject
    for i in range(0, len(recs), n):
        affine = np.diag([*spacing, 1.0])
        vol = Volume(np.moveaxis(ds.images[domain][i:i + n], 0, -1).astype(np.float64), tuple(spacing), affine)
        mask = np.moveaxis(ds.lung_masks[domain][i:i + n], 0, -1)
        yield recs[i], vol, mask


def write_phantom_dataset(ds: PhantomDataset, out_dir) -> dict:
    """Write per-subject NIfTI volumes and masks plus CSV manifests.

    Returns paths of ``manifest.csv`` (per slice), ``train_manifest.csv``
    (volume_path, domain) and ``cohort.csv`` (emphysema scoring input).
    """
    out = Path(out_dir)
    (out / "volumes").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    (out / "manifest.csv").write_text(ds.manifest_csv())
    train_rows, cohort_rows = [], []
    for dom in ds.config.registry.ids:
        for rec, vol, mask in subject_volumes(ds, dom):
            sid = rec["subject_id"]
            vpath = save_volume(vol, out / "volumes" / f"{sid}.nii.gz")
            mpath = out / "masks" / f"{sid}_lung.nii.gz"
            save_mask(mask, vol, mpath)
            train_rows.append({"volume_path": str(vpath), "domain": dom})
            cohort_rows.append({"subject_id": sid, "volume_path": str(vpath), "mask_path": str(mpath),
                                "kernel": dom, **{k: rec[k] for k in ("age", "sex", "smoking", "vendor")}})
    paths = {"manifest": out / "manifest.csv", "train_manifest": out / "train_manifest.csv",
             "cohort": out / "cohort.csv"}
    _write_csv(paths["train_manifest"], ["volume_path", "domain"], train_rows)
    _write_csv(paths["cohort"], ["subject_id", "volume_path", "mask_path", "kernel", "age", "sex", "smoking",
                                 "vendor"], cohort_rows)
    return paths


def save_mask(mask: np.ndarray, like: Volume, path):
    import nibabel as nib
    img = nib.Nifti1Image(np.asarray(mask, dtype=np.uint8), like.affine)
    img.header.set_zooms(tuple(like.spacing)[:3])
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    nib.save(img, str(path))


def _write_csv(path, columns, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
