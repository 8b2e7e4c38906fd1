"""Emphysema scoring (LAA-950) and lung masks."""
from __future__ import annotations

import csv
import enum
import logging
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Sequence

import nibabel as nib
import numpy as np
from scipy import ndimage

from .errors import ConfigurationError, HarmonyError, IngestionError, ScoringError
from .volume_io import Volume, load_volume

log = logging.getLogger(__name__)

EMPHYSEMA_THRESHOLD_HU = -950.0
SURROGATE_THRESHOLD_HU = -320.0


class MaskProvenance(str, enum.Enum):
    EXTERNAL = "EXTERNAL"
    SURROGATE = "SURROGATE"


@dataclass
class LungMask:
    voxels: np.ndarray
    provenance: MaskProvenance = MaskProvenance.EXTERNAL


def emphysema_score(v, mask, threshold: float = EMPHYSEMA_THRESHOLD_HU) -> float:
    """Percent of masked voxels strictly below ``threshold`` HU."""
    hu = v.voxels if isinstance(v, Volume) else np.asarray(v)
    m = mask.voxels if isinstance(mask, LungMask) else np.asarray(mask)
    if hu.shape != m.shape:
        raise ScoringError(f"volume shape {hu.shape} != mask shape {m.shape}")
    m = m.astype(bool)
    n = int(np.count_nonzero(m))
    if n == 0:
        raise ScoringError("lung mask is empty")
    return 100.0 * int(np.count_nonzero(hu[m] < threshold)) / n


def surrogate_lung_mask(v) -> LungMask:
    """Threshold-and-components lung mask, for demos and tests only.

    Voxels below -320 HU are labelled in 3-D; components touching the
    in-plane image border (outside air) are discarded; the two largest
    remaining components are kept and holes are filled slice by slice.
    """
    hu = v.voxels if isinstance(v, Volume) else np.asarray(v)
    if hu.ndim == 2:
        hu = hu[:, :, None]
    labels, n = ndimage.label(hu < SURROGATE_THRESHOLD_HU)
    if n:
        border = np.unique(np.concatenate([labels[0].ravel(), labels[-1].ravel(),
                                           labels[:, 0].ravel(), labels[:, -1].ravel()]))
        sizes = np.bincount(labels.ravel(), minlength=n + 1)
        sizes[0] = 0
        sizes[border] = 0
        keep = [i for i in np.argsort(-sizes, kind="stable")[:2] if sizes[i] > 0]
    else:
        keep = []
    if not keep:
        raise ScoringError("surrogate lung mask found no interior low-density component")
    mask = np.isin(labels, keep)
    for k in range(mask.shape[2]):
        mask[:, :, k] = ndimage.binary_fill_holes(mask[:, :, k])
    return LungMask(mask, MaskProvenance.SURROGATE)


def dice(a, b) -> float:
    a, b = np.asarray(a, bool), np.asarray(b, bool)
    denom = a.sum() + b.sum()
    return 1.0 if denom == 0 else 2.0 * float(np.logical_and(a, b).sum()) / float(denom)


def load_mask(path, like: Volume | None = None) -> LungMask:
    path = Path(path)
    if not path.exists():
        raise IngestionError(f"{path}: no such file")
    try:
        data = np.asarray(nib.load(str(path)).dataobj)
    except Exception as exc:
        raise IngestionError(f"{path}: cannot read mask ({exc})") from exc
    if data.ndim == 4 and data.shape[3] == 1:
        data = data[..., 0]
    if like is not None and data.shape != like.shape:
        raise ScoringError(f"{path}: mask shape {data.shape} != volume shape {like.shape}")
    return LungMask(data > 0, MaskProvenance.EXTERNAL)


@dataclass
class EmphysemaRecord:
    subject_id: str
    score: float
    kernel: str
    age: float
    sex: int
    smoking: int
    vendor: int
    mask_provenance: str = MaskProvenance.EXTERNAL.value

    def __post_init__(self):
        if not 0.0 <= self.score <= 100.0:
            raise ScoringError(f"{self.subject_id}: score {self.score} outside [0, 100]")


RECORD_COLUMNS = [f.name for f in fields(EmphysemaRecord)]


@dataclass
class CohortEntry:
    subject_id: str
    volume_path: str
    mask_path: str | None
    kernel: str
    age: float
    sex: int
    smoking: int
    vendor: int


def read_cohort_manifest(path) -> list[CohortEntry]:
    entries = []
    with open(path, newline="") as fh:
        for i, row in enumerate(csv.DictReader(fh)):
            try:
                entries.append(CohortEntry(
                    subject_id=row["subject_id"], volume_path=row["volume_path"],
                    mask_path=row.get("mask_path") or None, kernel=row["kernel"],
                    age=float(row["age"]), sex=int(row["sex"]), smoking=int(row["smoking"]),
                    vendor=int(row["vendor"])))
            except KeyError as exc:
                raise ConfigurationError(f"{path}: row {i + 1} lacks column {exc.args[0]!r}",
                                         key=exc.args[0]) from None
            except ValueError as exc:
                raise ConfigurationError(f"{path}: row {i + 1}: {exc}", key="covariates") from None
    return entries


def score_cohort(entries: Sequence[CohortEntry], allow_surrogate: bool = False):
    """Score every entry; returns ``(records, failures)``.

    An entry without ``mask_path`` uses the surrogate mask only when
    ``allow_surrogate`` is set; otherwise it fails. Failures are collected
    as ``(subject_id, message)`` and never abort the cohort.
    """
    records, failures = [], []
    for e in entries:
        try:
            vol = load_volume(e.volume_path)
            if e.mask_path:
                mask = load_mask(e.mask_path, like=vol)
            elif allow_surrogate:
                mask = surrogate_lung_mask(vol)
            else:
                raise ScoringError("no mask_path given and surrogate masks are not allowed")
            score = emphysema_score(vol, mask)
            records.append(EmphysemaRecord(e.subject_id, score, e.kernel, e.age, e.sex, e.smoking, e.vendor,
                                           mask.provenance.value))
        except (HarmonyError, OSError) as exc:
            log.warning("scoring %s failed: %s", e.subject_id, exc)
            failures.append((e.subject_id, f"{type(exc).__name__}: {exc}"))
    return records, failures


def write_records(records: Sequence[EmphysemaRecord], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=RECORD_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for r in records:
            writer.writerow(asdict(r))
    return path


def read_records(path) -> list[EmphysemaRecord]:
    path = Path(path)
    if not path.exists():
        raise IngestionError(f"{path}: no such file")
    out = []
    with open(path, newline="") as fh:
        for i, row in enumerate(csv.DictReader(fh)):
            try:
                out.append(EmphysemaRecord(row["subject_id"], float(row["score"]), row["kernel"],
                                           float(row["age"]), int(row["sex"]), int(row["smoking"]),
                                           int(row["vendor"]),
                                           row.get("mask_provenance") or MaskProvenance.EXTERNAL.value))
            except (KeyError, ValueError) as exc:
                raise ConfigurationError(f"{path}: row {i + 1}: bad or missing field {exc}", key="records") from None
    return out
