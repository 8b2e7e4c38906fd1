"""Desk-scale phantom harmonization experiment shared by the acceptance suite.

Train the four-domain model on a phantom set, then harmonize held-out
hard-style slices to the reference soft style and compare noise energy and
LAA-950 error against the unharmonized input.
"""
import time
from dataclasses import dataclass, field

import numpy as np

from kernel_harmony.checkpoint import load_checkpoint
from kernel_harmony.domains import REFERENCE_DOMAIN, TranslationPath, default_registry
from kernel_harmony.networks import ArchConfig, translate_many
from kernel_harmony.phantom import PhantomConfig, build_phantom_dataset, high_pass_energy
from kernel_harmony.quantify import emphysema_score
from kernel_harmony.trainer import TrainConfig, train
from kernel_harmony.volume_io import clip_and_normalize, denormalize

HARD_SOURCES = ("siemens_b50f", "ge_bone")
ARCH = ArchConfig(image_size=128, depth=6, base_channels=16, max_channels=128, disc_channels=16)
EPOCHS = 30
BATCH = 1
TEST_SEED_OFFSET = 10_000


@dataclass
class PathResult:
    source: str
    energy_target: float
    energy_source: float
    energy_harmonized: float
    err_unharmonized: float
    err_harmonized: float

    @property
    def gap_reduction(self) -> float:
        return 1.0 - abs(self.energy_harmonized - self.energy_target) / abs(self.energy_source - self.energy_target)

    @property
    def ok(self) -> bool:
        return self.gap_reduction >= 0.5 and self.err_harmonized < self.err_unharmonized

    def summary(self) -> str:
        return (f"{self.source}: gap reduction {self.gap_reduction:.2f}, "
                f"|score-truth| {self.err_unharmonized:.2f} -> {self.err_harmonized:.2f} pp")


@dataclass
class SeedResult:
    seed: int
    seconds: float
    checkpoint: object
    paths: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(p.ok for p in self.paths)


def train_phantom_model(seed, out_dir):
    ds = build_phantom_dataset(PhantomConfig(seed=seed))
    data = {d: clip_and_normalize(v).astype(np.float32) for d, v in ds.images.items()}
    cfg = TrainConfig(epochs_total=EPOCHS, epochs_constant=EPOCHS // 2, batch_size=BATCH, seed=seed,
                      checkpoint_every=EPOCHS)
    return train(cfg, data, out_dir, default_registry(), ARCH)


def _mean_energy(images, masks):
    return float(np.mean([high_pass_energy(i, m) for i, m in zip(images, masks)]))


def harmonize_slices(bundle, source, images, target=REFERENCE_DOMAIN):
    out = translate_many(bundle, TranslationPath(source, target), clip_and_normalize(images), batch_size=8)
    return denormalize(out.numpy())


def evaluate(checkpoint, seed) -> list:
    bundle = load_checkpoint(checkpoint).bundle
    test = build_phantom_dataset(PhantomConfig(seed=TEST_SEED_OFFSET + seed, subjects_per_domain=4,
                                               slices_per_subject=4))
    e_target = _mean_energy(test.images[REFERENCE_DOMAIN], test.tissue_masks[REFERENCE_DOMAIN])
    results = []
    for src in HARD_SOURCES:
        imgs, lungs, tissue = test.images[src], test.lung_masks[src], test.tissue_masks[src]
        harm = harmonize_slices(bundle, src, imgs)
        truth = 100 * np.array([r["true_fraction"] for r in test.domain_records(src)])
        raw = np.array([emphysema_score(i, m) for i, m in zip(imgs, lungs)])
        new = np.array([emphysema_score(i, m) for i, m in zip(harm, lungs)])
        results.append(PathResult(src, e_target, _mean_energy(imgs, tissue), _mean_energy(harm, tissue),
                                  float(np.abs(raw - truth).mean()), float(np.abs(new - truth).mean())))
    return results


def run_seed(seed, out_dir) -> SeedResult:
    t0 = time.perf_counter()
    ckpt = train_phantom_model(seed, out_dir)
    res = SeedResult(seed, time.perf_counter() - t0, ckpt)
    res.paths = evaluate(ckpt, seed)
    return res
