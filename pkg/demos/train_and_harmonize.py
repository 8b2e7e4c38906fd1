"""
Train a small multipath model and harmonize to B30f
===================================================

Trains all 12 paths at once on a phantom set, then maps held-out
B50f-style slices to the B30f style. The default settings finish in a
few minutes on a laptop CPU but are only a smoke run: six epochs are not
enough to remove the B50f noise texture. Set ``FULL=1`` for the 30-epoch,
128 x 128, depth-6 run used by the acceptance suite (about 25 minutes),
which brings the tissue high-pass energy close to the B30f level.
"""

import os
import tempfile

import numpy as np

from kernel_harmony.checkpoint import load_checkpoint
from kernel_harmony.domains import TranslationPath
from kernel_harmony.networks import ArchConfig, translate_many
from kernel_harmony.phantom import PhantomConfig, build_phantom_dataset, high_pass_energy
from kernel_harmony.quantify import emphysema_score
from kernel_harmony.trainer import TrainConfig, train
from kernel_harmony.volume_io import clip_and_normalize, denormalize

full = os.environ.get("FULL") == "1"
size, depth, epochs = (128, 6, 30) if full else (64, 5, 6)

# training set: 10 subjects x 8 slices per domain, unpaired across domains
ds = build_phantom_dataset(PhantomConfig(size=size, seed=0))
data = {d: clip_and_normalize(v).astype(np.float32) for d, v in ds.images.items()}

arch = ArchConfig(image_size=size, depth=depth, base_channels=16, max_channels=128, disc_channels=16)
cfg = TrainConfig(epochs_total=epochs, epochs_constant=epochs // 2, batch_size=1, seed=0,
                  checkpoint_every=epochs)
out_dir = tempfile.mkdtemp(prefix="kh_demo_")
ckpt = train(cfg, data, out_dir, arch=arch)
print("checkpoint:", ckpt)

# held-out subjects from a different seed
test = build_phantom_dataset(PhantomConfig(size=size, seed=10_000, subjects_per_domain=3, slices_per_subject=4))
bundle = load_checkpoint(ckpt).bundle
path = TranslationPath("siemens_b50f", "siemens_b30f")
src = test.images[path.source]
harm = denormalize(translate_many(bundle, path, clip_and_normalize(src)).numpy())

energy = lambda imgs, masks: np.mean([high_pass_energy(i, m) for i, m in zip(imgs, masks)])
tissue = test.tissue_masks[path.source]
print(f"tissue high-pass energy: B30f {energy(test.images['siemens_b30f'], test.tissue_masks['siemens_b30f']):.1f}"
      f" | B50f {energy(src, tissue):.1f} | B50f->B30f {energy(harm, tissue):.1f}")

truth = 100 * np.array([r["true_fraction"] for r in test.domain_records(path.source)])
lungs = test.lung_masks[path.source]
raw = np.array([emphysema_score(i, m) for i, m in zip(src, lungs)])
new = np.array([emphysema_score(i, m) for i, m in zip(harm, lungs)])
print(f"mean |score - truth|: B50f {np.abs(raw - truth).mean():.2f} pp, harmonized {np.abs(new - truth).mean():.2f} pp")
