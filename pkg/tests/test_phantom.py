import csv
import hashlib

import numpy as np
import pytest

from kernel_harmony.domains import Hardness
from kernel_harmony.errors import ConfigurationError
from kernel_harmony.phantom import (DEFAULT_STYLES, PhantomConfig, StyleParams, apply_style, build_phantom_dataset,
                                    generate_base, high_pass_energy, write_phantom_dataset)
from kernel_harmony.volume_io import load_volume


def count_fraction(image, lung):
    n_low = 0
    n = 0
    for v, m in zip(image.ravel(), lung.ravel()):
        if m:
            n += 1
            n_low += v < -950
    return n_low / n


@pytest.fixture(scope="module")
def small_ds():
    return build_phantom_dataset(PhantomConfig(subjects_per_domain=3, slices_per_subject=2, size=64, seed=5))


def test_base_fraction_matches_voxel_count():
    b = generate_base(1, 128, fraction=0.10)
    measured = count_fraction(b.image, b.lung_mask)
    assert measured == pytest.approx(0.10, abs=0.01)
    assert measured == pytest.approx(b.true_fraction, abs=1e-12)


@pytest.mark.parametrize("f", [0.0, 0.03, 0.25, 0.5])
def test_base_fraction_exact_for_various_targets(f):
    b = generate_base(7, 96, fraction=f)
    assert count_fraction(b.image, b.lung_mask) == pytest.approx(f, abs=0.005)


def test_base_zero_fraction_has_no_low_lung_voxels():
    b = generate_base(3, 128, fraction=0.0)
    assert not np.any(b.image[b.lung_mask] < -950)
    assert b.true_fraction == 0.0


def test_base_deterministic_and_geometry():
    a, b = generate_base(1, 128, 0.1), generate_base(1, 128, 0.1)
    np.testing.assert_array_equal(a.image, b.image)
    assert not np.array_equal(a.image, generate_base(2, 128, 0.1).image)
    assert a.image[0, 0] == -1024
    assert a.lung_mask.sum() > 0.1 * a.image.size
    assert not (a.tissue_mask & a.lung_mask).any()
    assert np.all(a.image[a.tissue_mask] > -300)


def test_base_size_checks():
    with pytest.raises(ConfigurationError):
        generate_base(0, 16)
    assert generate_base(0, (48, 64)).image.shape == (48, 64)


def test_style_identity():
    base = generate_base(4, 64).image
    np.testing.assert_array_equal(apply_style(base, StyleParams(), np.random.default_rng(0)), base)


@pytest.mark.parametrize("grain", [0.0, 0.6, 1.5])
def test_style_noise_std(grain):
    flat = np.full((256, 256), -900.0)
    out = apply_style(flat, StyleParams(noise_sigma=50, grain_sigma=grain), np.random.default_rng(0))
    assert np.std(out[8:-8, 8:-8]) == pytest.approx(50, rel=0.10)


def test_blur_lowers_high_pass_energy():
    base = generate_base(9, 128, 0.15).image
    out = apply_style(base, StyleParams(blur_sigma=1.0), np.random.default_rng(0))
    assert high_pass_energy(out) < high_pass_energy(base)


def test_style_output_clipped():
    out = apply_style(np.full((64, 64), 3000.0), StyleParams(noise_sigma=500), np.random.default_rng(0))
    assert out.max() <= 3072 and out.min() >= -1024


def test_style_params_nonnegative():
    with pytest.raises(ConfigurationError):
        StyleParams(noise_sigma=-1)


def test_default_styles_hard_vs_soft(registry):
    for d in registry:
        p = DEFAULT_STYLES[d.id]
        if d.hardness is Hardness.HARD:
            sibling = next(s for s in registry if s.vendor == d.vendor and s.hardness is Hardness.SOFT)
            assert p.sharpen_amount > 0
            assert p.noise_sigma > DEFAULT_STYLES[sibling.id].noise_sigma


def test_dataset_counts_and_unpairedness(registry):
    ds = build_phantom_dataset(PhantomConfig(subjects_per_domain=10, slices_per_subject=8, size=32, seed=0))
    assert sum(len(v) for v in ds.images.values()) == 320
    assert len(ds.records) == 320
    digests = {}
    for d in registry.ids:
        assert ds.images[d].shape == (80, 32, 32)
        for img in ds.bases[d]:
            digests.setdefault(hashlib.sha256(img.tobytes()).hexdigest(), set()).add(d)
    assert all(len(domains) == 1 for domains in digests.values())
    assert len(digests) == 320


def test_dataset_manifest_deterministic():
    cfg = dict(subjects_per_domain=2, slices_per_subject=2, size=32, seed=3)
    a = build_phantom_dataset(PhantomConfig(**cfg)).manifest_csv().encode()
    b = build_phantom_dataset(PhantomConfig(**cfg)).manifest_csv().encode()
    assert a == b
    assert a != build_phantom_dataset(PhantomConfig(**{**cfg, "seed": 4})).manifest_csv().encode()
    header = a.decode().splitlines()[0].split(",")
    assert header[:7] == ["subject_id", "domain", "age", "sex", "smoking", "vendor", "true_fraction"]


def test_covariates_and_truth(small_ds):
    for r in small_ds.records:
        assert 55 <= r["age"] <= 74
        assert r["sex"] in (0, 1) and r["smoking"] in (0, 1)
        assert r["vendor"] == (0 if r["domain"].startswith("siemens") else 1)
    for d in small_ds.images:
        for base, lung, r in zip(small_ds.bases[d], small_ds.lung_masks[d], small_ds.domain_records(d)):
            assert count_fraction(base, lung) == pytest.approx(r["true_fraction"], abs=1e-6)
    # every slice of a subject shares covariates
    by_subject = {}
    for r in small_ds.records:
        by_subject.setdefault(r["subject_id"], set()).add((r["age"], r["sex"], r["smoking"]))
    assert all(len(v) == 1 for v in by_subject.values())


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_hard_styles_noisier_than_soft(registry, seed):
    ds = build_phantom_dataset(PhantomConfig(subjects_per_domain=2, slices_per_subject=2, size=64, seed=seed))
    energy = {d: np.mean([high_pass_energy(im) for im in ds.images[d]]) for d in ds.images}
    for d in registry:
        if d.hardness is Hardness.HARD:
            sibling = next(s for s in registry if s.vendor == d.vendor and s.hardness is Hardness.SOFT)
            assert energy[d.id] > energy[sibling.id]


def test_config_validation(registry):
    with pytest.raises(ConfigurationError):
        build_phantom_dataset(PhantomConfig(styles={"ge_std": StyleParams()}))
    with pytest.raises(ConfigurationError):
        build_phantom_dataset(PhantomConfig(subjects_per_domain=0))
    with pytest.raises(ConfigurationError):
        build_phantom_dataset(PhantomConfig(fraction_range=(0.5, 0.1)))


def test_write_dataset(tmp_path, small_ds):
    paths = write_phantom_dataset(small_ds, tmp_path)
    with open(paths["train_manifest"]) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 12
    v = load_volume(rows[0]["volume_path"])
    assert v.shape == (64, 64, 2)
    np.testing.assert_allclose(v.voxels[:, :, 1], small_ds.images[rows[0]["domain"]][1], atol=1e-3)
    with open(paths["cohort"]) as fh:
        cohort = list(csv.DictReader(fh))
    assert {"subject_id", "volume_path", "mask_path", "kernel", "age", "sex", "smoking", "vendor"} <= set(cohort[0])
    assert paths["manifest"].read_text() == small_ds.manifest_csv()
