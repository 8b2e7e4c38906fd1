import json

import numpy as np
import pytest

from kernel_harmony.checkpoint import Checkpoint, checkpoint_hash, save_checkpoint
from kernel_harmony.domains import DomainRegistry, TranslationPath
from kernel_harmony.errors import CheckpointError, ShapeError
from kernel_harmony.harmonizer import (ManifestEntry, batch_harmonize, harmonize_volume, output_name,
                                       read_harmonize_manifest)
from kernel_harmony.networks import ArchConfig, ModelBundle
from kernel_harmony.volume_io import HU_MAX, HU_MIN, Volume, load_volume, save_volume

from conftest import TINY_ARCH

PATH = TranslationPath("siemens_b50f", "siemens_b30f")


def random_volume(shape=(16, 16, 5), seed=0):
    rng = np.random.default_rng(seed)
    affine = np.diag([0.7, 0.7, 1.25, 1.0])
    affine[:3, 3] = [-100.0, 20.0, 5.0]
    return Volume(rng.uniform(-1100, 3200, shape), spacing=(0.7, 0.7, 1.25), affine=affine)


@pytest.fixture(scope="module")
def ckpt(tmp_path_factory, registry):
    path = tmp_path_factory.mktemp("ck") / "model.ckpt"
    return save_checkpoint(Checkpoint(ModelBundle(registry, TINY_ARCH, seed=0), 0, 0), path)


def test_geometry_and_range(ckpt):
    v = random_volume()
    out = harmonize_volume(ckpt, v, PATH)
    assert out.shape == v.shape
    assert out.spacing == v.spacing
    np.testing.assert_array_equal(out.affine, v.affine)
    assert out.voxels.min() >= HU_MIN and out.voxels.max() <= HU_MAX


def test_deterministic_and_batch_size_invariant(ckpt, tiny_bundle):
    v = random_volume(seed=1)
    a = harmonize_volume(ckpt, v, PATH, batch_size=1)
    b = harmonize_volume(ckpt, v, PATH, batch_size=1)
    c = harmonize_volume(ckpt, v, PATH, batch_size=4)
    np.testing.assert_array_equal(a.voxels, b.voxels)
    np.testing.assert_allclose(a.voxels, c.voxels, atol=1e-2)


def test_slice_independence(tiny_bundle):
    v = random_volume(seed=2)
    whole = harmonize_volume(tiny_bundle, v, PATH).voxels
    single = harmonize_volume(tiny_bundle, Volume(v.voxels[:, :, 3:4]), PATH).voxels
    np.testing.assert_allclose(whole[:, :, 3:4], single, atol=1e-2)


def test_paper_size_volume(registry):
    # full-depth U-Net on 512x512 slices; narrow channels keep the test fast
    arch = ArchConfig(base_channels=2, max_channels=4, disc_channels=2)
    bundle = ModelBundle(DomainRegistry([registry["siemens_b50f"], registry["siemens_b30f"]]), arch, seed=0)
    v = Volume(np.random.default_rng(0).uniform(-1024, 500, (512, 512, 3)))
    out = harmonize_volume(bundle, v, PATH, batch_size=2)
    assert out.shape == (512, 512, 3)
    assert out.voxels.min() >= HU_MIN and out.voxels.max() <= HU_MAX


def test_domain_and_shape_errors(ckpt, registry):
    small = DomainRegistry([registry["ge_std"], registry["ge_bone"]])
    bundle = ModelBundle(small, TINY_ARCH, seed=0)
    with pytest.raises(CheckpointError, match="siemens_b50f"):
        harmonize_volume(bundle, random_volume(), PATH)
    with pytest.raises(ShapeError):
        harmonize_volume(ckpt, random_volume((32, 32, 2)), PATH)
    with pytest.raises(CheckpointError):
        harmonize_volume("/nonexistent/model.ckpt", random_volume(), PATH)


def test_output_name():
    assert output_name("/a/b/scan01.nii.gz", PATH) == "scan01_siemens_b50f-to-siemens_b30f.nii.gz"
    assert output_name("scan.nii", PATH.reversed()) == "scan_siemens_b30f-to-siemens_b50f.nii.gz"


def test_batch_isolates_failures(tmp_path, ckpt):
    entries = []
    for i in range(3):
        p = save_volume(random_volume(seed=i), tmp_path / f"in{i}.nii.gz")
        entries.append(ManifestEntry(str(p), PATH))
    entries.append(ManifestEntry(str(tmp_path / "missing.nii.gz"), PATH))
    report = batch_harmonize(ckpt, entries, tmp_path / "out")
    assert len(report.successes) == 3 and len(report.failures) == 1
    assert "missing.nii.gz" in report.failures[0]["input"]
    out = load_volume(report.successes[0]["output"])
    assert out.shape == (16, 16, 5)
    sidecar = json.loads((tmp_path / "out" / "in0_siemens_b50f-to-siemens_b30f.json").read_text())
    assert sidecar["source_kernel"] == "siemens_b50f" and sidecar["target_kernel"] == "siemens_b30f"
    assert sidecar["checkpoint_sha256"] == checkpoint_hash(ckpt)


def test_empty_manifest(tmp_path, ckpt):
    report = batch_harmonize(ckpt, [], tmp_path)
    assert report.successes == [] and report.failures == []


def test_read_manifest(tmp_path):
    m = tmp_path / "m.csv"
    m.write_text("volume_path,source_domain,target_domain\n"
                 + "".join(f"v{i}.nii.gz,ge_bone,siemens_b30f\n" for i in range(50)))
    entries = read_harmonize_manifest(m)
    assert len(entries) == 50
    assert entries[0].path == TranslationPath("ge_bone", "siemens_b30f")
    bad = tmp_path / "bad.csv"
    bad.write_text("volume_path,source_domain\nv.nii.gz,ge_bone\n")
    with pytest.raises(Exception, match="target_domain"):
        read_harmonize_manifest(bad)
