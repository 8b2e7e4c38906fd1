import numpy as np
import pytest
import torch

from kernel_harmony.domains import DomainRegistry, default_registry
from kernel_harmony.networks import ArchConfig, ModelBundle

_ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in _ACCEPTANCE:
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")


@pytest.fixture
def record_criterion():
    def record(name, ok, detail=""):
        _ACCEPTANCE.append((name, bool(ok), detail))
        print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
        return ok
    return record


@pytest.fixture(scope="session")
def registry() -> DomainRegistry:
    return default_registry()


TINY_ARCH = ArchConfig(image_size=16, depth=3, base_channels=4, max_channels=16, disc_channels=4, disc_layers=2)
GRAD_ARCH = ArchConfig(image_size=8, depth=2, base_channels=3, max_channels=6, disc_channels=3, disc_layers=1)


@pytest.fixture
def tiny_arch():
    return TINY_ARCH


@pytest.fixture
def tiny_bundle(registry):
    return ModelBundle(registry, TINY_ARCH, seed=0)


def random_batches(registry, n, size, seed=0, dtype=torch.float32):
    g = torch.Generator().manual_seed(seed)
    return {d: (torch.rand(n, 1, size, size, generator=g, dtype=torch.float64) * 2 - 1).to(dtype)
            for d in registry.ids}


def random_datasets(registry, n, size, seed=0):
    rng = np.random.default_rng(seed)
    return {d: rng.uniform(-1, 1, size=(n + i, size, size)).astype(np.float32)
            for i, d in enumerate(registry.ids)}
