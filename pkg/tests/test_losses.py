import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from kernel_harmony.domains import enumerate_paths
from kernel_harmony.errors import ConfigurationError, ShapeError
from kernel_harmony.losses import LossConfig, assemble_step_losses, cycle_loss, disc_loss, gen_adversarial_loss
from kernel_harmony.networks import ModelBundle

from conftest import GRAD_ARCH, random_batches
from gradcheck import fd_relative_error


def full(v, shape=(2, 1, 4, 4)):
    return torch.full(shape, float(v), dtype=torch.float64)


@pytest.mark.parametrize("score, expected", [(1.0, 0.0), (0.0, 1.0), (0.5, 0.25)])
def test_gen_adversarial_hand_values(score, expected):
    assert float(gen_adversarial_loss(full(score))) == pytest.approx(expected, abs=1e-7)


@pytest.mark.parametrize("real, fake, expected", [(1, 0, 0.0), (0, 1, 1.0), (0.5, 0.5, 0.25)])
def test_disc_hand_values(real, fake, expected):
    assert float(disc_loss(full(real), full(fake))) == pytest.approx(expected, abs=1e-7)


@pytest.mark.parametrize("orig, rec, expected", [(0.3, 0.3, 0.0), (0.0, 0.1, 1.0), (-1.0, 1.0, 20.0)])
def test_cycle_hand_values(orig, rec, expected):
    assert float(cycle_loss(full(orig), full(rec), LossConfig(lambda_cycle=10))) == pytest.approx(expected, abs=1e-7)


def test_loss_shape_errors():
    with pytest.raises(ShapeError):
        gen_adversarial_loss(torch.zeros(0))
    with pytest.raises(ShapeError):
        disc_loss(torch.zeros(2, 2), torch.zeros(3, 3))
    with pytest.raises(ShapeError):
        cycle_loss(torch.zeros(2, 2), torch.zeros(2, 3))


def test_loss_config_validation():
    with pytest.raises(ConfigurationError):
        LossConfig(lambda_cycle=0)
    with pytest.raises(ConfigurationError):
        LossConfig.from_dict({"lambda": 3})


arrays = st.lists(st.floats(-5, 5), min_size=1, max_size=30)


@settings(max_examples=100, deadline=None)
@given(arrays, st.floats(0.01, 100))
def test_losses_nonnegative_and_cycle_linear_in_lambda(values, lam):
    a = torch.tensor(values, dtype=torch.float64)
    b = a.flip(0) * 0.5
    assert gen_adversarial_loss(a) >= 0
    assert disc_loss(a, b) >= 0
    c1 = cycle_loss(a, b, LossConfig(lambda_cycle=lam))
    c2 = cycle_loss(a, b, LossConfig(lambda_cycle=2 * lam))
    assert c1 >= 0
    assert float(c2) == pytest.approx(2 * float(c1), rel=1e-12, abs=1e-15)


class StubModel:
    """Identity generators and a constant-0.5 discriminator."""

    def __init__(self, registry, gains=None):
        self.registry = registry
        self.gains = gains

    def translate(self, path, x):
        if self.gains is None:
            return x
        return x * self.gains[path.target] / self.gains[path.source]

    def discriminate(self, domain, x):
        return torch.full((x.shape[0], 1, 3, 3), 0.5, dtype=x.dtype)


def test_assemble_with_stubs(registry):
    losses = assemble_step_losses(StubModel(registry), random_batches(registry, 2, 8))
    for m in (losses.adversarial, losses.cycle, losses.discriminator):
        assert len(m) == 12
        assert set(m) == set(enumerate_paths(registry))
    assert all(float(v) == pytest.approx(0.25, abs=1e-7) for v in losses.adversarial.values())
    assert all(float(v) == pytest.approx(0.25, abs=1e-7) for v in losses.discriminator.values())
    assert all(float(v) == 0.0 for v in losses.cycle.values())


def test_mutually_inverse_generators_zero_cycle(registry):
    gains = {d: 2.0 ** i for i, d in enumerate(registry.ids)}
    batches = random_batches(registry, 3, 8, dtype=torch.float64)
    losses = assemble_step_losses(StubModel(registry, gains), batches)
    assert all(float(v) == pytest.approx(0.0, abs=1e-12) for v in losses.cycle.values())


def test_assemble_missing_domain(registry):
    batches = random_batches(registry, 2, 8)
    batches.pop("ge_std")
    with pytest.raises(ConfigurationError, match="ge_std"):
        assemble_step_losses(StubModel(registry), batches)


def test_assemble_real_bundle_finite(registry, tiny_bundle):
    losses = assemble_step_losses(tiny_bundle, random_batches(registry, 2, 16))
    assert len(losses.adversarial) == len(losses.cycle) == len(losses.discriminator) == 12
    assert losses.first_nonfinite() is None
    assert len(losses.rows(0)) == 12
    assert float(losses.generator_total().detach()) > 0


def test_detachment(registry, tiny_bundle):
    losses = assemble_step_losses(tiny_bundle, random_batches(registry, 2, 16))
    gen, disc = tiny_bundle.generator_parameters(), tiny_bundle.discriminator_parameters()
    d_grads = torch.autograd.grad(losses.discriminator_total(), gen, allow_unused=True, retain_graph=True)
    assert all(g is None or float(g.abs().max()) == 0.0 for g in d_grads)
    # the discriminator loss does reach the discriminators
    assert any(g is not None and float(g.abs().max()) > 0
               for g in torch.autograd.grad(losses.discriminator_total(), disc, allow_unused=True, retain_graph=True))
    g_total = losses.generator_total()
    g_total.backward(inputs=gen)
    assert all(p.grad is None for p in disc)


@pytest.fixture(scope="module")
def grad_setup(registry):
    torch.manual_seed(0)
    bundle = ModelBundle(registry, GRAD_ARCH, seed=1).double()
    batches = random_batches(registry, 2, 8, seed=2, dtype=torch.float64)
    return bundle, batches


def test_generator_gradients_match_finite_differences(grad_setup):
    bundle, batches = grad_setup
    err = fd_relative_error(lambda: assemble_step_losses(bundle, batches).generator_total(),
                            bundle.generator_parameters(), n_samples=40)
    assert err < 1e-3


def test_discriminator_gradients_match_finite_differences(grad_setup):
    bundle, batches = grad_setup
    err = fd_relative_error(lambda: assemble_step_losses(bundle, batches).discriminator_total(),
                            bundle.discriminator_parameters(), n_samples=40)
    assert err < 1e-3
