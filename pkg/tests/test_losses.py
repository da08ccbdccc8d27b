import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from daad import gradcheck, nn
from daad.losses import (LossWeights, alignment_loss, discriminator_loss, generator_adversarial_loss,
                         reconstruction_loss, total_generator_loss)
from daad.networks import Discriminator, DiscriminatorSpec, discriminate
from daad.tensor import Tensor

probs = st.floats(min_value=1e-3, max_value=1 - 1e-3)


def t64(a):
    """Tensors default to float32; the value checks below are made in float64."""
    return Tensor(np.asarray(a, dtype=np.float64), dtype=np.float64)


def test_loss_weight_defaults():
    assert LossWeights() == LossWeights(50.0, 0.5, 0.5)
    with pytest.raises(ValueError):
        LossWeights(adv=-1.0)


# -- reconstruction ------------------------------------------------------------------

def test_reconstruction_identity_is_zero():
    x = np.random.default_rng(0).uniform(-1, 1, (2, 3, 4, 4))
    assert reconstruction_loss(x, x.copy()).item() == 0.0


def test_reconstruction_uniform_difference():
    x = np.zeros((2, 3, 4, 4))
    assert reconstruction_loss(t64(x), t64(x + 0.1)).item() == pytest.approx(0.01, rel=1e-12)


def test_reconstruction_l2_form():
    x = np.zeros((2, 1, 2, 2))
    # per-image norm sqrt(4 * 0.25) = 1
    assert reconstruction_loss(x, x + 0.5, form="l2").item() == pytest.approx(1.0, rel=1e-9)
    with pytest.raises(ValueError, match="unknown"):
        reconstruction_loss(x, x, form="l1")


def test_reconstruction_shape_mismatch():
    with pytest.raises(ValueError, match="shape mismatch"):
        reconstruction_loss(np.zeros((1, 3, 4, 4)), np.zeros((1, 3, 4, 2)))


def test_reconstruction_gradient_closed_form():
    rng = np.random.default_rng(1)
    x, xh = rng.standard_normal((2, 2, 3, 3)), rng.standard_normal((2, 2, 3, 3))
    t = Tensor(xh, requires_grad=True, dtype=np.float64)
    reconstruction_loss(Tensor(x, dtype=np.float64), t).backward()
    np.testing.assert_allclose(t.grad, 2 * (xh - x) / x.size, rtol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_reconstruction_gradcheck(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2, 2, 3, 3))
    err = gradcheck.check(lambda xh: reconstruction_loss(Tensor(x), xh), [rng.standard_normal(x.shape)])
    assert err < 1e-5


# -- adversarial ---------------------------------------------------------------------

def test_discriminator_loss_at_half():
    assert discriminator_loss(t64(np.full(4, 0.5)), t64(np.full(4, 0.5))).item() == pytest.approx(2 * math.log(2), abs=1e-12)
    assert discriminator_loss(t64(np.full(4, 0.5)), t64(np.full(4, 0.5))).item() == pytest.approx(1.3863, abs=5e-5)


def test_discriminator_loss_perfect_limit():
    assert discriminator_loss(np.array([1 - 1e-12]), np.array([1e-12])).item() < 1e-6


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(probs, probs), min_size=1, max_size=8))
def test_discriminator_loss_swap_symmetry_and_sign(pairs):
    real = np.array([p[0] for p in pairs])
    fake = np.array([p[1] for p in pairs])
    a = discriminator_loss(t64(real), t64(fake)).item()
    b = discriminator_loss(t64(1 - fake), t64(1 - real)).item()
    assert a == pytest.approx(b, rel=1e-12)
    assert a >= 0


def test_generator_loss_values():
    assert generator_adversarial_loss(np.full(3, 0.5)).item() == pytest.approx(0.6931, abs=5e-5)
    assert generator_adversarial_loss(np.array([1 - 1e-12])).item() < 1e-6
    assert generator_adversarial_loss(np.full(3, 0.5), saturating=True).item() == pytest.approx(-math.log(2))


@settings(max_examples=100, deadline=None)
@given(probs, probs)
def test_generator_loss_monotone_decreasing(p, q):
    lo, hi = sorted((p, q))
    a, b = generator_adversarial_loss(t64([lo])).item(), generator_adversarial_loss(t64([hi])).item()
    assert a >= b
    # strictly decreasing wherever float64 can resolve the difference in -log p
    if hi > lo * (1 + 1e-9):
        assert a > b


# -- alignment -----------------------------------------------------------------------

def test_alignment_examples():
    f = np.random.default_rng(0).standard_normal((2, 100))
    assert alignment_loss(f, f.copy()).item() == 0.0
    assert alignment_loss(t64(f), t64(f + 0.1)).item() == pytest.approx(0.01, rel=1e-9)
    with pytest.raises(ValueError, match="shape mismatch"):
        alignment_loss(np.zeros((1, 100)), np.zeros((1, 99)))


def test_alignment_gives_no_discriminator_gradient_under_frozen():
    disc = Discriminator(DiscriminatorSpec((16, 16), base_channels=4), seed=0)
    rng = np.random.default_rng(0)
    x = Tensor(rng.uniform(-1, 1, (2, 3, 16, 16)).astype(np.float32))
    x_hat = Tensor(rng.uniform(-1, 1, (2, 3, 16, 16)).astype(np.float32), requires_grad=True)
    with nn.frozen(disc):
        _, fx = discriminate(x, disc)
        _, fxh = discriminate(x_hat, disc)
        alignment_loss(fx, fxh).backward()
    assert all(p.grad is None or not np.any(p.grad) for p in disc.parameters())
    assert x_hat.grad is not None and np.any(x_hat.grad)
    assert all(p.requires_grad for p in disc.parameters())


# -- total ---------------------------------------------------------------------------

def test_total_example():
    out = total_generator_loss(Tensor(0.01), Tensor(0.6931), Tensor(0.02), LossWeights(50, 0.5, 0.5)).item()
    assert out == pytest.approx(0.85655, abs=1e-6)


def test_total_projection_and_zero():
    rec = Tensor(0.3)
    assert total_generator_loss(rec, Tensor(1.0), Tensor(2.0), LossWeights(1, 0, 0)).item() == pytest.approx(0.3)
    assert total_generator_loss(Tensor(0.0), Tensor(0.0), Tensor(0.0), LossWeights()).item() == 0.0


def test_total_omits_zero_weight_terms_from_graph():
    rec = Tensor(np.array(0.2), requires_grad=True)
    adv = Tensor(np.array(0.7), requires_grad=True)
    total_generator_loss(rec, adv, None, LossWeights(2.0, 0.0, 0.0)).backward()
    assert rec.grad == pytest.approx(2.0)
    assert adv.grad is None


@settings(max_examples=100, deadline=None)
@given(st.tuples(*[st.floats(0, 10)] * 3), st.tuples(*[st.floats(0, 100)] * 3),
       st.integers(0, 2), st.floats(-1, 1))
def test_total_is_linear_in_each_component(comps, weights, which, delta):
    w = LossWeights(*weights)
    base = total_generator_loss(*[Tensor(c) for c in comps], w).item()
    bumped = list(comps)
    bumped[which] += delta
    moved = total_generator_loss(*[Tensor(c) for c in bumped], w).item()
    assert moved - base == pytest.approx(weights[which] * delta, rel=1e-9, abs=1e-9)
