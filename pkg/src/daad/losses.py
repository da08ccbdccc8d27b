"""Training losses: reconstruction, adversarial (both players) and feature alignment."""
from __future__ import annotations

from dataclasses import dataclass

from . import ops
from .tensor import Tensor, as_tensor

PROB_EPS = 1e-7


@dataclass(frozen=True)
class LossWeights:
    rec: float = 50.0
    adv: float = 0.5
    ali: float = 0.5

    def __post_init__(self):
        for name in ("rec", "adv", "ali"):
            if getattr(self, name) < 0:
                raise ValueError(f"loss weight {name} must be non-negative")


def _same_shape(a: Tensor, b: Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape mismatch {a.shape} vs {b.shape}")


def reconstruction_loss(x, x_hat, form: str = "mse") -> Tensor:
    """Squared pixel error.

    ``form="mse"`` averages over every element; ``form="l2"`` averages the
    per-image Euclidean norm over the batch.
    """
    x = as_tensor(x)
    x_hat = as_tensor(x_hat, like=x)
    _same_shape(x, x_hat, "reconstruction_loss")
    sq = ops.square(ops.sub(x_hat, x))
    if form == "mse":
        return ops.mean(sq)
    if form == "l2":
        per_image = ops.sum(ops.reshape(sq, (sq.shape[0], -1)), axis=1)
        return ops.mean(ops.sqrt(ops.add(per_image, 1e-12)))
    raise ValueError(f"unknown reconstruction form {form!r}")


def discriminator_loss(prob_real, prob_fake) -> Tensor:
    """Binary cross-entropy with real labelled 1 and reconstructions labelled 0."""
    prob_real = as_tensor(prob_real)
    prob_fake = as_tensor(prob_fake, like=prob_real)
    real = ops.log(prob_real, PROB_EPS)
    fake = ops.log(1.0 - prob_fake, PROB_EPS)
    return ops.mul(ops.mean(ops.add(real, fake)), -1.0)


def generator_adversarial_loss(prob_fake, saturating: bool = False) -> Tensor:
    """``-log D(G(x))`` by default; ``saturating=True`` gives ``log(1 - D(G(x)))``."""
    prob_fake = as_tensor(prob_fake)
    if saturating:
        return ops.mean(ops.log(1.0 - prob_fake, PROB_EPS))
    return ops.mul(ops.mean(ops.log(prob_fake, PROB_EPS)), -1.0)


def alignment_loss(feat_x, feat_x_hat) -> Tensor:
    """Mean squared difference of discriminator features.

    Callers keep discriminator parameters out of the gradient by evaluating
    the discriminator under :func:`daad.nn.frozen`.
    """
    feat_x = as_tensor(feat_x)
    feat_x_hat = as_tensor(feat_x_hat, like=feat_x)
    _same_shape(feat_x, feat_x_hat, "alignment_loss")
    return ops.mean(ops.square(ops.sub(feat_x_hat, feat_x)))


def total_generator_loss(rec, adv, ali, weights: LossWeights):
    """Weighted sum; terms whose weight is zero are left out of the graph entirely."""
    total = None
    for w, term in ((weights.rec, rec), (weights.adv, adv), (weights.ali, ali)):
        if w == 0 or term is None:
            continue
        part = term * w
        total = part if total is None else total + part
    if total is None:
        return as_tensor(0.0)
    return total
