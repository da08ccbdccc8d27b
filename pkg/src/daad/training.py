"""Training loops for DAAD (reconstruction only) and DAAD+ (alternating
adversarial training), plus evaluation of a trained model."""
from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from . import losses, nn
from .config import RunConfig
from .data import ImageSample, augment_flip, check_train_split, stack
from .networks import Discriminator, Generator
from .optim import Adam
from .scoring import (ScoreRecord, ali_score, auroc_for_mode, normalize_mode, rec_score,
                      scale_records, MissingDiscriminatorError)
from .tensor import Tensor, debug_enabled, no_grad, set_debug

LOSS_COLUMNS = ("step", "epoch", "rec", "adv_d", "adv_g", "ali", "total")


@dataclass
class LossRow:
    step: int
    epoch: int
    rec: float
    adv_d: float | None = None
    adv_g: float | None = None
    ali: float | None = None
    total: float = 0.0


@dataclass
class Model:
    """Everything needed to continue or evaluate a run."""

    config: RunConfig
    generator: Generator
    discriminator: Discriminator | None
    opt_gen: Adam
    opt_disc: Adam | None
    rng: np.random.Generator
    epoch: int = 0
    step: int = 0
    log: list[LossRow] = field(default_factory=list)


def data_seed(seed: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), 2])


def build_model(config: RunConfig) -> Model:
    """Fresh model: generator seeded with ``train.seed``, discriminator with ``train.seed + 1``,
    shuffling/augmentation stream derived from the seed separately."""
    mc, tc = config.model, config.train
    gen = Generator(mc.generator_spec(), seed=tc.seed)
    disc = Discriminator(mc.discriminator_spec(), seed=tc.seed + 1) if mc.has_discriminator else None
    kw = dict(lr=tc.lr, betas=tc.betas, eps=tc.eps, weight_decay=tc.weight_decay)
    opt_gen = Adam(gen.named_parameters(), **kw)
    opt_disc = Adam(disc.named_parameters(), **kw) if disc is not None else None
    return Model(config, gen, disc, opt_gen, opt_disc, np.random.default_rng(data_seed(tc.seed)))


def _batches(model: Model, train: list[ImageSample]):
    tc = model.config.train
    perm = model.rng.permutation(len(train))
    for k in range(0, len(train), tc.batch_size):
        idx = perm[k:k + tc.batch_size]
        yield np.stack([augment_flip(train[i].pixels, model.rng, tc.flip_prob) for i in idx])


def _check_finite(model: Model) -> None:
    for mod in (model.generator, model.discriminator):
        if mod is None:
            continue
        for name, arr in mod.state_dict().items():
            if not np.all(np.isfinite(arr)):
                raise FloatingPointError(f"non-finite values in {name} after epoch {model.epoch}")


def _daad_step(model: Model, xb: np.ndarray) -> LossRow:
    tc = model.config.train
    weights = model.config.model.weights()
    x = Tensor(xb)
    model.opt_gen.zero_grad()
    rec = losses.reconstruction_loss(x, model.generator(x), tc.rec_form)
    total = losses.total_generator_loss(rec, None, None, weights)
    total.backward()
    model.opt_gen.step()
    return LossRow(model.step, model.epoch, rec.item(), total=total.item())


def _daad_plus_step(model: Model, xb: np.ndarray) -> LossRow:
    """One discriminator step on (x, detached x_hat), then one generator step
    with the discriminator frozen. Zero-weight terms stay out of the graph."""
    tc = model.config.train
    weights = model.config.model.weights()
    gen, disc = model.generator, model.discriminator
    x = Tensor(xb)
    x_hat = gen(x)

    model.opt_disc.zero_grad()
    p_real, _ = disc(x)
    p_fake, _ = disc(x_hat.detach())
    loss_d = losses.discriminator_loss(p_real, p_fake)
    loss_d.backward()
    model.opt_disc.step()

    model.opt_gen.zero_grad()
    rec = losses.reconstruction_loss(x, x_hat, tc.rec_form)
    adv = ali = None
    with nn.frozen(disc):
        if weights.adv or weights.ali:
            p_fake_g, f_fake = disc(x_hat)
            _, f_real = disc(x)
            adv = losses.generator_adversarial_loss(p_fake_g, tc.saturating_gen_loss)
            ali = losses.alignment_loss(f_real.detach(), f_fake)
    total = losses.total_generator_loss(rec, adv if weights.adv else None, ali if weights.ali else None, weights)
    total.backward()
    model.opt_gen.step()

    if adv is None:
        # report the disabled terms without letting them touch any parameter
        with no_grad():
            p_fake_g, f_fake = disc(x_hat.detach())
            _, f_real = disc(x)
            adv = losses.generator_adversarial_loss(p_fake_g, tc.saturating_gen_loss)
            ali = losses.alignment_loss(f_real, f_fake)
    return LossRow(model.step, model.epoch, rec.item(), loss_d.item(), adv.item(), ali.item(), total.item())


def train(model: Model, train_set: list[ImageSample], epochs: int | None = None,
          max_steps: int | None = None, on_step=None) -> list[LossRow]:
    """Run ``epochs`` more epochs (default: the configured count minus those done).

    ``max_steps`` stops early after that many optimizer steps in this call;
    ``on_step(model, row)`` is invoked after every step.
    """
    if not train_set:
        raise ValueError("training set is empty")
    check_train_split(train_set)
    tc = model.config.train
    if epochs is None:
        epochs = max(tc.epochs - model.epoch, 0)
    step_fn = _daad_plus_step if model.discriminator is not None else _daad_step
    model.generator.train()
    if model.discriminator is not None:
        model.discriminator.train()
    prev_debug = debug_enabled()
    set_debug(prev_debug or tc.debug)
    rows: list[LossRow] = []
    try:
        for _ in range(epochs):
            for xb in _batches(model, train_set):
                row = step_fn(model, xb)
                model.step += 1
                rows.append(row)
                model.log.append(row)
                if on_step is not None:
                    on_step(model, row)
                if max_steps is not None and len(rows) >= max_steps:
                    return rows
            model.epoch += 1
            if tc.debug:
                _check_finite(model)
    finally:
        set_debug(prev_debug)
    return rows


def train_daad(config: RunConfig, train_set: list[ImageSample], **kw) -> Model:
    """Reconstruction-only training of any generator variant."""
    if config.model.has_discriminator:
        raise ValueError("train_daad expects a configuration without a discriminator")
    model = build_model(config)
    train(model, train_set, **kw)
    return model


def train_daad_plus(config: RunConfig, train_set: list[ImageSample], **kw) -> Model:
    """Alternating discriminator/generator training."""
    if not config.model.has_discriminator:
        raise ValueError("train_daad_plus expects a configuration with a discriminator")
    model = build_model(config)
    train(model, train_set, **kw)
    return model


def write_loss_csv(rows: list[LossRow], path: str | os.PathLike) -> None:
    def fmt(v):
        return "" if v is None else repr(float(v)) if isinstance(v, float) else str(v)

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LOSS_COLUMNS)
        for r in rows:
            w.writerow([fmt(getattr(r, c)) for c in LOSS_COLUMNS])


def reconstruct(model: Model, samples: list[ImageSample], batch_size: int = 25) -> np.ndarray:
    gen = model.generator
    was_training = gen.training
    gen.eval()
    out = []
    try:
        with no_grad():
            for k in range(0, len(samples), batch_size):
                out.append(gen(Tensor(stack(samples[k:k + batch_size]))).data)
    finally:
        gen.train(was_training)
    return np.concatenate(out) if out else np.zeros((0,), np.float32)


def raw_scores(model: Model, samples: list[ImageSample], batch_size: int = 25,
               with_ali: bool | None = None) -> list[ScoreRecord]:
    """Per-image rec_raw (and ali_raw when a discriminator is present), in eval mode."""
    gen, disc = model.generator, model.discriminator
    if with_ali is None:
        with_ali = disc is not None
    if with_ali and disc is None:
        raise MissingDiscriminatorError("alignment scores require a discriminator")
    modes = [(m, m.training) for m in (gen, disc) if m is not None]
    for m, _ in modes:
        m.eval()
    records = []
    try:
        with no_grad():
            for k in range(0, len(samples), batch_size):
                chunk = samples[k:k + batch_size]
                xb = stack(chunk)
                x = Tensor(xb)
                x_hat = gen(x)
                if with_ali:
                    _, f_real = disc(x)
                    _, f_fake = disc(x_hat)
                for i, s in enumerate(chunk):
                    ali = ali_score(f_real.data[i], f_fake.data[i]) if with_ali else None
                    records.append(ScoreRecord(s.image_id, int(s.label), rec_score(xb[i], x_hat.data[i]), ali))
    finally:
        for m, was in modes:
            m.train(was)
    return records


def evaluate(model: Model, samples: list[ImageSample], mode: str = "rec_only", gamma: float = 0.9,
             batch_size: int = 25) -> tuple[float, list[ScoreRecord]]:
    """Score every sample, min-max scale over the whole set, return the mode's AUROC.

    Raises :class:`MissingDiscriminatorError` if ``mode`` needs alignment
    scores and the model has no discriminator.
    """
    mode = normalize_mode(mode)
    if mode != "rec_only" and model.discriminator is None:
        raise MissingDiscriminatorError(f"score mode {mode!r} requires a discriminator")
    records = scale_records(raw_scores(model, samples, batch_size), gamma)
    return auroc_for_mode(records, mode), records
