import csv

import numpy as np
import pytest

from daad.optim import Adam, adam_step
from daad.scoring import MissingDiscriminatorError
from daad.tensor import Tensor
from daad.training import (LOSS_COLUMNS, build_model, evaluate, raw_scores, reconstruct, train, train_daad,
                           train_daad_plus, write_loss_csv)

from conftest import small_config


# -- Adam ---------------------------------------------------------------------------

def adam_oracle(grads, lr, b1=0.9, b2=0.999, eps=1e-8):
    """Scalar Adam recurrence written out with Python floats."""
    p, m, v = 0.0, 0.0, 0.0
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        p -= lr * (m / (1 - b1 ** t)) / ((v / (1 - b2 ** t)) ** 0.5 + eps)
    return p


def test_adam_first_step_magnitude_is_lr():
    p, m, v = np.zeros(1), np.zeros(1), np.zeros(1)
    adam_step(p, np.ones(1), m, v, 1, lr=0.1)
    assert p[0] == pytest.approx(-0.1, rel=1e-7)


def test_adam_matches_scalar_recurrence():
    grads = [1.0, -0.5, 2.0, 0.25, 0.0, -3.0]
    p, m, v = np.zeros(1), np.zeros(1), np.zeros(1)
    for t, g in enumerate(grads, start=1):
        adam_step(p, np.array([g]), m, v, t, lr=0.01)
    assert p[0] == pytest.approx(adam_oracle(grads, 0.01), rel=1e-12)


def test_adam_zero_lr_and_zero_grad():
    rng = np.random.default_rng(0)
    p0 = rng.standard_normal(5)
    p, m, v = p0.copy(), np.zeros(5), np.zeros(5)
    adam_step(p, rng.standard_normal(5), m, v, 1, lr=0.0)
    np.testing.assert_array_equal(p, p0)
    p, m, v = p0.copy(), np.zeros(5), np.zeros(5)
    adam_step(p, np.zeros(5), m, v, 1, lr=0.1)
    np.testing.assert_array_equal(p, p0)
    assert not m.any() and not v.any()


def test_adam_skips_parameters_without_grad_as_zero():
    a = Tensor(np.ones(3), requires_grad=True)
    opt = Adam([("a", a)], lr=0.1)
    opt.zero_grad()
    opt.step()
    np.testing.assert_array_equal(a.data, np.ones(3))
    assert opt.t == 1


# -- training loops -----------------------------------------------------------------

def test_same_seed_runs_are_identical(small_data):
    train_set, _ = small_data
    a = train_daad(small_config(seed=3), train_set)
    b = train_daad(small_config(seed=3), train_set)
    assert a.log == b.log
    for (ka, va), (kb, vb) in zip(a.generator.state_dict().items(), b.generator.state_dict().items()):
        assert ka == kb
        np.testing.assert_array_equal(va, vb)
    c = train_daad(small_config(seed=4), train_set)
    assert c.log != a.log


def test_reconstruction_loss_decreases(small_data):
    train_set, _ = small_data
    model = train_daad(small_config(epochs=8), train_set)
    per_epoch = {}
    for row in model.log:
        per_epoch.setdefault(row.epoch, []).append(row.rec)
    assert np.mean(per_epoch[7]) < np.mean(per_epoch[0])


def test_memory_banks_change_after_one_epoch(small_data):
    train_set, _ = small_data
    model = build_model(small_config())
    banks = {k: p for k, p in model.generator.named_parameters() if k.startswith("mem.")}
    assert len(banks) == 2
    before = {k: p.data.copy() for k, p in banks.items()}
    train(model, train_set, epochs=1)
    for k, p in banks.items():
        assert np.linalg.norm(p.data - before[k]) > 0, k


def test_daad_ignores_adversarial_weights(small_data):
    train_set, _ = small_data
    cfg = small_config()
    cfg.model.loss_weights = (50.0, 7.0, 9.0)
    assert cfg.model.weights().adv == 0 and cfg.model.weights().ali == 0
    row = train_daad(cfg, train_set, max_steps=1).log[0]
    assert row.adv_g is None and row.total == pytest.approx(50.0 * row.rec, rel=1e-6)


def test_daad_plus_logs_every_column(small_data, tmp_path):
    train_set, _ = small_data
    model = train_daad_plus(small_config("daad_plus"), train_set, max_steps=3)
    assert len(model.log) == 3
    for r in model.log:
        assert None not in (r.rec, r.adv_d, r.adv_g, r.ali, r.total)
        assert r.total == pytest.approx(50 * r.rec + 0.5 * r.adv_g + 0.5 * r.ali, rel=1e-5)
    path = tmp_path / "loss.csv"
    write_loss_csv(model.log, path)
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == LOSS_COLUMNS and len(rows) == 4
    assert [int(r[0]) for r in rows[1:]] == [0, 1, 2]


def test_discriminator_learns_to_accept_real_images(small_data):
    train_set, _ = small_data
    model = train_daad_plus(small_config("daad_plus", epochs=2), train_set)
    model.discriminator.eval()
    prob, _ = model.discriminator(Tensor(np.stack([s.pixels for s in train_set])))
    assert float(np.mean(prob.data)) > 0.5


def test_train_wrappers_check_variant(small_data):
    train_set, _ = small_data
    with pytest.raises(ValueError, match="without a discriminator"):
        train_daad(small_config("daad_plus"), train_set)
    with pytest.raises(ValueError, match="with a discriminator"):
        train_daad_plus(small_config("daad"), train_set)


def test_train_rejects_bad_datasets(small_data):
    train_set, test_set = small_data
    model = build_model(small_config())
    with pytest.raises(ValueError, match="empty"):
        train(model, [])
    with pytest.raises(ValueError, match="only normal"):
        train(model, train_set + test_set)


def test_debug_mode_flags_non_finite_values(small_data):
    train_set, _ = small_data
    model = build_model(small_config(debug=True))
    bank = model.generator.memory_parameters()[0]
    bank.data[0, 0] = np.nan
    with np.errstate(invalid="ignore"), pytest.raises(FloatingPointError):
        train(model, train_set, epochs=1)


def test_max_steps_and_resume_continue_the_epoch_counter(small_data):
    train_set, _ = small_data
    model = build_model(small_config(epochs=3))
    train(model, train_set, epochs=1)
    assert model.epoch == 1 and model.step == 4
    train(model, train_set)
    assert model.epoch == 3 and model.step == 12


# -- evaluation -----------------------------------------------------------------------

def test_evaluate_modes(small_data):
    train_set, test_set = small_data
    daad = train_daad(small_config(), train_set, max_steps=2)
    auc, records = evaluate(daad, test_set, "rec")
    assert 0 <= auc <= 1 and all(r.ali_raw is None for r in records)
    with pytest.raises(MissingDiscriminatorError):
        evaluate(daad, test_set, "fused")
    plus = train_daad_plus(small_config("daad_plus"), train_set, max_steps=2)
    records = evaluate(plus, test_set, "fused", gamma=0.9)[1]
    assert all(r.fused == 0.9 * r.rec_scaled + (1 - 0.9) * r.ali_scaled for r in records)


def test_evaluation_is_in_eval_mode_and_repeatable(small_data):
    train_set, test_set = small_data
    model = train_daad(small_config(), train_set, max_steps=2)
    a = raw_scores(model, test_set, batch_size=3)
    b = raw_scores(model, test_set, batch_size=16)
    assert [r.rec_raw for r in a] == pytest.approx([r.rec_raw for r in b], abs=1e-7)
    assert model.generator.training
    out = reconstruct(model, test_set[:5])
    assert out.shape == (5, 3, 16, 16)
