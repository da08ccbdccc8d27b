"""Acceptance suite: one test per criterion, each at its stated tolerance and runtime budget.

A PASS/FAIL line per criterion is printed in the terminal summary (see conftest).
"""
import copy
import csv
import time

import numpy as np
import pytest

import test_blockmem
import test_data
import test_networks
import test_ops
import test_scoring
from daad import checkpoint as ckpt
from daad.cli import main
from daad.config import preset
from daad.data import generate_stripes
from daad.networks import Generator
from daad.tensor import Tensor, no_grad
from daad.training import build_model, evaluate, raw_scores, train, train_daad, train_daad_plus

criterion = pytest.mark.criterion


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def desk_toy_data():
    cfg = preset("desk-toy")
    return generate_stripes(cfg.data.stripes, cfg.model.scales)


# 1 ---------------------------------------------------------------------------------

@criterion(1, "invariant suite (simplex, shrinkage, roundtrip, convex hull, flips, preprocessing)")
def test_criterion_1_invariants():
    start = time.perf_counter()
    # each property runs under hypothesis with at least 100 generated cases
    checks = [
        test_blockmem.test_address_is_on_simplex,
        test_blockmem.test_shrink_keeps_a_nonempty_set_of_large_weights,
        test_blockmem.test_assemble_divide_roundtrip_bit_exact,
        test_blockmem.test_aggregate_within_convex_hull_norm_bound,
        test_data.test_flip_involution,
        test_data.test_preprocess_range,
    ]
    for check in checks:
        settings = check._hypothesis_internal_use_settings
        assert settings.max_examples >= 100, check.__name__
        check()
    assert time.perf_counter() - start < 60


# 2 ---------------------------------------------------------------------------------

@criterion(2, "gradient checks: every op, memory module, tiny generator (1e-5 f64 / 1e-3 f32)")
def test_criterion_2_gradients():
    start = time.perf_counter()
    for name in sorted(test_ops.CASES):
        for dtype in (np.float64, np.float32):
            test_ops.test_gradient_matches_finite_differences(name, dtype)
    test_blockmem.test_memory_forward_gradient_check_frozen_mask()
    test_networks.test_tiny_generator_gradient_check(np.float64, 1e-5)
    test_networks.test_tiny_generator_gradient_check(np.float32, 1e-3)
    assert time.perf_counter() - start < 120


# 3 ---------------------------------------------------------------------------------

@criterion(3, "AUROC equals the pairwise Mann-Whitney oracle exactly on 200 instances")
def test_criterion_3_auroc_oracle():
    # 100 tie-free and 100 tied instances, n <= 64, exact float64 equality
    test_scoring.test_auroc_equals_pairwise_oracle_exactly(False)
    test_scoring.test_auroc_equals_pairwise_oracle_exactly(True)


# 4 ---------------------------------------------------------------------------------

@criterion(4, "N=1 banks give bit-identical memory outputs for different inputs")
def test_criterion_4_degenerate_bank():
    for name in ("desk-toy", "paper-mvtec"):
        mc = preset(name).model
        mc.bank_size = 1
        if name == "paper-mvtec":
            mc.input_size, mc.base_channels = 128, 8  # same topology, smaller tensors
        gen = Generator(mc.generator_spec(), seed=0).eval()
        rng = np.random.default_rng(1)
        shape = (1, 3, mc.input_size, mc.input_size)
        a = Tensor(rng.uniform(-1, 1, shape).astype(np.float32))
        b = Tensor(rng.uniform(-1, 1, shape).astype(np.float32))
        with no_grad():
            out_a = gen.apply_memories(gen.encode(a))
            out_b = gen.apply_memories(gen.encode(b))
        assert len(out_a) == mc.scales
        for level, (ma, mb) in enumerate(zip(out_a, out_b), start=1):
            assert np.array_equal(ma.data, mb.data), f"{name} scale {level}"


# 5 ---------------------------------------------------------------------------------

@criterion(5, "desk-toy DAAD separates stripes: mean rec anomaly > normal, AUROC >= 0.90")
def test_criterion_5_desk_scale_separation(desk_toy_data):
    start = time.perf_counter()
    train_set, test_set = desk_toy_data
    model = train_daad(preset("desk-toy"), train_set)
    auc, records = evaluate(model, test_set, "rec_only")
    rec = np.array([r.rec_raw for r in records])
    lab = np.array([r.label for r in records])
    print(f"criterion 5: auroc {auc:.4f} normal {rec[lab == 0].mean():.5f} anomaly {rec[lab == 1].mean():.5f}")
    assert rec[lab == 1].mean() > rec[lab == 0].mean()
    assert auc >= 0.90
    assert time.perf_counter() - start < 15 * 60


# 6 ---------------------------------------------------------------------------------

@criterion(6, "block-size trend over rates {1,2,4,8}, 3 seeds")
def test_criterion_6_block_size_trend(tmp_path):
    start = time.perf_counter()
    out = tmp_path / "sweep"
    assert main(["toy-sweep", "--rates", "1,2,4,8", "--seeds", "0,1,2", "--out", str(out), "--threads", "1"]) == 0
    rows = {int(r["rate"]): r for r in read_csv(out / "toy_sweep.csv")}
    assert sorted(rows) == [1, 2, 4, 8]
    auc = {r: float(v["auroc"]) for r, v in rows.items()}
    anom = {r: float(v["mean_rec_anom"]) for r, v in rows.items()}
    print(f"criterion 6: auroc {auc} mean_rec_anom {anom}")
    best = max(auc.values())
    interior = [r for r in (2, 4) if auc[r] == best]
    assert interior, f"maximum AUROC {best} is not at an interior rate: {auc}"
    assert best > auc[1] and best > auc[8]
    assert anom[8] < anom[1]
    assert time.perf_counter() - start < 60 * 60


# 7 ---------------------------------------------------------------------------------

@criterion(7, "DAAD+ with zero adversarial and alignment weights reproduces DAAD bit for bit")
def test_criterion_7_reduction(desk_toy_data):
    train_set, _ = desk_toy_data
    daad_cfg = preset("desk-toy")
    plus_cfg = copy.deepcopy(daad_cfg)
    plus_cfg.model.variant = "daad_plus"
    plus_cfg.model.loss_weights = (daad_cfg.model.loss_weights[0], 0.0, 0.0)

    def trajectory(cfg, fn):
        states = []
        fn(cfg, train_set, max_steps=10,
           on_step=lambda m, row: states.append({k: v.copy() for k, v in m.generator.state_dict().items()}))
        return states

    a = trajectory(daad_cfg, train_daad)
    b = trajectory(plus_cfg, train_daad_plus)
    assert len(a) == len(b) == 10
    for step, (sa, sb) in enumerate(zip(a, b)):
        assert sa.keys() == sb.keys()
        for k in sa:
            assert np.array_equal(sa[k], sb[k]), f"step {step}: {k}"


# 8 ---------------------------------------------------------------------------------

@criterion(8, "same-seed loss.csv identical; checkpoint save-load-save byte-identical; scores match")
def test_criterion_8_determinism_and_persistence(tmp_path, desk_toy_data):
    texts = []
    for k in range(2):
        run = tmp_path / f"run{k}"
        assert main(["train", "--preset", "desk-toy", "--epochs", "2", "--seed", "5", "--out", str(run),
                     "--threads", "1"]) == 0
        texts.append((run / "loss.csv").read_bytes())
    assert texts[0] == texts[1]

    first = tmp_path / "run0" / "checkpoint.daad"
    model = ckpt.load_checkpoint(first)
    again = tmp_path / "again.daad"
    ckpt.save_checkpoint(model, again)
    assert first.read_bytes() == again.read_bytes()

    _, test_set = desk_toy_data
    cfg = preset("desk-toy")
    cfg.train.epochs = 1
    live = build_model(cfg)
    train(live, desk_toy_data[0])
    before = raw_scores(live, test_set)
    path = tmp_path / "live.daad"
    ckpt.save_checkpoint(live, path)
    assert raw_scores(ckpt.load_checkpoint(path), test_set) == before


# 9 ---------------------------------------------------------------------------------

@criterion(9, "eval reports rec/ali/fused AUROC; fused equals the hand-composed oracle per image")
def test_criterion_9_mode_ablation(tmp_path):
    cfg = preset("desk-toy")
    cfg.model.variant = "daad_plus"
    cfg.output_dir = str(tmp_path / "plus")
    (tmp_path / "plus.json").write_text(cfg.to_json())
    assert main(["train", "--config", str(tmp_path / "plus.json"), "--threads", "1"]) == 0
    ev = tmp_path / "eval"
    assert main(["eval", str(tmp_path / "plus" / "checkpoint.daad"), "--score-mode", "fused",
                 "--out", str(ev)]) == 0
    summary = read_csv(ev / "summary.csv")[0]
    for col in ("auroc_rec_only", "auroc_ali_only", "auroc_fused"):
        assert 0.0 <= float(summary[col]) <= 1.0
    gamma = float(summary["gamma"])
    assert gamma == 0.9

    rows = read_csv(ev / "scores.csv")
    rec = [float(r["rec_raw"]) for r in rows]
    ali = [float(r["ali_raw"]) for r in rows]
    lo_r, hi_r, lo_a, hi_a = min(rec), max(rec), min(ali), max(ali)
    for r, rr, aa in zip(rows, rec, ali):
        rec_scaled = (rr - lo_r) / (hi_r - lo_r)
        ali_scaled = (aa - lo_a) / (hi_a - lo_a)
        assert float(r["rec_scaled"]) == rec_scaled
        assert float(r["ali_scaled"]) == ali_scaled
        assert float(r["fused"]) == gamma * rec_scaled + (1 - gamma) * ali_scaled
