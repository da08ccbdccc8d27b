"""``daad`` command-line interface.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import copy
import csv
import sys
import time
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from .config import PRESETS, ConfigError, RunConfig, preset
from .data import generate_stripes, load_folder_dataset, read_image, save_png
from .scoring import SCORE_MODES, MissingDiscriminatorError, auroc_for_mode, normalize_mode, write_scores_csv

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2
CHECKPOINT_NAME = "checkpoint.daad"
TOY_SWEEP_COLUMNS = ("rate", "auroc", "mean_rec_normal", "mean_rec_anom")
MEM_SWEEP_COLUMNS = ("N", "auroc")


class UsageError(Exception):
    """Bad arguments or inputs; maps to exit code 2."""


def _log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def _int_list(text: str) -> list[int]:
    try:
        vals = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated integer list, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


# -- config handling -----------------------------------------------------------

def resolve_config(args, default_preset: str = "desk-toy") -> RunConfig:
    if getattr(args, "config", None):
        cfg = RunConfig.load(args.config)
    else:
        cfg = preset(getattr(args, "preset", None) or default_preset)
    if getattr(args, "data", None):
        cfg.data.source = "folder"
        cfg.data.root = str(args.data)
    if getattr(args, "seed", None) is not None:
        cfg.train.seed = args.seed
    if getattr(args, "epochs", None) is not None:
        cfg.train.epochs = args.epochs
    if getattr(args, "out", None):
        cfg.output_dir = str(args.out)
    return cfg


def load_data(cfg: RunConfig):
    if cfg.data.source == "folder":
        return load_folder_dataset(cfg.data.root, cfg.model.input_size)
    return generate_stripes(cfg.data.stripes, cfg.model.scales)


def write_config(cfg: RunConfig, out_dir: Path, name: str = "config.json") -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / name).write_text(cfg.to_json() + "\n")


# -- commands ------------------------------------------------------------------

def cmd_train(args) -> int:
    from .training import build_model, train, write_loss_csv

    cfg = resolve_config(args).validate()
    out = Path(cfg.output_dir)
    train_set, _ = load_data(cfg)
    write_config(cfg, out)
    model = build_model(cfg)
    t0 = time.time()
    rows = train(model, train_set)
    write_loss_csv(rows, out / "loss.csv")
    ckpt.save_checkpoint(model, out / CHECKPOINT_NAME)
    last = rows[-1].total if rows else float("nan")
    _log(f"trained {model.epoch} epochs ({model.step} steps) in {time.time() - t0:.1f}s; final loss {last:.6g}")
    print(out / CHECKPOINT_NAME)
    return EXIT_OK


def _summary_line(aucs: dict[str, float]) -> str:
    return "AUROC " + " ".join(f"{m}={v:.6f}" for m, v in aucs.items())


def cmd_eval(args) -> int:
    from .training import evaluate

    mode = normalize_mode(args.score_mode)
    model = ckpt.load_checkpoint(args.checkpoint, require_discriminator=mode != "rec_only")
    cfg = copy.deepcopy(model.config)
    if args.data:
        cfg.data.source, cfg.data.root = "folder", str(args.data)
    if args.out:
        cfg.output_dir = str(args.out)
    cfg.score_mode = mode
    cfg.model.gamma = args.gamma
    cfg.validate()
    _, test_set = load_data(cfg)
    if not test_set:
        raise ValueError("evaluation set is empty")
    auc, records = evaluate(model, test_set, mode, args.gamma)
    aucs = {"rec_only": auroc_for_mode(records, "rec_only")}
    if model.discriminator is not None:
        aucs["ali_only"] = auroc_for_mode(records, "ali_only")
        aucs["fused"] = auroc_for_mode(records, "fused")
    out = Path(cfg.output_dir)
    write_config(cfg, out)
    write_scores_csv(records, out / "scores.csv")
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["mode", "gamma"] + [f"auroc_{m}" for m in aucs])
        w.writerow([mode, repr(float(args.gamma))] + [repr(v) for v in aucs.values()])
    print(f"{mode} AUROC {auc:.6f}")
    print(_summary_line(aucs))
    return EXIT_OK


def cmd_score(args) -> int:
    from .tensor import Tensor, no_grad
    from .scoring import ali_score, rec_score

    model = ckpt.load_checkpoint(args.checkpoint)
    try:
        x = read_image(args.image, model.config.model.input_size)[None]
    except (ValueError, FileNotFoundError) as exc:
        raise UsageError(str(exc)) from exc
    gen, disc = model.generator.eval(), model.discriminator
    with no_grad():
        x_t = Tensor(x)
        x_hat = gen(x_t)
        parts = [f"rec_raw={rec_score(x[0], x_hat.data[0]):.8g}"]
        if disc is not None:
            disc.eval()
            _, f_real = disc(x_t)
            _, f_fake = disc(x_hat)
            parts.append(f"ali_raw={ali_score(f_real.data[0], f_fake.data[0]):.8g}")
    _log("warning: scaled and fused scores need a reference set; printing raw scores only")
    print(f"{args.image} " + " ".join(parts))
    return EXIT_OK


def _sweep_run(cfg: RunConfig, train_set, test_set, run_dir: Path):
    from .training import build_model, evaluate, train, write_loss_csv

    write_config(cfg, run_dir)
    model = build_model(cfg)
    rows = train(model, train_set)
    write_loss_csv(rows, run_dir / "loss.csv")
    auc, records = evaluate(model, test_set, "rec_only", cfg.model.gamma)
    rec = np.array([r.rec_raw for r in records])
    lab = np.array([r.label for r in records])
    return model, auc, float(rec[lab == 0].mean()), float(rec[lab == 1].mean())


def _save_recon_grid(model, test_set, path: Path, per_class: int = 4) -> None:
    from .training import reconstruct

    normals = [s for s in test_set if s.label == 0][:per_class]
    anoms = [s for s in test_set if s.label == 1][:per_class]
    chosen = normals + anoms
    x_hat = reconstruct(model, chosen)
    tiles = [np.concatenate([s.pixels, r], axis=1) for s, r in zip(chosen, x_hat)]  # input above recon
    gap = np.ones((tiles[0].shape[0], tiles[0].shape[1], 2), np.float32)
    row = []
    for t in tiles:
        row += [t, gap]
    save_png(np.concatenate(row[:-1], axis=2), path)


def _mean_rows(results: list[dict], key: str, cols) -> list[dict]:
    out = []
    for k in sorted({r[key] for r in results}):
        group = [r for r in results if r[key] == k]
        row = {key: k}
        for c in cols:
            row[c] = float(np.mean([g[c] for g in group]))
        out.append(row)
    return out


def _write_rows(path: Path, columns, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([r[c] if isinstance(r[c], int) else repr(float(r[c])) for c in columns])


def _sweep_seeds(args) -> list[int]:
    if args.seeds is not None:
        return args.seeds
    return [args.seed] if args.seed is not None else None


def cmd_toy_sweep(args) -> int:
    base = resolve_config(args, default_preset="desk-toy-sweep").validate()
    if base.model.generator_variant not in ("daad", "memae"):
        raise UsageError(f"toy-sweep varies memory division rates; variant {base.model.variant!r} has no memory")
    seeds = _sweep_seeds(args) or [0, 1, 2]
    out = Path(base.output_dir)
    write_config(base, out)
    train_set, test_set = load_data(base)
    results = []
    for rate in args.rates:
        for seed in seeds:
            cfg = copy.deepcopy(base)
            cfg.model.rates = (rate, rate, 1)
            cfg.train.seed = seed
            try:
                cfg.validate()
            except ConfigError as exc:
                raise UsageError(f"rate {rate}: {exc}") from exc
            t0 = time.time()
            model, auc, rn, ra = _sweep_run(cfg, train_set, test_set, out / "runs" / f"rate{rate}_seed{seed}")
            if seed == seeds[0]:
                _save_recon_grid(model, test_set, out / f"recon_rate{rate}.png")
            _log(f"rate {rate} seed {seed}: auroc {auc:.4f} rec normal {rn:.5f} anomaly {ra:.5f} "
                 f"({time.time() - t0:.0f}s)")
            results.append({"rate": rate, "seed": seed, "auroc": auc, "mean_rec_normal": rn, "mean_rec_anom": ra})
    _write_rows(out / "toy_sweep_runs.csv", ("rate", "seed") + TOY_SWEEP_COLUMNS[1:], results)
    summary = _mean_rows(results, "rate", TOY_SWEEP_COLUMNS[1:])
    _write_rows(out / "toy_sweep.csv", TOY_SWEEP_COLUMNS, summary)
    for r in summary:
        print(f"rate={r['rate']} auroc={r['auroc']:.4f} mean_rec_normal={r['mean_rec_normal']:.5f} "
              f"mean_rec_anom={r['mean_rec_anom']:.5f}")
    return EXIT_OK


def cmd_mem_sweep(args) -> int:
    base = resolve_config(args, default_preset="desk-toy-sweep").validate()
    if base.model.generator_variant not in ("daad", "memae"):
        raise UsageError(f"mem-sweep varies memory size; variant {base.model.variant!r} has no memory")
    if any(n < 1 for n in args.sizes):
        raise UsageError("memory sizes must be >= 1")
    seeds = _sweep_seeds(args) or [0]
    out = Path(base.output_dir)
    write_config(base, out)
    train_set, test_set = load_data(base)
    results = []
    for n in sorted(set(args.sizes)):
        for seed in seeds:
            cfg = copy.deepcopy(base)
            cfg.model.bank_size = n
            cfg.train.seed = seed
            cfg.validate()
            _, auc, rn, ra = _sweep_run(cfg, train_set, test_set, out / "runs" / f"N{n}_seed{seed}")
            _log(f"N {n} seed {seed}: auroc {auc:.4f}")
            results.append({"N": n, "seed": seed, "auroc": auc})
    summary = _mean_rows(results, "N", ("auroc",))
    _write_rows(out / "mem_sweep.csv", MEM_SWEEP_COLUMNS, summary)
    for r in summary:
        print(f"N={r['N']} auroc={r['auroc']:.4f}")
    return EXIT_OK


def cmd_print_config(args) -> int:
    cfg = resolve_config(args)
    cfg.validate(check_data=False)
    print(cfg.to_json())
    return EXIT_OK


# -- parser ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override train.seed")
    common.add_argument("--threads", type=int, default=None, help="BLAS thread count (1 for bit-reproducible runs)")
    common.add_argument("--out", type=str, default=None, help="output directory")

    config_opts = argparse.ArgumentParser(add_help=False)
    g = config_opts.add_mutually_exclusive_group()
    g.add_argument("--config", type=str, help="JSON run config")
    g.add_argument("--preset", choices=sorted(PRESETS), help="built-in preset")
    config_opts.add_argument("--epochs", type=int, default=None, help="override train.epochs")

    p = argparse.ArgumentParser(prog="daad", description="Block-wise memory autoencoder anomaly detection.")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", parents=[common, config_opts], help="train a model")
    t.add_argument("--data", type=str, help="folder dataset root (overrides the config data source)")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", parents=[common], help="score a labelled test set")
    e.add_argument("checkpoint")
    e.add_argument("--data", type=str, help="folder dataset root (default: the checkpoint's data source)")
    e.add_argument("--score-mode", default="rec", choices=["rec", "ali", "fused"] + list(SCORE_MODES))
    e.add_argument("--gamma", type=float, default=0.9)
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("score", parents=[common], help="raw scores of one PNG image")
    s.add_argument("checkpoint")
    s.add_argument("image")
    s.set_defaults(func=cmd_score)

    ts = sub.add_parser("toy-sweep", parents=[common, config_opts], help="block-size sweep on stripes")
    ts.add_argument("--rates", type=_int_list, default=[1, 2, 4, 8])
    ts.add_argument("--seeds", type=_int_list, default=None)
    ts.set_defaults(func=cmd_toy_sweep)

    ms = sub.add_parser("mem-sweep", parents=[common, config_opts], help="memory-size sweep on stripes")
    ms.add_argument("--sizes", type=_int_list, default=[1, 5, 20, 50, 200])
    ms.add_argument("--seeds", type=_int_list, default=None)
    ms.set_defaults(func=cmd_mem_sweep)

    pc = sub.add_parser("print-config", parents=[common, config_opts], help="print an expanded config")
    pc.set_defaults(func=cmd_print_config)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.threads is not None:
            if args.threads < 1:
                raise UsageError("--threads must be >= 1")
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=args.threads):
                return args.func(args)
        return args.func(args)
    except (UsageError, ConfigError, MissingDiscriminatorError, ckpt.CheckpointError, FileNotFoundError) as exc:
        msg = str(exc)
        if isinstance(exc, MissingDiscriminatorError) and "discriminator required" not in msg:
            msg += " (discriminator required)"
        _log(f"daad: error: {msg}")
        return EXIT_USAGE
    except (ValueError, FloatingPointError, OSError) as exc:
        _log(f"daad: runtime error: {exc}")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
