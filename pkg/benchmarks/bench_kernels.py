"""Time the compiled kernels against the numpy fallback.

Usage: python3 benchmarks/bench_kernels.py [--repeat N] [--csv PATH]
"""
from __future__ import annotations

import argparse
import csv
import sys
import timeit

import numpy as np

from daad import _kernels_py as py

try:
    from daad import _kernels_ext as ext
except ImportError:
    ext = None

# shapes taken from the desk-toy generator (64 x 64 input, base 16) and a 256 x 256 first layer
CASES = [
    ("im2col 3x3 16ch 64px", "im2col", (8, 16, 64, 64), dict(kh=3, kw=3, stride=1, padding=1)),
    ("im2col 3x3 64ch 8px", "im2col", (8, 64, 8, 8), dict(kh=3, kw=3, stride=1, padding=1)),
    ("im2col 4x4/2 3ch 256px", "im2col", (2, 3, 256, 256), dict(kh=4, kw=4, stride=2, padding=1)),
    ("col2im 3x3 16ch 64px", "col2im", (8, 16, 64, 64), dict(kh=3, kw=3, stride=1, padding=1)),
    ("maxpool 2x2 16ch 64px", "maxpool_forward", (8, 16, 64, 64), dict(window=2, stride=2)),
    ("maxpool bwd 2x2 16ch 64px", "maxpool_backward", (8, 16, 64, 64), dict(window=2, stride=2)),
]


def _call(mod, kind, x, kw, aux):
    if kind == "im2col":
        return lambda: mod.im2col(x, kw["kh"], kw["kw"], kw["stride"], kw["padding"])
    if kind == "col2im":
        return lambda: mod.col2im(aux, x.shape, kw["kh"], kw["kw"], kw["stride"], kw["padding"])
    if kind == "maxpool_forward":
        return lambda: mod.maxpool_forward(x, kw["window"], kw["stride"])
    grad, arg = aux
    return lambda: mod.maxpool_backward(grad, arg, x.shape, kw["window"], kw["stride"])


def run(repeat: int) -> list[dict]:
    rng = np.random.default_rng(0)
    rows = []
    for name, kind, shape, kw in CASES:
        x = rng.standard_normal(shape).astype(np.float32)
        aux = None
        if kind == "col2im":
            aux = py.im2col(x, kw["kh"], kw["kw"], kw["stride"], kw["padding"])
        elif kind == "maxpool_backward":
            out, arg = py.maxpool_forward(x, kw["window"], kw["stride"])
            aux = (np.ones_like(out), arg)
        row = {"case": name}
        for label, mod in (("numpy", py), ("cython", ext)):
            if mod is None:
                row[f"{label}_ms"] = float("nan")
                continue
            fn = _call(mod, kind, x, kw, aux)
            fn()
            row[f"{label}_ms"] = min(timeit.repeat(fn, number=1, repeat=repeat)) * 1e3
        row["speedup"] = row["numpy_ms"] / row["cython_ms"]
        rows.append(row)
    return rows


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=7)
    p.add_argument("--csv", type=str, default=None, help="also write the table as CSV")
    args = p.parse_args(argv)
    if ext is None:
        print("compiled kernels not built; only the numpy timings are meaningful", file=sys.stderr)
    rows = run(args.repeat)
    print(f"{'case':28s} {'numpy ms':>10s} {'cython ms':>10s} {'speedup':>8s}")
    for r in rows:
        print(f"{r['case']:28s} {r['numpy_ms']:10.3f} {r['cython_ms']:10.3f} {r['speedup']:8.2f}")
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)
    return 0


if __name__ == "__main__":
    sys.exit(main())
