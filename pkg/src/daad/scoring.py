"""Anomaly scores, min-max scaling, fusion and AUROC."""
from __future__ import annotations

import csv
import os
from dataclasses import dataclass, fields
from typing import Sequence

import numpy as np

SCORE_MODES = ("rec_only", "ali_only", "fused")
_MODE_ALIASES = {"rec": "rec_only", "ali": "ali_only", "fused": "fused",
                 "rec_only": "rec_only", "ali_only": "ali_only"}
SCORE_COLUMNS = ("image_id", "label", "rec_raw", "ali_raw", "rec_scaled", "ali_scaled", "fused")


class MissingDiscriminatorError(ValueError):
    """A score mode needs alignment scores but no discriminator is available."""


def normalize_mode(mode: str) -> str:
    try:
        return _MODE_ALIASES[mode]
    except KeyError:
        raise ValueError(f"unknown score mode {mode!r}; expected rec, ali or fused") from None


@dataclass
class ScoreRecord:
    image_id: str
    label: int
    rec_raw: float
    ali_raw: float | None = None
    rec_scaled: float | None = None
    ali_scaled: float | None = None
    fused: float | None = None


def rec_score(x: np.ndarray, x_hat: np.ndarray) -> float:
    """Mean squared pixel difference of one image."""
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise ValueError(f"rec_score: shape mismatch {x.shape} vs {x_hat.shape}")
    return float(np.mean((x - x_hat) ** 2))


def ali_score(feat_x: np.ndarray, feat_x_hat: np.ndarray) -> float:
    """Mean squared difference of discriminator features of one image."""
    a = np.asarray(feat_x, dtype=np.float64).ravel()
    b = np.asarray(feat_x_hat, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError(f"ali_score: dimension mismatch {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def minmax_scale(values: Sequence[float]) -> list[float]:
    """Linear map to [0, 1]; a constant input maps to all zeros."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("minmax_scale of an empty list")
    lo, hi = v.min(), v.max()
    if hi == lo:
        return [0.0] * v.size
    return ((v - lo) / (hi - lo)).tolist()


def fuse(rec_scaled: float, ali_scaled: float, gamma: float = 0.9) -> float:
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
    return gamma * rec_scaled + (1.0 - gamma) * ali_scaled


def auroc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Area under the ROC curve via midranks (Mann-Whitney U).

    Equal to the fraction of (anomalous, normal) pairs where the anomaly
    scores higher, counting ties as one half.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape:
        raise ValueError("scores and labels must have the same length")
    n_pos = int(np.sum(y == 1))
    n_neg = int(np.sum(y == 0))
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUROC needs both normal (0) and anomalous (1) samples; got a single class")
    order = np.argsort(s, kind="mergesort")
    sorted_s = s[order]
    # midranks, doubled so every quantity stays an exact integer
    ranks2 = np.empty(len(s), dtype=np.int64)
    start = 0
    n = len(s)
    while start < n:
        stop = start + 1
        while stop < n and sorted_s[stop] == sorted_s[start]:
            stop += 1
        ranks2[order[start:stop]] = start + stop + 1  # 2 * mean of 1-based ranks start+1..stop
        start = stop
    u2 = int(ranks2[y == 1].sum()) - n_pos * (n_pos + 1)
    return u2 / (2.0 * n_pos * n_neg)


def auroc_pairwise(scores: Sequence[float], labels: Sequence[int]) -> float:
    """O(n^2) reference: direct count over all anomalous/normal pairs."""
    s = list(map(float, scores))
    pos = [v for v, y in zip(s, labels) if y == 1]
    neg = [v for v, y in zip(s, labels) if y == 0]
    if not pos or not neg:
        raise ValueError("AUROC needs both classes")
    twice = 0
    for a in pos:
        for b in neg:
            twice += 2 if a > b else (1 if a == b else 0)
    return twice / (2.0 * len(pos) * len(neg))


def scale_records(records: list[ScoreRecord], gamma: float = 0.9) -> list[ScoreRecord]:
    """Fill scaled and fused fields in place; the scaling population is ``records``."""
    rec = minmax_scale([r.rec_raw for r in records])
    has_ali = all(r.ali_raw is not None for r in records)
    ali = minmax_scale([r.ali_raw for r in records]) if has_ali else None
    for k, r in enumerate(records):
        r.rec_scaled = rec[k]
        if ali is not None:
            r.ali_scaled = ali[k]
            r.fused = fuse(rec[k], ali[k], gamma)
    return records


def mode_column(records: list[ScoreRecord], mode: str) -> list[float]:
    mode = normalize_mode(mode)
    if mode == "rec_only":
        return [r.rec_scaled for r in records]
    if any(r.ali_raw is None for r in records):
        raise MissingDiscriminatorError(f"score mode {mode!r} requires a discriminator")
    if mode == "ali_only":
        return [r.ali_scaled for r in records]
    return [r.fused for r in records]


def auroc_for_mode(records: list[ScoreRecord], mode: str) -> float:
    return auroc(mode_column(records, mode), [r.label for r in records])


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_scores_csv(records: list[ScoreRecord], path: str | os.PathLike) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SCORE_COLUMNS)
        for r in records:
            w.writerow([_fmt(getattr(r, c)) for c in SCORE_COLUMNS])


def read_scores_csv(path: str | os.PathLike) -> list[ScoreRecord]:
    types = {f.name: f.type for f in fields(ScoreRecord)}
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            kw = {}
            for k, v in row.items():
                if k == "image_id":
                    kw[k] = v
                elif k == "label":
                    kw[k] = int(v)
                elif k in types:
                    kw[k] = float(v) if v != "" else None
            out.append(ScoreRecord(**kw))
    return out
