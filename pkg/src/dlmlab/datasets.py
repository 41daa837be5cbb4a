"""Synthetic classification datasets and the CSV dataset format.

CSV layout: header ``f0,...,f{k-1},label`` (or ``target`` for regression),
one example per row, no missing values.
"""
from __future__ import annotations

import csv
import io
import os

import numpy as np

from dlmlab.fileio import atomic_write_text
from dlmlab.models import Batch

GENERATORS = ("two-moons", "xor-blobs", "blobs", "label-noise")
NOISE_STREAM = 7


def two_moons(n: int, rng: np.random.Generator, noise: float = 0.15):
    n0 = n // 2
    n1 = n - n0
    t0 = rng.uniform(0.0, np.pi, n0)
    t1 = rng.uniform(0.0, np.pi, n1)
    upper = np.column_stack([np.cos(t0), np.sin(t0)])
    lower = np.column_stack([1.0 - np.cos(t1), 0.5 - np.sin(t1)])
    x = np.vstack([upper, lower]) + noise * rng.standard_normal((n, 2))
    y = np.concatenate([np.zeros(n0, int), np.ones(n1, int)])
    return x, y


def xor_blobs(n: int, rng: np.random.Generator, spread: float = 0.35):
    centers = np.array([[-1.0, -1.0], [1.0, 1.0], [-1.0, 1.0], [1.0, -1.0]])
    labels = np.array([0, 0, 1, 1])
    which = np.arange(n) % 4
    x = centers[which] + spread * rng.standard_normal((n, 2))
    return x, labels[which]


def blobs(n: int, rng: np.random.Generator, spread: float = 0.5):
    centers = np.array([[-2.0, 0.0], [2.0, 0.0]])
    which = np.arange(n) % 2
    return centers[which] + spread * rng.standard_normal((n, 2)), which


_BASE = {"two-moons": two_moons, "xor-blobs": xor_blobs, "blobs": blobs}


def flip_labels(y: np.ndarray, rate: float, classes: int, rng: np.random.Generator) -> np.ndarray:
    """Reassign a ``rate`` fraction of labels to a different, uniformly chosen class."""
    y = y.copy()
    k = int(round(rate * len(y)))
    if k == 0:
        return y
    idx = rng.choice(len(y), size=k, replace=False)
    y[idx] = (y[idx] + rng.integers(1, classes, size=k)) % classes
    return y


def stratified_split(y: np.ndarray, rng: np.random.Generator, train_frac: float = 0.8):
    train_idx, test_idx = [], []
    for c in np.unique(y):
        members = rng.permutation(np.flatnonzero(y == c))
        cut = int(round(train_frac * len(members)))
        train_idx.append(members[:cut])
        test_idx.append(members[cut:])
    return np.sort(np.concatenate(train_idx)), np.sort(np.concatenate(test_idx))


def generate(kind: str, n: int, seed: int, rate: float = 0.0, base: str = "two-moons"):
    """Deterministic ``(x, y)`` for a generator kind; ``label-noise`` wraps ``base``."""
    if kind not in GENERATORS:
        raise ValueError(f"unknown generator {kind!r}; choose from {GENERATORS}")
    if n < 10:
        raise ValueError("n must be at least 10")
    if not 0 <= rate < 0.5:
        raise ValueError("label-noise rate must lie in [0, 0.5)")
    if kind == "label-noise":
        if base not in _BASE:
            raise ValueError(f"unknown base generator {base!r}")
        x, y = _BASE[base](n, np.random.default_rng([seed]))
        return x, flip_labels(y, rate, 2, np.random.default_rng([seed, NOISE_STREAM]))
    if rate:
        raise ValueError("rate only applies to the label-noise generator")
    return _BASE[kind](n, np.random.default_rng([seed]))


def generate_split(kind: str, n: int, seed: int, rate: float = 0.0, base: str = "two-moons"):
    x, y = generate(kind, n, seed, rate, base)
    tr, te = stratified_split(y, np.random.default_rng([seed, 1]))
    return Batch(x[tr], y[tr]), Batch(x[te], y[te])


# ----------------------------------------------------------------- CSV


def to_csv(batch: Batch) -> str:
    x = np.asarray(batch.inputs, dtype=np.float64).reshape(len(batch), -1)
    y = np.asarray(batch.targets)
    regression = not np.issubdtype(y.dtype, np.integer)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([f"f{j}" for j in range(x.shape[1])] + ["target" if regression else "label"])
    for row, target in zip(x, y):
        writer.writerow([repr(float(v)) for v in row] + [repr(float(target)) if regression else int(target)])
    return buf.getvalue()


def write_csv(batch: Batch, path) -> None:
    atomic_write_text(path, to_csv(batch))


def read_csv(path) -> Batch:
    if not os.path.exists(path):
        raise FileNotFoundError(f"dataset file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise ValueError(f"{path}: dataset has no examples")
    header = rows[0]
    k = len(header) - 1
    if header[:k] != [f"f{j}" for j in range(k)] or header[-1] not in ("label", "target"):
        raise ValueError(f"{path}: header must be f0..f{{k-1}} followed by label or target")
    if any(len(r) != k + 1 for r in rows[1:]):
        raise ValueError(f"{path}: rows are not rectangular")
    try:
        x = np.array([[float(v) for v in r[:k]] for r in rows[1:]])
        if header[-1] == "label":
            y = np.array([int(r[k]) for r in rows[1:]])
            if y.min() < 0:
                raise ValueError(f"{path}: negative label")
        else:
            y = np.array([float(r[k]) for r in rows[1:]])
    except ValueError as exc:
        raise ValueError(f"{path}: {exc}") from None
    if not np.isfinite(x).all():
        raise ValueError(f"{path}: non-finite feature values")
    return Batch(x, y)
