"""Atomic file writes, CSV tables and checkpoint (de)serialisation."""
from __future__ import annotations

import csv
import io
import json
import os
import re
import tempfile

import numpy as np

from dlmlab.models import ArchSpec
from dlmlab.objectives import ObjectiveSpec
from dlmlab.trainer import CHECKPOINT_VERSION, Checkpoint
from dlmlab.variational import MeanFieldGaussian, RegularizerSpec


class CheckpointError(ValueError):
    pass


def atomic_write_text(path, text: str) -> None:
    """Write via a temporary file in the same directory, then rename over ``path``."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def table_text(columns, rows) -> str:
    """CSV text; floats use ``repr`` so they round-trip exactly, text cells are quoted when needed."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    writer.writerows([fmt(v) for v in row] for row in rows)
    return buf.getvalue()


def write_table(path, columns, rows) -> None:
    atomic_write_text(path, table_text(columns, rows))


# ----------------------------------------------------------------- checkpoints


def _objective_to_dict(spec: ObjectiveSpec) -> dict:
    r = spec.regularizer
    return {
        "kind": spec.kind,
        "eta": spec.eta,
        "m_train": spec.m_train,
        "smoothing": spec.smoothing,
        "n_data": spec.n_data,
        "sampling": spec.sampling,
        "regularizer": {f: getattr(r, f) for f in r.__dataclass_fields__},
    }


def _objective_from_dict(d: dict) -> ObjectiveSpec:
    return ObjectiveSpec(
        kind=d["kind"],
        eta=float(d["eta"]),
        m_train=int(d["m_train"]),
        smoothing=float(d["smoothing"]),
        regularizer=RegularizerSpec(**d["regularizer"]),
        n_data=int(d["n_data"]),
        sampling=d["sampling"],
    )


def _real17(v: float) -> str:
    if not np.isfinite(v):
        return "NaN" if np.isnan(v) else ("Infinity" if v > 0 else "-Infinity")
    text = format(v, ".17g")
    return text if any(c in text for c in ".en") else text + ".0"


def _dumps_17g(doc) -> str:
    """``json.dumps`` with every float written to 17 significant digits."""
    floats: list[str] = []

    def mark(obj):
        if isinstance(obj, dict):
            return {k: mark(v) for k, v in obj.items()}
        if isinstance(obj, (list, tuple)):
            return [mark(v) for v in obj]
        if isinstance(obj, (float, np.floating)):
            floats.append(_real17(float(obj)))
            return f"@F{len(floats) - 1}@"
        return obj

    text = json.dumps(mark(doc), indent=1)
    return re.sub(r'"@F(\d+)@"', lambda m: floats[int(m.group(1))], text)


def checkpoint_text(ckpt: Checkpoint) -> str:
    """JSON with every real written to 17 significant digits (exact double round trip)."""
    doc = {
        "version": ckpt.version,
        "arch": ckpt.arch.to_dict(),
        "seed": ckpt.seed,
        "eval_seed": ckpt.eval_seed,
        "objective": _objective_to_dict(ckpt.objective),
        "epochs_completed": ckpt.epochs_completed,
        "mu": ckpt.q.mu.tolist(),
        "rho": ckpt.q.rho.tolist(),
    }
    return _dumps_17g(doc) + "\n"


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    atomic_write_text(path, checkpoint_text(ckpt))


def load_checkpoint(path, expect_arch: ArchSpec | None = None) -> Checkpoint:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: not valid JSON ({exc})") from None
    missing = [k for k in ("version", "arch", "mu", "rho", "seed", "objective", "epochs_completed") if k not in doc]
    if missing:
        raise CheckpointError(f"{path}: missing fields {', '.join(missing)}")
    if doc["version"] != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: checkpoint version {doc['version']} is not supported (expected {CHECKPOINT_VERSION})")
    try:
        arch = ArchSpec.from_dict(doc["arch"])
    except (KeyError, ValueError, TypeError) as exc:
        raise CheckpointError(f"{path}: bad arch field ({exc})") from None
    d = arch.num_params
    for name in ("mu", "rho"):
        if len(doc[name]) != d:
            raise CheckpointError(f"{path}: field {name!r} has {len(doc[name])} entries but the architecture has {d} parameters")
    if expect_arch is not None and arch != expect_arch:
        raise CheckpointError(f"{path}: architecture mismatch: checkpoint has {arch.to_dict()}, expected {expect_arch.to_dict()}")
    q = MeanFieldGaussian(np.array(doc["mu"], dtype=np.float64), np.array(doc["rho"], dtype=np.float64))
    return Checkpoint(
        arch=arch,
        q=q,
        seed=int(doc["seed"]),
        objective=_objective_from_dict(doc["objective"]),
        epochs_completed=int(doc["epochs_completed"]),
        eval_seed=doc.get("eval_seed"),
        version=doc["version"],
    )
