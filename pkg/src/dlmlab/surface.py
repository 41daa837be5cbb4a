"""Interpolation paths between two posteriors and paired run comparison."""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from dlmlab.models import Batch
from dlmlab.objectives import ObjectiveSpec, test_metrics_from_noise, train_losses_from_noise
from dlmlab.trainer import Checkpoint
from dlmlab.variational import EVAL_TEST, EVAL_TRAIN, MeanFieldGaussian, draw_noise

DEFAULT_ALPHAS = tuple(round(0.05 * i, 2) for i in range(21))
PATH_COLUMNS = ("alpha", "elbo_with_reg", "elbo_no_reg", "dlm_with_reg", "dlm_no_reg", "reg_value", "test_nll", "test_acc")
COMPARE_COLUMNS = ("dataset", "arch", "seed", "nll_dlm", "nll_elbo", "delta")


def interpolate(qa: MeanFieldGaussian, qb: MeanFieldGaussian, alpha: float) -> MeanFieldGaussian:
    """Straight line in (mean, variance) space: mu and sigma^2 are both convex-combined.

    The endpoints are returned exactly (``alpha`` 0 gives ``qa``, 1 gives ``qb``),
    avoiding a lossy variance -> rho round trip.
    """
    if qa.dim != qb.dim:
        raise ValueError(f"dimension mismatch: {qa.dim} vs {qb.dim}")
    if alpha == 0:
        return qa
    if alpha == 1:
        return qb
    mu = (1.0 - alpha) * qa.mu + alpha * qb.mu
    var = (1.0 - alpha) * qa.var + alpha * qb.var
    if np.any(var <= 0):
        raise ValueError(f"interpolated variance is non-positive at alpha={alpha}")
    return MeanFieldGaussian.from_mean_var(mu, var)


@dataclass(frozen=True)
class PathRecord:
    alpha: float
    elbo_with_reg: float
    elbo_no_reg: float
    dlm_with_reg: float
    dlm_no_reg: float
    reg_value: float
    test_nll: float
    test_acc: float

    def as_row(self) -> tuple:
        return tuple(getattr(self, c) for c in PATH_COLUMNS)


def evaluate_point(arch, q, train: Batch, test: Batch, objective: ObjectiveSpec, eps_train, eps_test, alpha=0.0) -> PathRecord:
    elbo, dlm, reg = train_losses_from_noise(arch, q, train, objective, eps_train)
    weighted = reg * (objective.eta / objective.n_data)
    metrics = test_metrics_from_noise(arch, q, test, eps_test)
    return PathRecord(alpha, elbo + weighted, elbo, dlm + weighted, dlm, reg, metrics.nll, metrics.accuracy)


def path_scan(
    a: Checkpoint,
    b: Checkpoint,
    train: Batch,
    test: Batch,
    objective: ObjectiveSpec,
    alphas=DEFAULT_ALPHAS,
    m_eval: int = 10,
    eval_seed: int = 0,
    resample: bool = False,
) -> list[PathRecord]:
    """Evaluate both objectives (with and without the weighted regularizer) and test metrics along the path.

    The same noise is used at every alpha unless ``resample`` is set, so
    each curve is a smooth function of alpha. ``objective.n_data`` is taken
    from ``train``.
    """
    if a.arch != b.arch:
        raise ValueError("path endpoints have different architectures")
    alphas = [float(x) for x in alphas]
    if alphas != sorted(alphas):
        raise ValueError("alphas must be sorted")
    if any(x < -0.25 or x > 1.25 for x in alphas):
        raise ValueError("alphas must lie in [-0.25, 1.25]")
    objective = objective.replace(n_data=len(train))
    d = a.q.dim
    records = []
    for i, alpha in enumerate(alphas):
        q = interpolate(a.q, b.q, alpha)
        key_extra = (i,) if resample else ()
        eps_train = draw_noise((eval_seed, EVAL_TRAIN, *key_extra), objective.m_train, d)
        eps_test = draw_noise((eval_seed, EVAL_TEST, *key_extra), m_eval, d)
        records.append(evaluate_point(a.arch, q, train, test, objective, eps_train, eps_test, alpha))
    return records


# ----------------------------------------------------------------- comparison


@dataclass(frozen=True)
class RunSummary:
    label: str
    dataset: str
    arch: str
    seed: int
    test_nll: float


@dataclass(frozen=True)
class Comparison:
    dataset: str
    arch: str
    seed: int
    nll_dlm: float
    nll_elbo: float
    delta: float

    def as_row(self) -> tuple:
        return tuple(getattr(self, c) for c in COMPARE_COLUMNS)


@dataclass(frozen=True)
class GroupSummary:
    dataset: str
    arch: str
    count: int
    mean: float
    min: float
    max: float


def compare_runs(runs, dlm_label: str = "dlm", elbo_label: str = "elbo"):
    """Pair runs by (dataset, arch, seed) and report delta = nll(DLM) - nll(ELBO).

    Positive delta means the DLM run has the higher (worse) test loss.
    Returns ``(pairs, groups)``; raises ValueError on any unpaired or duplicated run.
    """
    slots: dict[tuple, dict[str, RunSummary]] = defaultdict(dict)
    for run in runs:
        if run.label not in (dlm_label, elbo_label):
            raise ValueError(f"run label {run.label!r} is neither {dlm_label!r} nor {elbo_label!r}")
        key = (run.dataset, run.arch, run.seed)
        if run.label in slots[key]:
            raise ValueError(f"duplicate {run.label!r} run for {key}")
        slots[key][run.label] = run
    pairs = []
    for key in sorted(slots):
        slot = slots[key]
        if len(slot) != 2:
            raise ValueError(f"unpaired run for dataset={key[0]} arch={key[1]} seed={key[2]}")
        nd, ne = slot[dlm_label].test_nll, slot[elbo_label].test_nll
        pairs.append(Comparison(*key, nd, ne, nd - ne))
    by_group: dict[tuple, list[float]] = defaultdict(list)
    for p in pairs:
        by_group[(p.dataset, p.arch)].append(p.delta)
    groups = [
        GroupSummary(ds, ar, len(v), float(np.mean(v)), min(v), max(v))
        for (ds, ar), v in sorted(by_group.items())
    ]
    return pairs, groups
