"""Adam training of the variational objectives, with continuation and trajectory logging."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from dlmlab import autodiff as ad
from dlmlab.models import ArchSpec, Batch, init_posterior
from dlmlab.objectives import (
    ObjectiveSpec,
    loss_and_grad,
    noise_shape,
    test_metrics_from_noise,
    train_losses_from_noise,
)
from dlmlab.variational import (
    EVAL_TEST,
    EVAL_TRAIN,
    INIT,
    SHUFFLE,
    TRAIN_NOISE,
    BoundSpec,
    MeanFieldGaussian,
    draw_noise,
    project,
)

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


class TrainingAborted(ArithmeticError):
    """A loss or gradient became non-finite; carries the epoch and batch index."""

    def __init__(self, epoch: int, batch: int, reason: str):
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}: {reason}")
        self.epoch = epoch
        self.batch = batch


# ----------------------------------------------------------------- Adam


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0)


def adam_step(params, grads, state: AdamState, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update. Returns ``(new_params, new_state)``; inputs are not mutated."""
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise ValueError("parameter, gradient and state shapes must match")
    t = state.t + 1
    m = beta1 * state.m + (1.0 - beta1) * grads
    v = beta2 * state.v + (1.0 - beta2) * (grads * grads)
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    new = params - lr * m_hat / (np.sqrt(v_hat) + eps)
    return new, AdamState(m, v, t)


# ----------------------------------------------------------------- config and records


@dataclass(frozen=True)
class TrainConfig:
    arch: ArchSpec
    objective: ObjectiveSpec
    epochs: int = 200
    batch_size: int = 128
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    eval_seed: int | None = None
    sigma_init: float = 0.01
    bounds: BoundSpec | None = None
    eval_every: int = 1
    m_eval: int = 10

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch size must be at least 1")
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if self.seed < 0 or (self.eval_seed is not None and self.eval_seed < 0):
            raise ValueError("seeds must be non-negative integers")
        if not self.sigma_init > 0:
            raise ValueError("sigma_init must be positive")
        if self.eval_every < 1 or self.m_eval < 1:
            raise ValueError("eval_every and m_eval must be at least 1")

    @property
    def resolved_eval_seed(self) -> int:
        return self.seed if self.eval_seed is None else self.eval_seed


@dataclass(frozen=True)
class TrajectoryRow:
    epoch: int
    train_elbo_loss: float
    train_dlm_loss: float
    reg_value: float
    test_nll: float
    test_acc: float
    wall_time_seconds: float = field(default=0.0, compare=False)


TRAJECTORY_COLUMNS = ("epoch", "train_elbo_loss", "train_dlm_loss", "reg_value", "test_nll", "test_acc")


@dataclass(frozen=True)
class Checkpoint:
    arch: ArchSpec
    q: MeanFieldGaussian
    seed: int
    objective: ObjectiveSpec
    epochs_completed: int
    eval_seed: int | None = None
    version: int = CHECKPOINT_VERSION

    def __post_init__(self):
        if self.q.dim != self.arch.num_params:
            raise ValueError(f"posterior has {self.q.dim} parameters, architecture needs {self.arch.num_params}")


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    trajectory: list[TrajectoryRow]


# ----------------------------------------------------------------- evaluation


def evaluate_row(config: TrainConfig, q: MeanFieldGaussian, train: Batch, test: Batch, epoch: int, t0: float) -> TrajectoryRow:
    """Both objectives on the full training set plus test metrics, all under frozen evaluation noise."""
    spec = config.objective
    seed = config.resolved_eval_seed
    eps_train = draw_noise((seed, EVAL_TRAIN), spec.m_train, q.dim)
    elbo, dlm, reg = train_losses_from_noise(config.arch, q, train, spec, eps_train)
    weighted = reg * (spec.eta / spec.n_data)
    metrics = test_metrics_from_noise(config.arch, q, test, draw_noise((seed, EVAL_TEST), config.m_eval, q.dim))
    return TrajectoryRow(epoch, elbo + weighted, dlm + weighted, reg, metrics.nll, metrics.accuracy,
                         time.perf_counter() - t0)


# ----------------------------------------------------------------- training loop


def _run(config: TrainConfig, q: MeanFieldGaussian, data: dict, epochs_before: int) -> TrainResult:
    train, test = data["train"], data["test"]
    spec = config.objective
    if spec.n_data != len(train):
        spec = replace(spec, n_data=len(train))
        config = replace(config, objective=spec)
    arch = config.arch
    n, d = len(train), q.dim
    if config.bounds is not None:
        q = project(q, config.bounds)

    t0 = time.perf_counter()
    rows = [evaluate_row(config, q, train, test, 0, t0)]
    state = AdamState.zeros(2 * d)
    for epoch in range(1, config.epochs + 1):
        order = np.random.default_rng([config.seed, SHUFFLE, epochs_before + epoch]).permutation(n)
        for b, start in enumerate(range(0, n, config.batch_size)):
            batch = train.take(order[start:start + config.batch_size])
            eps = draw_noise(
                (config.seed, TRAIN_NOISE, epochs_before + epoch, b),
                spec.m_train,
                noise_shape(spec, len(batch), d),
            )
            try:
                loss, g_mu, g_rho = loss_and_grad(arch, q, batch, spec, eps)
            except (ad.NonFiniteError, ad.DomainError) as exc:
                raise TrainingAborted(epoch, b, str(exc)) from exc
            grads = np.concatenate([g_mu, g_rho])
            if not np.isfinite(grads).all():
                raise TrainingAborted(epoch, b, "non-finite gradient")
            params, state = adam_step(
                np.concatenate([q.mu, q.rho]), grads, state,
                config.lr, config.beta1, config.beta2, config.adam_eps,
            )
            if not np.isfinite(params).all():
                raise TrainingAborted(epoch, b, "non-finite parameters after update")
            q = MeanFieldGaussian(params[:d], params[d:])
            if config.bounds is not None:
                q = project(q, config.bounds)
        if epoch % config.eval_every == 0 or epoch == config.epochs:
            try:
                row = evaluate_row(config, q, train, test, epoch, t0)
            except (ad.NonFiniteError, ad.DomainError) as exc:
                raise TrainingAborted(epoch, -1, f"evaluation failed: {exc}") from exc
            rows.append(row)
            logger.info("epoch %d elbo %.5f dlm %.5f nll %.5f acc %.4f", epoch, row.train_elbo_loss,
                        row.train_dlm_loss, row.test_nll, row.test_acc)
    ckpt = Checkpoint(arch, q, config.seed, spec, epochs_before + config.epochs, config.eval_seed)
    return TrainResult(ckpt, rows)


def train(config: TrainConfig, data: dict) -> TrainResult:
    """Train from a fresh random initialisation.

    ``data`` maps ``"train"`` and ``"test"`` to :class:`Batch` objects. The
    result is a deterministic function of ``(config, data)``. A row is logged
    at epoch 0 (the initialisation), every ``eval_every`` epochs, and at the
    final epoch.
    """
    if config.epochs < 1:
        raise ValueError("train needs at least one epoch")
    q = init_posterior(config.arch, (config.seed, INIT), config.sigma_init)
    return _run(config, q, data, 0)


def continue_train(checkpoint: Checkpoint, objective: ObjectiveSpec, config: TrainConfig, data: dict) -> TrainResult:
    """Resume from a checkpoint with a (possibly different) objective and fresh Adam moments."""
    if checkpoint.arch != config.arch:
        raise ValueError("checkpoint architecture does not match the configured architecture")
    if config.eval_seed is None:
        # keep the source run's evaluation noise so the handoff row is comparable
        source_eval = checkpoint.seed if checkpoint.eval_seed is None else checkpoint.eval_seed
        config = replace(config, eval_seed=source_eval)
    config = replace(config, objective=objective)
    return _run(config, checkpoint.q, data, checkpoint.epochs_completed)
