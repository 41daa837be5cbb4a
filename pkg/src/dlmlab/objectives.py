"""Multi-sample ELBO and DLM minibatch losses, smoothing, and test metrics.

Both losses are per-example: ``mean_batch(data term) + eta * R(q) / N``, so
minibatch gradients are unbiased for the full-data objective divided by N.

* elbo data term: ``(1/M) sum_m -log p(y | theta_m, x)``
* dlm data term:  ``-log (1/M) sum_m p(y | theta_m, x)`` (computed as a
  log-mean-exp over samples)
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from dlmlab import autodiff as ad
from dlmlab.autodiff import Tensor
from dlmlab.models import ArchSpec, Batch, Categorical, network_output, sample_log_likelihood
from dlmlab.variational import MeanFieldGaussian, RegularizerSpec, draw_noise, regularizer_tensor, reparameterize

OBJECTIVE_KINDS = ("elbo", "dlm")
SAMPLING_MODES = ("shared", "per_example")


@dataclass(frozen=True)
class ObjectiveSpec:
    kind: str = "elbo"
    eta: float = 0.1
    m_train: int = 5
    smoothing: float = 0.0
    regularizer: RegularizerSpec = field(default_factory=RegularizerSpec)
    n_data: int = 1
    sampling: str = "shared"

    def __post_init__(self):
        if self.kind not in OBJECTIVE_KINDS:
            raise ValueError(f"objective kind must be one of {OBJECTIVE_KINDS}, got {self.kind!r}")
        if not self.eta >= 0:
            raise ValueError("eta must be non-negative")
        if self.m_train < 1:
            raise ValueError("m_train must be at least 1")
        if not 0 <= self.smoothing < 1:
            raise ValueError("smoothing must lie in [0, 1)")
        if self.n_data < 1:
            raise ValueError("dataset size must be positive")
        if self.sampling not in SAMPLING_MODES:
            raise ValueError(f"sampling must be one of {SAMPLING_MODES}")

    def replace(self, **changes) -> "ObjectiveSpec":
        return replace(self, **changes)


@dataclass(frozen=True)
class LossBreakdown:
    total: float
    data: float
    reg: float
    weighted_reg: float
    tensor: Tensor | None = field(default=None, repr=False, compare=False)


def smoothed_log(logp, a: float):
    """log((1 - a) p + a) from log p, without leaving log space.

    Accepts a float or a :class:`Tensor`. ``a == 0`` returns ``logp`` itself.
    """
    if not 0 <= a < 1:
        raise ValueError("smoothing factor must lie in [0, 1)")
    if a == 0:
        return logp
    if isinstance(logp, Tensor):
        return ad.logaddexp(logp + math.log1p(-a), math.log(a))
    return float(np.logaddexp(logp + math.log1p(-a), math.log(a)))


def per_example_data_loss(logp: Tensor, kind: str, a: float = 0.0) -> Tensor:
    """Per-example data term from (M, B) sample log-likelihoods, shape (B,)."""
    logp = smoothed_log(logp, a)
    if kind == "elbo":
        return -logp.mean(axis=0)
    if kind == "dlm":
        return math.log(logp.shape[0]) - ad.logsumexp(logp, axis=0)
    raise ValueError(f"unknown objective kind {kind!r}")


def noise_shape(spec: ObjectiveSpec, batch_size: int, dim: int) -> tuple[int, ...]:
    return (batch_size, dim) if spec.sampling == "per_example" else (dim,)


def batch_loss_from_noise(
    arch: ArchSpec, mu: Tensor, rho: Tensor, batch: Batch, spec: ObjectiveSpec, eps: np.ndarray, kind: str | None = None
) -> LossBreakdown:
    """Loss for fixed noise ``eps`` of shape (M, D) or (M, B, D)."""
    kind = kind or spec.kind
    theta = reparameterize(mu, rho, eps)
    logp = sample_log_likelihood(arch, theta, batch)
    data = per_example_data_loss(logp, kind, spec.smoothing).mean()
    reg = regularizer_tensor(mu, rho, spec.regularizer)
    weighted = reg * (spec.eta / spec.n_data)
    total = data + weighted
    return LossBreakdown(total.item(), data.item(), reg.item(), weighted.item(), total)


def _batch_loss(kind, arch, q, batch, spec, key):
    eps = draw_noise(key, spec.m_train, noise_shape(spec, len(batch), q.dim))
    return batch_loss_from_noise(arch, Tensor(q.mu, True), Tensor(q.rho, True), batch, spec, eps, kind)


def elbo_batch_loss(arch: ArchSpec, q: MeanFieldGaussian, batch: Batch, spec: ObjectiveSpec, key) -> LossBreakdown:
    if spec.kind != "elbo":
        raise ValueError("elbo_batch_loss needs an elbo objective spec")
    return _batch_loss("elbo", arch, q, batch, spec, key)


def dlm_batch_loss(arch: ArchSpec, q: MeanFieldGaussian, batch: Batch, spec: ObjectiveSpec, key) -> LossBreakdown:
    if spec.kind != "dlm":
        raise ValueError("dlm_batch_loss needs a dlm objective spec")
    return _batch_loss("dlm", arch, q, batch, spec, key)


def loss_and_grad(arch, q: MeanFieldGaussian, batch, spec, eps):
    """(LossBreakdown, d total / d mu, d total / d rho) for fixed noise."""
    mu, rho = Tensor(q.mu, True), Tensor(q.rho, True)
    out = batch_loss_from_noise(arch, mu, rho, batch, spec, eps)
    g = ad.grad(out.tensor, {"mu": mu, "rho": rho})
    return out, g["mu"], g["rho"]


@dataclass(frozen=True)
class TestMetrics:
    nll: float
    accuracy: float


def _chunks(n, size):
    for start in range(0, n, size):
        yield slice(start, min(n, start + size))


def test_metrics_from_noise(arch, q: MeanFieldGaussian, data: Batch, eps: np.ndarray, chunk: int = 1024) -> TestMetrics:
    if len(data) == 0:
        raise ValueError("empty dataset")
    theta = Tensor(q.mu + q.sigma * eps)
    m = len(eps)
    if isinstance(arch.likelihood, Categorical):
        true_lp, correct = [], []
        for sl in _chunks(len(data), chunk):
            part = data.take(sl)
            logits = network_output(arch, theta, part.inputs)
            pred = ad.logsumexp(ad.log_softmax(logits, axis=-1), axis=0).data - math.log(m)
            y = np.asarray(part.targets)
            true_lp.append(pred[np.arange(len(part)), y])
            correct.append(pred.argmax(axis=1) == y)
        nll = -float(np.mean(np.concatenate(true_lp)))
        return TestMetrics(max(nll, 0.0), float(np.mean(np.concatenate(correct))))
    # regression: predictive density log-mean-exp; accuracy is undefined
    lps = [
        (ad.logsumexp(sample_log_likelihood(arch, theta, data.take(sl)), axis=0).data - math.log(m))
        for sl in _chunks(len(data), chunk)
    ]
    return TestMetrics(-float(np.mean(np.concatenate(lps))), float("nan"))


def test_metrics(arch, q: MeanFieldGaussian, data: Batch, m_eval: int, key) -> TestMetrics:
    """Predictive NLL (no smoothing) and argmax accuracy with ``m_eval`` samples."""
    if m_eval < 1:
        raise ValueError("m_eval must be at least 1")
    return test_metrics_from_noise(arch, q, data, draw_noise(key, m_eval, q.dim))


test_metrics.__test__ = False  # not a pytest test
test_metrics_from_noise.__test__ = False
TestMetrics.__test__ = False


def train_losses_from_noise(arch, q: MeanFieldGaussian, data: Batch, spec: ObjectiveSpec, eps, chunk: int = 1024):
    """Full-dataset elbo and dlm data terms and regularizer value under shared noise ``eps``.

    Returns ``(elbo_data, dlm_data, reg)``; no gradients are recorded.
    """
    theta = Tensor(q.mu + q.sigma * eps)
    elbo, dlm = [], []
    for sl in _chunks(len(data), chunk):
        logp = sample_log_likelihood(arch, theta, data.take(sl))
        elbo.append(per_example_data_loss(logp, "elbo", spec.smoothing).data)
        dlm.append(per_example_data_loss(logp, "dlm", spec.smoothing).data)
    reg = regularizer_tensor(Tensor(q.mu), Tensor(q.rho), spec.regularizer).item()
    return float(np.mean(np.concatenate(elbo))), float(np.mean(np.concatenate(dlm))), reg
