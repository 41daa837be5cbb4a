"""Tests for the multi-sample ELBO and DLM losses, smoothing, and test metrics."""
import math

import numpy as np
import pytest

from dlmlab import autodiff as ad
from dlmlab.autodiff import Tensor
from dlmlab.models import ArchSpec, Batch, Categorical, Dense, Gaussian, init_posterior, sample_log_likelihood
from dlmlab.objectives import (
    ObjectiveSpec,
    batch_loss_from_noise,
    dlm_batch_loss,
    elbo_batch_loss,
    loss_and_grad,
    per_example_data_loss,
    smoothed_log,
    test_metrics,
    test_metrics_from_noise,
)
from dlmlab.variational import MeanFieldGaussian, PriorSpec, RegularizerSpec, kl_to_prior

from conftest import check_gradients

TWO_CLASS = ArchSpec((1,), (Dense(2),), Categorical(2))


def _bias_theta(p_true):
    """Parameters of TWO_CLASS whose class-0 probability is ``p_true`` for any input."""
    return np.array([0.0, 0.0, math.log(p_true), math.log(1.0 - p_true)])


def _frozen(thetas):
    """Posterior and noise that reproduce the given parameter samples exactly via mu + sigma * eps."""
    thetas = np.atleast_2d(thetas)
    q = MeanFieldGaussian(thetas[0], np.zeros(thetas.shape[1]))
    eps = (thetas - q.mu) / q.sigma
    eps[0] = 0.0
    return q, eps


def _data_term(kind, thetas, eta=0.0):
    q, eps = _frozen(thetas)
    spec = ObjectiveSpec(kind=kind, eta=eta, m_train=len(eps))
    out = batch_loss_from_noise(TWO_CLASS, Tensor(q.mu), Tensor(q.rho), Batch(np.zeros((1, 1)), np.array([0])), spec, eps)
    return out


# -----------------------------------------------------------------------
# smoothed log
# -----------------------------------------------------------------------


def test_smoothed_log_certain_event():
    assert abs(smoothed_log(0.0, 0.001)) < 1e-15


def test_smoothed_log_impossible_event():
    np.testing.assert_allclose(smoothed_log(-1e4, 0.001), -6.907755278982137, rtol=1e-14)


def test_smoothed_log_zero_is_identity():
    t = Tensor([-3.0, -0.2])
    assert smoothed_log(t, 0.0) is t
    assert smoothed_log(-1.25, 0.0) == -1.25


def test_smoothed_log_rejects_bad_factor():
    with pytest.raises(ValueError):
        smoothed_log(-1.0, 1.0)


def test_smoothed_log_lower_bound(rng):
    a = 0.001
    logp = -rng.exponential(5.0, 200)
    assert np.all(smoothed_log(Tensor(logp), a).data >= math.log(a))


# -----------------------------------------------------------------------
# data terms on hand-built cases
# -----------------------------------------------------------------------


def test_elbo_single_deterministic_example():
    out = _data_term("elbo", [_bias_theta(0.5)])
    np.testing.assert_allclose(out.data, 0.6931471805599453, rtol=1e-14)


def test_elbo_two_samples():
    out = _data_term("elbo", [_bias_theta(0.5), _bias_theta(0.25)])
    np.testing.assert_allclose(out.data, 1.0397207708399179, rtol=1e-13)


def test_dlm_two_samples():
    out = _data_term("dlm", [_bias_theta(0.5), _bias_theta(0.25)])
    np.testing.assert_allclose(out.data, 0.9808292530117262, rtol=1e-13)


def test_weighted_regulariser_per_example():
    arch = ArchSpec((1,), (Dense(1),), Gaussian())
    q = MeanFieldGaussian.from_mean_var([1.0, 0.0], [0.05, 0.05])
    assert abs(kl_to_prior(q, PriorSpec(0.05)) - 10.0) < 1e-9
    spec = ObjectiveSpec(kind="elbo", eta=0.1, m_train=1, n_data=100)
    out = batch_loss_from_noise(arch, Tensor(q.mu), Tensor(q.rho), Batch(np.zeros((1, 1)), np.zeros(1)), spec, np.zeros((1, 2)))
    np.testing.assert_allclose(out.weighted_reg, 0.01, rtol=1e-10)
    assert abs(out.total - (out.data + 0.1 * out.reg / 100)) <= 1e-12


def test_single_sample_losses_coincide(small_arch, moons, rng):
    q = init_posterior(small_arch, (4, 0), sigma_init=0.3)
    batch = moons["train"].take(np.arange(16))
    eps = rng.standard_normal((1, q.dim))
    e = batch_loss_from_noise(small_arch, Tensor(q.mu), Tensor(q.rho), batch, ObjectiveSpec("elbo", m_train=1), eps)
    d = batch_loss_from_noise(small_arch, Tensor(q.mu), Tensor(q.rho), batch, ObjectiveSpec("dlm", m_train=1), eps)
    assert e.data == d.data


def test_identical_samples_close_the_gap(small_arch, moons, rng):
    q = init_posterior(small_arch, (4, 0), sigma_init=0.3)
    batch = moons["train"].take(np.arange(16))
    eps = np.repeat(rng.standard_normal((1, q.dim)), 4, axis=0)
    e = batch_loss_from_noise(small_arch, Tensor(q.mu), Tensor(q.rho), batch, ObjectiveSpec("elbo", m_train=4), eps)
    d = batch_loss_from_noise(small_arch, Tensor(q.mu), Tensor(q.rho), batch, ObjectiveSpec("dlm", m_train=4), eps)
    assert abs(e.data - d.data) <= 1e-12


def test_public_batch_losses_check_kind(small_arch, moons):
    q = init_posterior(small_arch, (0, 0))
    batch = moons["train"].take(np.arange(8))
    with pytest.raises(ValueError):
        elbo_batch_loss(small_arch, q, batch, ObjectiveSpec("dlm"), (0, 2, 0, 0))
    with pytest.raises(ValueError):
        dlm_batch_loss(small_arch, q, batch, ObjectiveSpec("elbo"), (0, 2, 0, 0))
    e = elbo_batch_loss(small_arch, q, batch, ObjectiveSpec("elbo"), (0, 2, 0, 0))
    d = dlm_batch_loss(small_arch, q, batch, ObjectiveSpec("dlm"), (0, 2, 0, 0))
    assert d.data <= e.data


def test_objective_spec_validation():
    for bad in ({"kind": "pac"}, {"eta": -1.0}, {"m_train": 0}, {"smoothing": 1.0}, {"n_data": 0}, {"sampling": "x"}):
        with pytest.raises(ValueError):
            ObjectiveSpec(**bad)


# -----------------------------------------------------------------------
# properties
# -----------------------------------------------------------------------


def test_jensen_gap_random_instances(rng):
    for i in range(100):
        arch = ArchSpec((3,), (Dense(5, "tanh"), Dense(3)), Categorical(3))
        q = MeanFieldGaussian(rng.standard_normal(arch.num_params), rng.uniform(-2.0, 0.5, arch.num_params))
        batch = Batch(rng.standard_normal((8, 3)), rng.integers(0, 3, 8))
        m = int(rng.choice([2, 5, 10]))
        eps = rng.standard_normal((m, q.dim))
        args = (arch, Tensor(q.mu), Tensor(q.rho), batch)
        e = batch_loss_from_noise(*args, ObjectiveSpec("elbo", m_train=m), eps)
        d = batch_loss_from_noise(*args, ObjectiveSpec("dlm", m_train=m), eps)
        assert d.data <= e.data + 1e-10


def test_dlm_term_shrinks_with_more_samples(small_arch, moons):
    q = init_posterior(small_arch, (1, 0), sigma_init=0.8)
    batch = moons["train"].take(np.arange(32))
    means, ses = [], []
    for m in (1, 5, 10):
        vals = []
        for r in range(1000):
            eps = np.random.default_rng([m, r]).standard_normal((m, q.dim))
            vals.append(batch_loss_from_noise(small_arch, Tensor(q.mu), Tensor(q.rho), batch, ObjectiveSpec("dlm", m_train=m), eps).data)
        means.append(np.mean(vals))
        ses.append(np.std(vals, ddof=1) / math.sqrt(len(vals)))
    for i in range(2):
        assert means[i + 1] <= means[i] + 3 * math.hypot(ses[i], ses[i + 1])


@pytest.mark.parametrize("kind", ["elbo", "dlm"])
@pytest.mark.parametrize("sampling", ["shared", "per_example"])
@pytest.mark.parametrize("a", [0.0, 0.001])
def test_loss_gradients_with_frozen_noise(kind, sampling, a, small_arch, moons, rng):
    batch = moons["train"].take(np.arange(6))
    spec = ObjectiveSpec(kind, eta=0.1, m_train=3, smoothing=a, n_data=50, sampling=sampling)
    d = small_arch.num_params
    eps = rng.standard_normal((3, 6, d) if sampling == "per_example" else (3, d))
    check_gradients(
        lambda mu, rho: batch_loss_from_noise(small_arch, mu, rho, batch, spec, eps).tensor,
        {"mu": rng.standard_normal(d) * 0.7, "rho": rng.uniform(-3.0, 0.0, d)},
    )


def test_loss_and_grad_agrees_with_tape(small_arch, moons, rng):
    q = init_posterior(small_arch, (2, 0), sigma_init=0.1)
    batch = moons["train"].take(np.arange(10))
    spec = ObjectiveSpec("dlm", m_train=4, n_data=100)
    eps = rng.standard_normal((4, q.dim))
    out, g_mu, g_rho = loss_and_grad(small_arch, q, batch, spec, eps)
    value, g = ad.value_and_grad(lambda mu, rho: batch_loss_from_noise(small_arch, mu, rho, batch, spec, eps).tensor,
                                 {"mu": q.mu, "rho": q.rho})
    assert value == out.total
    np.testing.assert_array_equal(g["mu"], g_mu)
    np.testing.assert_array_equal(g["rho"], g_rho)


def test_decomposition_identity(small_arch, moons, rng):
    for reg in ("fixed_kl", "cvi_mean", "cvi_mv", "eb"):
        q = init_posterior(small_arch, (2, 0), sigma_init=0.1)
        spec = ObjectiveSpec("elbo", eta=0.3, m_train=2, n_data=77, regularizer=RegularizerSpec(kind=reg))
        out = batch_loss_from_noise(small_arch, Tensor(q.mu), Tensor(q.rho), moons["train"].take(np.arange(9)), spec,
                                    rng.standard_normal((2, q.dim)))
        assert abs(out.total - (out.data + 0.3 * out.reg / 77)) <= 1e-12


def test_per_example_smoothed_loss_bounded(small_arch, moons, rng):
    q = MeanFieldGaussian(rng.standard_normal(small_arch.num_params) * 20, np.zeros(small_arch.num_params))
    logp = sample_log_likelihood(
        small_arch, Tensor(q.mu + q.sigma * rng.standard_normal((5, q.dim))), moons["train"])
    for kind in ("elbo", "dlm"):
        per = per_example_data_loss(logp, kind, 0.001).data
        assert np.all(per <= -math.log(0.001))


# -----------------------------------------------------------------------
# test metrics
# -----------------------------------------------------------------------


def _const_arch(classes):
    return ArchSpec((1,), (Dense(classes),), Categorical(classes))


def test_metrics_uniform_predictive():
    arch = _const_arch(10)
    q = MeanFieldGaussian(np.zeros(arch.num_params), np.full(arch.num_params, -30.0))
    data = Batch(np.zeros((7, 1)), np.arange(7))
    m = test_metrics(arch, q, data, 10, (0, 4))
    np.testing.assert_allclose(m.nll, 2.302585092994046, rtol=1e-12)


def test_metrics_confident_and_correct():
    arch = _const_arch(2)
    q = MeanFieldGaussian(np.array([0.0, 0.0, 60.0, 0.0]), np.full(4, -30.0))
    m = test_metrics_from_noise(arch, q, Batch(np.zeros((4, 1)), np.zeros(4, int)), np.zeros((3, 4)))
    assert m.nll < 1e-15
    assert m.accuracy == 1.0


def test_metrics_fixed_probability():
    arch = _const_arch(2)
    q = MeanFieldGaussian(_bias_theta(0.7), np.zeros(4))
    m = test_metrics_from_noise(arch, q, Batch(np.zeros((5, 1)), np.zeros(5, int)), np.zeros((10, 4)))
    np.testing.assert_allclose(m.nll, 0.35667494393873245, rtol=1e-13)
    assert m.accuracy == 1.0


def test_metrics_ranges(mlp, moons):
    q = init_posterior(mlp, (0, 0), sigma_init=0.5)
    m = test_metrics(mlp, q, moons["test"], 10, (0, 4))
    assert m.nll >= 0.0
    assert 0.0 <= m.accuracy <= 1.0


def test_metrics_chunking_is_invisible(small_arch, moons):
    q = init_posterior(small_arch, (0, 0), sigma_init=0.5)
    eps = np.random.default_rng(0).standard_normal((4, q.dim))
    a = test_metrics_from_noise(small_arch, q, moons["test"], eps)
    b = test_metrics_from_noise(small_arch, q, moons["test"], eps, chunk=7)
    np.testing.assert_allclose(a.nll, b.nll, rtol=1e-14)
    assert a.accuracy == b.accuracy


def test_metrics_need_samples(small_arch, moons):
    with pytest.raises(ValueError):
        test_metrics(small_arch, init_posterior(small_arch, (0, 0)), moons["test"], 0, (0,))
