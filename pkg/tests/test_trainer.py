"""Tests for Adam, the training loop and continuation."""
import numpy as np
import pytest

from dlmlab.models import ArchSpec, Categorical, Dense, init_posterior, preset
from dlmlab.objectives import ObjectiveSpec, loss_and_grad
from dlmlab.trainer import (
    AdamState,
    Checkpoint,
    TrainConfig,
    TrainingAborted,
    adam_step,
    continue_train,
    train,
)
from dlmlab.variational import INIT, TRAIN_NOISE, BoundSpec, draw_noise, is_feasible


def _config(arch, **kw):
    base = dict(arch=arch, objective=ObjectiveSpec("elbo"), epochs=3, batch_size=32, lr=0.01, seed=0)
    base.update(kw)
    return TrainConfig(**base)


# -----------------------------------------------------------------------
# Adam
# -----------------------------------------------------------------------


def test_adam_first_step():
    new, state = adam_step(np.array([0.0]), np.array([1.0]), AdamState.zeros(1), lr=0.001)
    np.testing.assert_allclose(new, [-0.001 / (1.0 + 1e-8)], rtol=1e-15)
    assert state.t == 1


def test_adam_zero_gradient_is_noop():
    params = np.array([1.0, -2.0, 3.0])
    state = AdamState.zeros(3)
    for _ in range(3):
        params2, state = adam_step(params, np.zeros(3), state)
        np.testing.assert_array_equal(params2, params)


def test_adam_symmetry():
    new, _ = adam_step(np.array([0.5, 0.5]), np.array([0.3, 0.3]), AdamState.zeros(2))
    assert new[0] == new[1]


def test_adam_does_not_mutate_inputs():
    params, grads, state = np.ones(2), np.ones(2), AdamState.zeros(2)
    adam_step(params, grads, state)
    np.testing.assert_array_equal(params, 1.0)
    np.testing.assert_array_equal(state.m, 0.0)
    assert state.t == 0


def test_adam_shape_check():
    with pytest.raises(ValueError):
        adam_step(np.ones(2), np.ones(3), AdamState.zeros(2))


# -----------------------------------------------------------------------
# training
# -----------------------------------------------------------------------


def test_config_validation(small_arch):
    for bad in ({"epochs": -1}, {"batch_size": 0}, {"lr": 0.0}, {"seed": -1}, {"m_eval": 0}):
        with pytest.raises(ValueError):
            _config(small_arch, **bad)
    with pytest.raises(ValueError):
        train(_config(small_arch, epochs=0), {})


def test_training_is_deterministic(small_arch, moons):
    a = train(_config(small_arch), moons)
    b = train(_config(small_arch), moons)
    assert a.trajectory == b.trajectory
    assert a.checkpoint.q == b.checkpoint.q


def test_different_seeds_differ(small_arch, moons):
    a = train(_config(small_arch, seed=0), moons)
    b = train(_config(small_arch, seed=1), moons)
    assert a.checkpoint.q != b.checkpoint.q


def test_trajectory_rows_and_jensen(small_arch, moons):
    res = train(_config(small_arch, epochs=5, eval_every=2), moons)
    assert [r.epoch for r in res.trajectory] == [0, 2, 4, 5]
    for row in res.trajectory:
        assert row.train_dlm_loss <= row.train_elbo_loss + 1e-12
        assert row.test_nll >= 0.0
        assert 0.0 <= row.test_acc <= 1.0


def test_epoch_zero_row_is_the_initialisation(small_arch, moons):
    cfg = _config(small_arch, epochs=1)
    res = train(cfg, moons)
    q0 = init_posterior(small_arch, (cfg.seed, INIT), cfg.sigma_init)
    res0 = continue_train(
        Checkpoint(small_arch, q0, cfg.seed, cfg.objective, 0), cfg.objective, cfg, moons
    )
    assert res.trajectory[0] == res0.trajectory[0]


def test_first_step_gradients_match_for_single_sample(small_arch, moons):
    q = init_posterior(small_arch, (0, INIT), 0.01)
    batch = moons["train"].take(np.arange(32))
    eps = draw_noise((0, TRAIN_NOISE, 1, 0), 1, q.dim)
    _, ge, re = loss_and_grad(small_arch, q, batch, ObjectiveSpec("elbo", m_train=1, n_data=160), eps)
    _, gd, rd = loss_and_grad(small_arch, q, batch, ObjectiveSpec("dlm", m_train=1, n_data=160), eps)
    np.testing.assert_array_equal(ge, gd)
    np.testing.assert_array_equal(re, rd)


def test_bounds_hold_on_every_logged_checkpoint(small_arch, moons):
    bounds = BoundSpec(0.5, 0.001)
    for epochs in (1, 2, 3):
        res = train(_config(small_arch, epochs=epochs, bounds=bounds, sigma_init=0.5), moons)
        assert is_feasible(res.checkpoint.q, bounds)


def test_separable_blobs_are_learned(blobs_data, mlp):
    cfg = TrainConfig(mlp, ObjectiveSpec("elbo", eta=0.1), epochs=50, batch_size=128, lr=1e-3, seed=0)
    res = train(cfg, blobs_data)
    assert res.trajectory[-1].test_acc > 0.95


def test_non_finite_loss_aborts(small_arch, moons):
    with pytest.raises(TrainingAborted) as info:
        train(_config(small_arch, lr=1e6, epochs=5), moons)
    assert info.value.epoch >= 1
    assert info.value.batch >= -1


# -----------------------------------------------------------------------
# continuation
# -----------------------------------------------------------------------


def test_continue_zero_epochs_is_noop(small_arch, moons):
    res = train(_config(small_arch), moons)
    cont = continue_train(res.checkpoint, res.checkpoint.objective, _config(small_arch, epochs=0), moons)
    assert cont.checkpoint.q == res.checkpoint.q
    assert cont.checkpoint.epochs_completed == res.checkpoint.epochs_completed


def test_continue_handoff_row_matches_source(small_arch, moons):
    res = train(_config(small_arch), moons)
    dlm = ObjectiveSpec("dlm", n_data=len(moons["train"]))
    cont = continue_train(res.checkpoint, dlm, _config(small_arch, objective=dlm, epochs=2, seed=9), moons)
    first, last = cont.trajectory[0], res.trajectory[-1]
    assert first.train_elbo_loss == last.train_elbo_loss
    assert first.train_dlm_loss == last.train_dlm_loss
    assert cont.checkpoint.objective.kind == "dlm"
    assert cont.checkpoint.epochs_completed == 5


def test_continue_with_zero_eta_still_logs_regulariser(small_arch, moons):
    res = train(_config(small_arch), moons)
    no_kl = ObjectiveSpec("dlm", eta=0.0)
    cont = continue_train(res.checkpoint, no_kl, _config(small_arch, objective=no_kl, epochs=1), moons)
    row = cont.trajectory[-1]
    assert row.reg_value > 0.0
    # with eta = 0 the logged objective is the bare data term
    assert cont.trajectory[0].train_elbo_loss < res.trajectory[-1].train_elbo_loss


def test_continue_rejects_other_architecture(small_arch, moons):
    res = train(_config(small_arch), moons)
    other = ArchSpec((2,), (Dense(3, "tanh"), Dense(2)), Categorical(2))
    with pytest.raises(ValueError):
        continue_train(res.checkpoint, res.checkpoint.objective, _config(other), moons)


def test_checkpoint_dimension_check(small_arch):
    q = init_posterior(preset("mlp-2x64", (2,), Categorical(2)), (0, 0))
    with pytest.raises(ValueError):
        Checkpoint(small_arch, q, 0, ObjectiveSpec(), 1)
