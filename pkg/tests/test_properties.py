"""Property-based tests (hypothesis) for invariants that hold over whole input families."""
import json
import math

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dlmlab import autodiff as ad
from dlmlab import config as cfgmod
from dlmlab.autodiff import Tensor
from dlmlab.conjugate import exact_dlm_loss, exact_elbo_loss
from dlmlab.fileio import _dumps_17g
from dlmlab.objectives import per_example_data_loss, smoothed_log
from dlmlab.surface import interpolate
from dlmlab.variational import BoundSpec, MeanFieldGaussian, inv_softplus, is_feasible, project, softplus

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)
vectors = st.integers(1, 8).flatmap(lambda n: arrays(np.float64, n, elements=finite))


@given(arrays(np.float64, st.integers(1, 20), elements=st.floats(1e-8, 1e3)))
def test_softplus_inverse(sigma):
    np.testing.assert_allclose(softplus(inv_softplus(sigma)), sigma, rtol=1e-10)


@given(vectors, st.floats(-1e3, 1e3))
def test_logsumexp_shift(x, c):
    lhs = ad.logsumexp(Tensor(x + c), axis=0).item()
    rhs = ad.logsumexp(Tensor(x), axis=0).item() + c
    # adding c to x rounds each entry by up to half an ulp of |x| + |c|
    assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(rhs), abs(c) + np.abs(x).max())


@given(vectors)
def test_log_softmax_normalised(x):
    assert abs(np.exp(ad.log_softmax(Tensor(x)).data).sum() - 1.0) <= 1e-12


@given(st.floats(-700, 0), st.floats(1e-6, 0.999))
def test_smoothed_log_range(logp, a):
    out = smoothed_log(logp, a)
    assert math.log(a) - 1e-12 <= out <= 1e-12


@given(
    st.integers(1, 10).flatmap(
        lambda m: arrays(np.float64, (m, 3), elements=st.floats(-30, 0))
    )
)
def test_jensen_on_arbitrary_log_likelihoods(logp):
    elbo = per_example_data_loss(Tensor(logp), "elbo").data
    dlm = per_example_data_loss(Tensor(logp), "dlm").data
    assert np.all(dlm <= elbo + 1e-10)
    if logp.shape[0] == 1:
        np.testing.assert_array_equal(dlm, elbo)


@settings(max_examples=50)
@given(
    st.integers(1, 30).flatmap(
        lambda d: st.tuples(arrays(np.float64, d, elements=st.floats(-1e3, 1e3)), arrays(np.float64, d, elements=st.floats(-10, 10)))
    ),
    st.sampled_from([30.0, 50.0, 90.0, 120.0]),
    st.floats(0.01, 1.0),
)
def test_projection_properties(params, b_m, b_v):
    mu, rho = params
    q = MeanFieldGaussian(mu, rho)
    bounds = BoundSpec(b_m, b_v)
    p = project(q, bounds)
    assert is_feasible(p, bounds)
    assert project(p, bounds) == p
    assert np.linalg.norm(p.mu) <= np.linalg.norm(q.mu)
    assert np.all(p.var <= q.var)


@given(
    st.integers(1, 6).flatmap(
        lambda d: st.tuples(*(arrays(np.float64, d, elements=e) for e in (finite, st.floats(1e-3, 5), finite, st.floats(1e-3, 5))))
    ),
    st.floats(0.0, 1.0),
)
def test_interpolation_is_convex_in_moments(moments, alpha):
    mu_a, var_a, mu_b, var_b = moments
    qa, qb = MeanFieldGaussian.from_mean_var(mu_a, var_a), MeanFieldGaussian.from_mean_var(mu_b, var_b)
    q = interpolate(qa, qb, alpha)
    np.testing.assert_allclose(q.mu, (1 - alpha) * qa.mu + alpha * qb.mu, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(q.var, (1 - alpha) * qa.var + alpha * qb.var, rtol=1e-9)


@given(
    st.integers(1, 5).flatmap(
        lambda d: st.tuples(*(arrays(np.float64, d, elements=e) for e in (finite, st.floats(0, 10), finite)))
    ),
    st.floats(1e-2, 10),
)
def test_exact_jensen(moments, tau2):
    mu, var, y = moments
    assert exact_dlm_loss((mu, var), y, tau2) <= exact_elbo_loss((mu, var), y, tau2) + 1e-12


@given(st.lists(st.floats(allow_nan=False, allow_infinity=False), max_size=20))
def test_seventeen_digit_reals_round_trip(values):
    back = json.loads(_dumps_17g({"v": values}))["v"]
    assert [float(v).hex() for v in back] == [float(v).hex() for v in values]
    assert all(isinstance(v, float) for v in back)


@given(
    st.floats(1e-6, 10.0),
    st.integers(0, 2**31),
    st.sampled_from(["elbo", "dlm"]),
    st.floats(0.0, 0.5),
)
def test_config_round_trip(eta, seed, kind, smoothing):
    cfg = cfgmod.default_config(objective__eta=eta, train__seed=seed, objective__kind=kind, objective__smoothing=smoothing)
    again = cfgmod.parse_text(cfgmod.echo(cfg))
    assert again == cfg
