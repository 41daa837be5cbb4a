"""Gaussian-mean model y = theta + noise, where both per-example losses have closed forms.

Under q = N(mu, diag(sigma^2)) and p(y | theta) = N(theta, tau^2 I):

* predictive loss  -log E_q p(y|theta) = sum_j 1/2 log(2 pi (sigma_j^2 + tau^2)) + (y_j - mu_j)^2 / (2 (sigma_j^2 + tau^2))
* expected loss    E_q[-log p(y|theta)] = sum_j 1/2 log(2 pi tau^2) + ((y_j - mu_j)^2 + sigma_j^2) / (2 tau^2)

which makes this model an exact oracle for the Monte-Carlo estimators and
for the penalised-vs-constrained argmin equivalence.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class ConjugateModel:
    data: np.ndarray  # (N, d)
    tau2: float = 1.0

    def __post_init__(self):
        data = np.atleast_2d(np.asarray(self.data, dtype=np.float64))
        object.__setattr__(self, "data", data)
        if not self.tau2 > 0:
            raise ValueError("observation noise must be positive")

    @property
    def dim(self) -> int:
        return self.data.shape[1]


def _moments(q, y):
    """(mu, var, y) as float arrays from a MeanFieldGaussian or a ``(mu, var)`` pair."""
    mu, var = (q.mu, q.var) if hasattr(q, "rho") else q
    mu, var, y = (np.asarray(a, dtype=np.float64) for a in (mu, var, y))
    if mu.shape[-1:] != y.shape[-1:] or var.shape != mu.shape:
        raise ValueError("dimension mismatch between q and y")
    if np.any(var < 0):
        raise ValueError("variances must be non-negative")
    return mu, var, y


def exact_dlm_loss(q, y, tau2: float = 1.0):
    """-log of the Gaussian marginal likelihood of ``y`` under ``q``.

    ``q`` is a :class:`~dlmlab.variational.MeanFieldGaussian` or a ``(mu, var)``
    pair; the pair form broadcasts over leading axes and allows ``var == 0``.
    """
    mu, var, y = _moments(q, y)
    s = var + tau2
    return np.sum(0.5 * (LOG_2PI + np.log(s)) + (y - mu) ** 2 / (2.0 * s), axis=-1)


def exact_elbo_loss(q, y, tau2: float = 1.0):
    """Expected negative log-likelihood of ``y`` under ``q``; same ``q`` forms as :func:`exact_dlm_loss`."""
    mu, var, y = _moments(q, y)
    return np.sum(0.5 * (LOG_2PI + np.log(tau2)) + ((y - mu) ** 2 + var) / (2.0 * tau2), axis=-1)


def gaussian_kl(mu, var, prior_var: float):
    """KL(N(mu, var) || N(0, prior_var)) summed over the last axis."""
    mu, var = np.asarray(mu, dtype=np.float64), np.asarray(var, dtype=np.float64)
    return 0.5 * np.sum((var + mu**2) / prior_var - 1.0 - np.log(var / prior_var), axis=-1)


def mc_estimates(q, y, tau2: float, m: int, trials: int, rng: np.random.Generator):
    """``trials`` independent M-sample estimates of both data terms, each of shape (trials,)."""
    mu, var, y = _moments(q, y)
    theta = mu + np.sqrt(var) * rng.standard_normal((trials, m, mu.size))
    logp = np.sum(-0.5 * (LOG_2PI + np.log(tau2)) - (y - theta) ** 2 / (2.0 * tau2), axis=-1)  # (trials, m)
    elbo = -logp.mean(axis=1)
    top = logp.max(axis=1)
    dlm = -(top + np.log(np.exp(logp - top[:, None]).mean(axis=1)))
    return elbo, dlm


@dataclass(frozen=True)
class ProbeRow:
    m: int
    elbo_mean: float
    elbo_stderr: float
    dlm_mean: float
    dlm_stderr: float
    exact_elbo: float
    exact_dlm: float

    @property
    def dlm_gap(self) -> float:
        return self.dlm_mean - self.exact_dlm


def mc_bias_probe(q, y, tau2: float = 1.0, m_grid=(1, 5, 10), trials: int = 10_000, seed: int = 0) -> list[ProbeRow]:
    """Empirical mean and standard error of both MC estimators for each M, next to the exact values.

    ``q`` is a :class:`~dlmlab.variational.MeanFieldGaussian` over the d means.
    """
    if trials < 1000:
        raise ValueError("need at least 1000 trials")
    rows = []
    exact_e = float(exact_elbo_loss(q, y, tau2))
    exact_d = float(exact_dlm_loss(q, y, tau2))
    for i, m in enumerate(m_grid):
        rng = np.random.default_rng([seed, i, m])
        elbo, dlm = mc_estimates(q, y, tau2, m, trials, rng)
        se = lambda v: float(v.std(ddof=1) / np.sqrt(len(v)))  # noqa: E731
        rows.append(ProbeRow(m, float(elbo.mean()), se(elbo), float(dlm.mean()), se(dlm), exact_e, exact_d))
    return rows


@dataclass
class Prop1Result:
    eta: float
    a_eta: float
    q_reg: tuple[float, float]
    q_con: tuple[float, float]
    reg_objective: float
    reg_data: float
    con_data: float
    reg_ties: list[tuple[float, float]]
    con_ties: list[tuple[float, float]]
    passed: bool

    def to_dict(self) -> dict:
        return {
            "eta": self.eta,
            "A_eta": self.a_eta,
            "q_reg": {"mu": self.q_reg[0], "var": self.q_reg[1]},
            "q_con": {"mu": self.q_con[0], "var": self.q_con[1]},
            "objective_values": {
                "regularized_objective": self.reg_objective,
                "regularized_data_term": self.reg_data,
                "constrained_data_term": self.con_data,
            },
            "ties": {
                "regularized": [{"mu": m, "var": v} for m, v in self.reg_ties],
                "constrained": [{"mu": m, "var": v} for m, v in self.con_ties],
            },
            "pass": self.passed,
        }


def default_grid(n: int = 101):
    return np.linspace(-2.0, 2.0, n), np.logspace(-3.0, 0.0, n)


def proposition1_grid_check(model: ConjugateModel, eta: float, prior_var: float = 0.05, grid=None, rtol: float = 1e-12) -> Prop1Result:
    """Check that the penalised argmin also solves the KL-ball constrained problem on a finite grid.

    For d > 1 every coordinate shares the same (mu, var) grid value. The
    argmins are taken over the grid; all grid points within ``rtol`` of a
    minimum are reported as ties (lowest flat index first).
    """
    mus, variances = default_grid() if grid is None else grid
    mus, variances = np.asarray(mus, dtype=np.float64), np.asarray(variances, dtype=np.float64)
    if mus.size == 0 or variances.size == 0 or np.any(variances <= 0):
        raise ValueError("grid must be non-empty with positive variances")
    d = model.dim
    mu_g, var_g = np.meshgrid(mus, variances, indexing="ij")
    mu_full = np.repeat(mu_g[..., None], d, axis=-1)
    var_full = np.repeat(var_g[..., None], d, axis=-1)
    data_term = sum(exact_dlm_loss((mu_full, var_full), y, model.tau2) for y in model.data)
    kl = gaussian_kl(mu_full, var_full, prior_var)
    objective = data_term + eta * kl

    flat_obj = objective.reshape(-1)
    i_reg = int(np.argmin(flat_obj))
    a_eta = float(kl.reshape(-1)[i_reg])
    feasible = kl.reshape(-1) <= a_eta
    con_vals = np.where(feasible, data_term.reshape(-1), np.inf)
    i_con = int(np.argmin(con_vals))

    def point(i):
        r, c = np.unravel_index(i, mu_g.shape)
        return float(mus[r]), float(variances[c])

    def ties(vals, best):
        tol = rtol * max(1.0, abs(best))
        return [point(int(i)) for i in np.flatnonzero(vals <= best + tol)]

    reg_data = float(data_term.reshape(-1)[i_reg])
    con_data = float(con_vals[i_con])
    passed = abs(con_data - reg_data) <= rtol * max(1.0, abs(reg_data))
    return Prop1Result(
        eta=float(eta),
        a_eta=a_eta,
        q_reg=point(i_reg),
        q_con=point(i_con),
        reg_objective=float(flat_obj[i_reg]),
        reg_data=reg_data,
        con_data=con_data,
        reg_ties=ties(flat_obj, flat_obj[i_reg]),
        con_ties=ties(con_vals, con_vals[i_con]),
        passed=bool(passed),
    )
