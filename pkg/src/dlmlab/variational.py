"""Mean-field Gaussian posteriors, priors, regularizers and projection."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from dlmlab import autodiff as ad
from dlmlab.autodiff import Tensor

REGULARIZER_KINDS = ("fixed_kl", "cvi_mean", "cvi_mv", "eb")

# Stream tags for counter-based noise keys: (seed, tag, ...) -> independent stream.
INIT, SHUFFLE, TRAIN_NOISE, EVAL_TRAIN, EVAL_TEST = range(5)


def softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def inv_softplus(sigma: np.ndarray) -> np.ndarray:
    """Inverse of softplus for ``sigma > 0``; stable for tiny and large inputs."""
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma <= 0):
        raise ValueError("inverse softplus needs strictly positive input")
    return sigma + np.log(-np.expm1(-sigma))


@dataclass(frozen=True, eq=False)
class MeanFieldGaussian:
    """Fully factorised Gaussian q(theta) = prod_j N(mu_j, softplus(rho_j)^2)."""

    mu: np.ndarray
    rho: np.ndarray

    def __post_init__(self):
        mu = np.array(self.mu, dtype=np.float64).reshape(-1)
        rho = np.array(self.rho, dtype=np.float64).reshape(-1)
        if mu.shape != rho.shape:
            raise ValueError(f"mu has {mu.size} entries but rho has {rho.size}")
        mu.flags.writeable = False
        rho.flags.writeable = False
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "rho", rho)

    @classmethod
    def from_mean_var(cls, mu, var) -> "MeanFieldGaussian":
        return cls(mu, inv_softplus(np.sqrt(np.asarray(var, dtype=np.float64))))

    @property
    def dim(self) -> int:
        return self.mu.size

    @property
    def sigma(self) -> np.ndarray:
        return softplus(self.rho)

    @property
    def var(self) -> np.ndarray:
        return _var(self.rho)

    def __eq__(self, other):
        if not isinstance(other, MeanFieldGaussian):
            return NotImplemented
        return np.array_equal(self.mu, other.mu) and np.array_equal(self.rho, other.rho)

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True)
class PriorSpec:
    variance: float = 0.05

    def __post_init__(self):
        if not self.variance > 0:
            raise ValueError("prior variance must be positive")


@dataclass(frozen=True)
class RegularizerSpec:
    """Which regularizer replaces (or is) the KL to the prior, with its hyperparameters.

    Defaults are the settings used for each collapsed / empirical-Bayes variant.
    """

    kind: str = "fixed_kl"
    prior_var: float = 0.05
    gamma: float = 0.3
    alpha_reg: float = 0.05
    mv_alpha: float = 0.5
    mv_beta: float = 0.01
    mv_delta: float = 0.1
    eb_alpha: float = 4.4798
    eb_beta: float = 10.0

    def __post_init__(self):
        if self.kind not in REGULARIZER_KINDS:
            raise ValueError(f"unknown regularizer kind {self.kind!r}")
        for name in ("prior_var", "gamma", "alpha_reg", "mv_alpha", "mv_beta", "mv_delta", "eb_alpha", "eb_beta"):
            if not getattr(self, name) > 0:
                raise ValueError(f"regularizer hyperparameter {name} must be positive")


@dataclass(frozen=True)
class BoundSpec:
    b_m: float
    b_v: float

    def __post_init__(self):
        if not (self.b_m > 0 and self.b_v > 0):
            raise ValueError("bounds must be positive")


# ----------------------------------------------------------------- sampling


def standard_normal(key: tuple[int, ...], shape) -> np.ndarray:
    """Standard normal draws that depend only on ``key`` (a tuple of non-negative ints)."""
    return np.random.default_rng(np.random.SeedSequence(list(key))).standard_normal(shape)


def draw_noise(key: tuple[int, ...], m: int, shape) -> np.ndarray:
    """Stack of ``m`` noise blocks; block ``i`` depends only on ``(key, i)``."""
    if m < 1:
        raise ValueError("need at least one sample")
    shape = (shape,) if isinstance(shape, int) else tuple(shape)
    return np.stack([standard_normal((*key, i), shape) for i in range(m)])


def reparameterize(mu: Tensor, rho: Tensor, eps: np.ndarray) -> Tensor:
    """theta = mu + softplus(rho) * eps, differentiable in (mu, rho)."""
    return mu + ad.softplus(rho) * eps


def sample_params(q: MeanFieldGaussian, key: tuple[int, ...], m: int) -> np.ndarray:
    """M parameter vectors drawn by reparameterisation, shape (M, D)."""
    eps = draw_noise(key, m, q.dim)
    return q.mu + q.sigma * eps


# ----------------------------------------------------------------- regularizers


def _log_var(rho: Tensor) -> Tensor:
    return 2.0 * ad.log(ad.softplus(rho))


def kl_tensor(mu: Tensor, rho: Tensor, prior_var: float) -> Tensor:
    var = ad.square(ad.softplus(rho))
    inner = (var + ad.square(mu)) / prior_var - 1.0 - _log_var(rho) + np.log(prior_var)
    return 0.5 * inner.sum()


def regularizer_tensor(mu: Tensor, rho: Tensor, spec: RegularizerSpec) -> Tensor:
    if spec.kind == "fixed_kl":
        return kl_tensor(mu, rho, spec.prior_var)
    d = mu.size
    var = ad.square(ad.softplus(rho))
    sum_log_var = _log_var(rho).sum()
    if spec.kind == "cvi_mean":
        quad = var.sum() + spec.alpha_reg * ad.square(mu).sum()
        return quad / (2.0 * spec.gamma) - 0.5 * sum_log_var - 0.5 * d * np.log(spec.alpha_reg)
    if spec.kind == "cvi_mv":
        inner = spec.mv_beta + 0.5 * spec.mv_delta * ad.square(mu) + 0.5 * var
        return (spec.mv_alpha + 0.5) * ad.log(inner).sum() - 0.5 * sum_log_var
    # eb
    energy = ad.square(mu).sum() + var.sum()
    shape = d + 2.0 * spec.eb_alpha + 2.0
    scale = energy + 2.0 * spec.eb_beta
    first = 0.5 * (d * ad.log(scale / shape) - sum_log_var - d)
    return first + 0.5 * shape * energy / scale


def _eval(fn, q: MeanFieldGaussian, *args) -> float:
    return fn(Tensor(q.mu), Tensor(q.rho), *args).item()


def kl_to_prior(q: MeanFieldGaussian, prior: PriorSpec) -> float:
    """Closed-form KL(q || N(0, s^2 I))."""
    return _eval(kl_tensor, q, prior.variance)


def regularizer_value(q: MeanFieldGaussian, spec: RegularizerSpec) -> float:
    return _eval(regularizer_tensor, q, spec)


# ----------------------------------------------------------------- projection


def _shrink_to_ball(mu: np.ndarray, b_m: float) -> np.ndarray:
    norm = np.linalg.norm(mu)
    if norm <= b_m:
        return mu
    out = mu * (b_m / norm)
    # rounding can leave the norm one ulp above the radius
    while np.linalg.norm(out) > b_m:
        out = out * (1.0 - 2.0**-52)
    return out


def _var(rho: np.ndarray) -> np.ndarray:
    s = softplus(rho)
    return s * s


def _cap_rho(rho: np.ndarray, b_v: float) -> np.ndarray:
    over = _var(rho) > b_v
    if not over.any():
        return rho
    out = rho.copy()
    out[over] = inv_softplus(np.full(over.sum(), np.sqrt(b_v)))
    bad = _var(out) > b_v
    while bad.any():
        out[bad] = np.nextafter(out[bad], -np.inf)
        bad = _var(out) > b_v
    return out


def project(q: MeanFieldGaussian, bounds: BoundSpec) -> MeanFieldGaussian:
    """Euclidean projection of mu onto the b_m ball; per-coordinate cap of variance at b_v.

    Feasible inputs are returned unchanged (the same object).
    """
    mu = _shrink_to_ball(q.mu, bounds.b_m)
    rho = _cap_rho(q.rho, bounds.b_v)
    if mu is q.mu and rho is q.rho:
        return q
    return MeanFieldGaussian(mu, rho)


def is_feasible(q: MeanFieldGaussian, bounds: BoundSpec) -> bool:
    return bool(np.linalg.norm(q.mu) <= bounds.b_m and np.all(q.var <= bounds.b_v))
