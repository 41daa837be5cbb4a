"""Desk-scale Bayesian network architectures and their log-likelihoods.

All weights live in one flat parameter vector. A forward pass takes a
*stack* of parameter vectors, either (M, D) (one network per Monte-Carlo
sample, shared by the whole batch) or (M, B, D) (a separate network per
sample and example), and returns per-sample, per-example log-likelihoods.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from dlmlab import autodiff as ad
from dlmlab.autodiff import Tensor
from dlmlab.variational import MeanFieldGaussian, draw_noise, inv_softplus

ACTIVATIONS = ("relu", "tanh", "none")


@dataclass(frozen=True)
class Dense:
    out: int
    activation: str = "none"

    def __post_init__(self):
        if self.out < 1:
            raise ValueError("dense layer needs at least one output")
        _check_act(self.activation, "dense")


@dataclass(frozen=True)
class Conv2d:
    channels: int
    kernel: int
    activation: str = "none"

    def __post_init__(self):
        if self.channels < 1 or self.kernel < 1:
            raise ValueError("conv2d needs positive channels and kernel size")
        _check_act(self.activation, "conv2d")


@dataclass(frozen=True)
class Flatten:
    pass


Layer = Union[Dense, Conv2d, Flatten]


@dataclass(frozen=True)
class Categorical:
    classes: int


@dataclass(frozen=True)
class Gaussian:
    tau2: float = 1.0
    targets: int = 1


Likelihood = Union[Categorical, Gaussian]


@dataclass(frozen=True)
class ParamBlock:
    layer: int
    name: str
    offset: int
    shape: tuple[int, ...]
    fan_in: int

    @property
    def size(self) -> int:
        return math.prod(self.shape)


@dataclass(frozen=True)
class ArchSpec:
    input_shape: tuple[int, ...]
    layers: tuple[Layer, ...]
    likelihood: Likelihood

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(n) for n in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        self.layout()  # validates the chain

    def layout(self) -> list[ParamBlock]:
        """Parameter blocks in flat-vector order; raises ValueError on an inconsistent chain."""
        if not self.input_shape or any(n < 1 for n in self.input_shape):
            raise ValueError(f"bad input shape {self.input_shape}")
        shape = self.input_shape
        blocks: list[ParamBlock] = []
        offset = 0
        for i, layer in enumerate(self.layers):
            if isinstance(layer, Dense):
                if len(shape) != 1:
                    raise ValueError(f"layer {i}: dense layer needs flat input, got {shape} (add flatten)")
                _check_act(layer.activation, i)
                fan_in = shape[0]
                w = ParamBlock(i, "weight", offset, (layer.out, fan_in), fan_in)
                b = ParamBlock(i, "bias", offset + w.size, (layer.out,), fan_in)
                blocks += [w, b]
                offset += w.size + b.size
                shape = (layer.out,)
            elif isinstance(layer, Conv2d):
                if len(shape) != 3:
                    raise ValueError(f"layer {i}: conv2d needs (C, H, W) input, got {shape}")
                _check_act(layer.activation, i)
                c, h, wd = shape
                k = layer.kernel
                if k < 1 or k > min(h, wd):
                    raise ValueError(f"layer {i}: kernel {k} does not fit input {shape}")
                fan_in = c * k * k
                w = ParamBlock(i, "weight", offset, (layer.channels, c, k, k), fan_in)
                b = ParamBlock(i, "bias", offset + w.size, (layer.channels,), fan_in)
                blocks += [w, b]
                offset += w.size + b.size
                shape = (layer.channels, h - k + 1, wd - k + 1)
            elif isinstance(layer, Flatten):
                shape = (math.prod(shape),)
            else:
                raise TypeError(f"unknown layer {layer!r}")
        if len(shape) != 1 or shape[0] != self.output_dim:
            raise ValueError(f"network output {shape} does not match likelihood dimension {self.output_dim}")
        return blocks

    @property
    def output_dim(self) -> int:
        lik = self.likelihood
        return lik.classes if isinstance(lik, Categorical) else lik.targets

    @property
    def num_params(self) -> int:
        blocks = self.layout()
        return blocks[-1].offset + blocks[-1].size if blocks else 0

    # plain-data form used by configs and checkpoints
    def to_dict(self) -> dict:
        lik = self.likelihood
        return {
            "input_shape": list(self.input_shape),
            "layers": layers_to_string(self.layers),
            "likelihood": (
                {"kind": "categorical", "classes": lik.classes}
                if isinstance(lik, Categorical)
                else {"kind": "gaussian", "tau2": lik.tau2, "targets": lik.targets}
            ),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArchSpec":
        lik = d["likelihood"]
        if lik["kind"] == "categorical":
            likelihood: Likelihood = Categorical(int(lik["classes"]))
        elif lik["kind"] == "gaussian":
            likelihood = Gaussian(float(lik["tau2"]), int(lik.get("targets", 1)))
        else:
            raise ValueError(f"unknown likelihood {lik['kind']!r}")
        return cls(tuple(d["input_shape"]), parse_layers(d["layers"]), likelihood)


def _check_act(act, where):
    if act not in ACTIVATIONS:
        raise ValueError(f"{where}: unknown activation {act!r}")


def parse_layers(text: str) -> tuple[Layer, ...]:
    """Parse ``dense:64:relu,conv:8:3:relu,flatten`` style layer lists."""
    layers: list[Layer] = []
    for item in filter(None, (s.strip() for s in text.split(","))):
        parts = item.split(":")
        try:
            if parts[0] == "dense" and len(parts) in (2, 3):
                layers.append(Dense(int(parts[1]), parts[2] if len(parts) == 3 else "none"))
            elif parts[0] == "conv" and len(parts) in (3, 4):
                layers.append(Conv2d(int(parts[1]), int(parts[2]), parts[3] if len(parts) == 4 else "none"))
            elif parts == ["flatten"]:
                layers.append(Flatten())
            else:
                raise ValueError
        except ValueError:
            raise ValueError(f"cannot parse layer {item!r}") from None
    return tuple(layers)


def layers_to_string(layers) -> str:
    out = []
    for layer in layers:
        if isinstance(layer, Dense):
            out.append(f"dense:{layer.out}:{layer.activation}")
        elif isinstance(layer, Conv2d):
            out.append(f"conv:{layer.channels}:{layer.kernel}:{layer.activation}")
        else:
            out.append("flatten")
    return ",".join(out)


def preset(name: str, input_shape, likelihood: Likelihood) -> ArchSpec:
    """Named reference architectures: ``mlp-2x64`` and ``tinyconv``."""
    out_dim = likelihood.classes if isinstance(likelihood, Categorical) else likelihood.targets
    input_shape = tuple(input_shape)
    if name == "mlp-2x64":
        layers: tuple[Layer, ...] = (Dense(64, "relu"), Dense(64, "relu"), Dense(out_dim))
        if len(input_shape) > 1:
            layers = (Flatten(),) + layers
    elif name == "tinyconv":
        layers = (Conv2d(8, 3, "relu"), Flatten(), Dense(out_dim))
    else:
        raise ValueError(f"unknown preset {name!r}")
    return ArchSpec(input_shape, layers, likelihood)


@dataclass(frozen=True)
class Batch:
    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        if len(self.inputs) < 1 or len(self.inputs) != len(self.targets):
            raise ValueError("batch needs at least one example and matching targets")

    def __len__(self):
        return len(self.inputs)

    def take(self, idx) -> "Batch":
        return Batch(self.inputs[idx], self.targets[idx])


def _activate(h: Tensor, act: str) -> Tensor:
    if act == "relu":
        return ad.relu(h)
    if act == "tanh":
        return ad.tanh(h)
    return h


def network_output(arch: ArchSpec, theta: Tensor, inputs: np.ndarray) -> Tensor:
    """Network outputs for a stack of parameter vectors.

    ``theta`` is (M, D) for weights shared across the batch, or (M, B, D) for
    per-example weights. Returns (M, B, output_dim).
    """
    theta = ad.as_tensor(theta)
    d = arch.num_params
    if theta.shape[-1] != d:
        raise ValueError(f"parameter vector has {theta.shape[-1]} entries, architecture needs {d}")
    x = np.asarray(inputs, dtype=np.float64)
    b = len(x)
    x = x.reshape((b,) + arch.input_shape) if x.shape[1:] != arch.input_shape else x
    per_example = theta.ndim == 3
    if per_example and theta.shape[1] != b:
        raise ValueError(f"per-example parameters for {theta.shape[1]} examples, batch has {b}")
    m = theta.shape[0]
    lead = (m, b) if per_example else (m,)
    h = Tensor(np.broadcast_to(x, (m,) + x.shape).copy())

    blocks = iter(arch.layout())
    for layer in arch.layers:
        if isinstance(layer, Flatten):
            h = h.reshape(m, b, -1)
            continue
        wb, bb = next(blocks), next(blocks)
        w = theta[..., wb.offset:wb.offset + wb.size].reshape(lead + wb.shape)
        bias = theta[..., bb.offset:bb.offset + bb.size]
        if isinstance(layer, Dense):
            if per_example:
                # (M, B, 1, in) @ (M, B, in, out)
                h = (h.reshape(m, b, 1, -1) @ w.swapaxes(-1, -2)).reshape(m, b, -1) + bias
            else:
                h = h @ w.swapaxes(-1, -2) + bias.reshape(m, 1, -1)
        else:
            c_out = layer.channels
            if per_example:
                xs = h.reshape((m * b, 1) + h.shape[2:])
                ws = w.reshape((m * b,) + wb.shape)
                h = ad.conv2d(xs, ws)
                h = h.reshape((m, b) + h.shape[2:]) + bias.reshape(m, b, c_out, 1, 1)
            else:
                h = ad.conv2d(h, w) + bias.reshape(m, 1, c_out, 1, 1)
        h = _activate(h, layer.activation)
    return h


def sample_log_likelihood(arch: ArchSpec, theta: Tensor, batch: Batch) -> Tensor:
    """log p(y_b | theta_m, x_b) for every sample m and example b, shape (M, B)."""
    out = network_output(arch, theta, batch.inputs)
    lik = arch.likelihood
    b = len(batch)
    if isinstance(lik, Categorical):
        y = np.asarray(batch.targets)
        if y.ndim != 1 or not np.issubdtype(y.dtype, np.integer):
            raise ValueError("categorical targets must be a 1-D integer array")
        if y.min() < 0 or y.max() >= lik.classes:
            raise ValueError(f"label out of range [0, {lik.classes})")
        return ad.log_softmax(out, axis=-1)[:, np.arange(b), y]
    y = np.asarray(batch.targets, dtype=np.float64).reshape(b, lik.targets)
    resid = out - y
    const = -0.5 * lik.targets * np.log(2.0 * np.pi * lik.tau2)
    return const - ad.square(resid).sum(axis=-1) / (2.0 * lik.tau2)


def log_likelihood(arch: ArchSpec, theta, batch: Batch) -> Tensor:
    """Per-example log-likelihood under one parameter vector, shape (B,)."""
    theta = ad.as_tensor(theta)
    if theta.ndim != 1:
        raise ValueError("expected a single flat parameter vector")
    return sample_log_likelihood(arch, theta.reshape(1, -1), batch)[0]


def init_posterior(arch: ArchSpec, key: tuple[int, ...], sigma_init: float = 0.01) -> MeanFieldGaussian:
    """mu_j ~ N(0, 1/fan_in) for every parameter of a layer; sigma_j = sigma_init."""
    d = arch.num_params
    z = draw_noise(key, 1, d)[0]
    scale = np.empty(d)
    for blk in arch.layout():
        scale[blk.offset:blk.offset + blk.size] = 1.0 / np.sqrt(blk.fan_in)
    return MeanFieldGaussian(z * scale, np.full(d, inv_softplus(np.array(sigma_init))))


def predictive_log_probs(arch: ArchSpec, q: MeanFieldGaussian, batch: Batch, m: int, key) -> np.ndarray:
    """log (1/M) sum_m softmax(f(x; theta_m)), shape (B, C)."""
    if not isinstance(arch.likelihood, Categorical):
        raise ValueError("predictive class probabilities need a categorical likelihood")
    eps = draw_noise(key, m, q.dim)
    return predictive_log_probs_from_noise(arch, q, batch, eps)


def predictive_log_probs_from_noise(arch, q, batch, eps) -> np.ndarray:
    theta = q.mu + q.sigma * eps
    logp = ad.log_softmax(network_output(arch, Tensor(theta), batch.inputs), axis=-1)
    return ad.logsumexp(logp, axis=0).data - np.log(len(eps))
