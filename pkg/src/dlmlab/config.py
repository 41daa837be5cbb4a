"""Flat ``key = value`` run configuration files.

Example::

    version = 1
    run.label = elbo
    data.name = moons-noise20
    data.train = data/train.csv
    data.test = data/test.csv
    arch.preset = mlp-2x64
    arch.input_shape = 2
    arch.classes = 2
    objective.kind = elbo
    objective.eta = 0.1
    train.seed = 3

Blank lines and ``#`` comments are ignored; unknown keys are errors.
:func:`echo` writes every key (defaults included) so a run can be
reproduced from its echo alone, and ``parse(echo(cfg)) == cfg``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from dlmlab.models import ArchSpec, Categorical, Gaussian, layers_to_string, parse_layers, preset
from dlmlab.objectives import ObjectiveSpec
from dlmlab.trainer import TrainConfig
from dlmlab.variational import BoundSpec, RegularizerSpec

CONFIG_VERSION = 1


class ConfigError(ValueError):
    pass


def _int(s):
    return int(s)


def _float(s):
    return float(s)


def _opt_int(s):
    return None if s in ("", "none") else int(s)


def _opt_float(s):
    return None if s in ("", "none") else float(s)


def _str(s):
    return s


def _shape(s):
    return tuple(int(p) for p in s.replace("x", ",").split(",") if p.strip())


# key -> (parser, default). Order here is the echo order.
KEYS: dict[str, tuple] = {
    "version": (_int, CONFIG_VERSION),
    "run.label": (_str, ""),
    "data.name": (_str, "dataset"),
    "data.train": (_str, ""),
    "data.test": (_str, ""),
    "arch.input_shape": (_shape, (2,)),
    "arch.layers": (_str, "dense:64:relu,dense:64:relu,dense:2:none"),
    "arch.likelihood": (_str, "categorical"),
    "arch.classes": (_int, 2),
    "arch.tau2": (_float, 1.0),
    "arch.targets": (_int, 1),
    "objective.kind": (_str, "elbo"),
    "objective.eta": (_float, 0.1),
    "objective.m_train": (_int, 5),
    "objective.smoothing": (_float, 0.0),
    "objective.sampling": (_str, "shared"),
    "objective.regularizer": (_str, "fixed_kl"),
    "objective.prior_var": (_float, 0.05),
    "objective.cvi_gamma": (_float, 0.3),
    "objective.cvi_alpha_reg": (_float, 0.05),
    "objective.mv_alpha": (_float, 0.5),
    "objective.mv_beta": (_float, 0.01),
    "objective.mv_delta": (_float, 0.1),
    "objective.eb_alpha": (_float, 4.4798),
    "objective.eb_beta": (_float, 10.0),
    "train.epochs": (_int, 200),
    "train.batch_size": (_int, 128),
    "train.lr": (_float, 0.001),
    "train.beta1": (_float, 0.9),
    "train.beta2": (_float, 0.999),
    "train.adam_eps": (_float, 1e-8),
    "train.seed": (_int, 0),
    "train.eval_seed": (_opt_int, None),
    "train.sigma_init": (_float, 0.01),
    "train.eval_every": (_int, 1),
    "train.m_eval": (_int, 10),
    "train.init": (_str, "random"),
    "train.init_checkpoint": (_str, ""),
    "bounds.b_m": (_opt_float, None),
    "bounds.b_v": (_opt_float, None),
}

# arch.preset is accepted on input and expanded into arch.layers
INPUT_ONLY = {"arch.preset"}


def _render(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass(frozen=True)
class RunConfig:
    values: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.values[key]

    def with_overrides(self, overrides: dict[str, str]) -> "RunConfig":
        base = {k: _render(v) for k, v in self.values.items()}
        if "arch.preset" in overrides:
            base.pop("arch.layers")
        return parse_pairs({**base, **overrides})

    # typed views -------------------------------------------------------
    @property
    def label(self) -> str:
        return self.values["run.label"] or self.values["objective.kind"]

    def arch(self) -> ArchSpec:
        v = self.values
        if v["arch.likelihood"] == "categorical":
            lik = Categorical(v["arch.classes"])
        elif v["arch.likelihood"] == "gaussian":
            lik = Gaussian(v["arch.tau2"], v["arch.targets"])
        else:
            raise ConfigError(f"arch.likelihood must be categorical or gaussian, got {v['arch.likelihood']!r}")
        return ArchSpec(v["arch.input_shape"], parse_layers(v["arch.layers"]), lik)

    def regularizer(self) -> RegularizerSpec:
        v = self.values
        return RegularizerSpec(
            kind=v["objective.regularizer"],
            prior_var=v["objective.prior_var"],
            gamma=v["objective.cvi_gamma"],
            alpha_reg=v["objective.cvi_alpha_reg"],
            mv_alpha=v["objective.mv_alpha"],
            mv_beta=v["objective.mv_beta"],
            mv_delta=v["objective.mv_delta"],
            eb_alpha=v["objective.eb_alpha"],
            eb_beta=v["objective.eb_beta"],
        )

    def objective(self, n_data: int = 1) -> ObjectiveSpec:
        v = self.values
        return ObjectiveSpec(
            kind=v["objective.kind"],
            eta=v["objective.eta"],
            m_train=v["objective.m_train"],
            smoothing=v["objective.smoothing"],
            regularizer=self.regularizer(),
            n_data=n_data,
            sampling=v["objective.sampling"],
        )

    def bounds(self) -> BoundSpec | None:
        b_m, b_v = self.values["bounds.b_m"], self.values["bounds.b_v"]
        if b_m is None and b_v is None:
            return None
        if b_m is None or b_v is None:
            raise ConfigError("bounds.b_m and bounds.b_v must be set together")
        return BoundSpec(b_m, b_v)

    def train_config(self, n_data: int = 1) -> TrainConfig:
        v = self.values
        return TrainConfig(
            arch=self.arch(),
            objective=self.objective(n_data),
            epochs=v["train.epochs"],
            batch_size=v["train.batch_size"],
            lr=v["train.lr"],
            beta1=v["train.beta1"],
            beta2=v["train.beta2"],
            adam_eps=v["train.adam_eps"],
            seed=v["train.seed"],
            eval_seed=v["train.eval_seed"],
            sigma_init=v["train.sigma_init"],
            bounds=self.bounds(),
            eval_every=v["train.eval_every"],
            m_eval=v["train.m_eval"],
        )


def parse_pairs(pairs: dict[str, str]) -> RunConfig:
    raw = dict(pairs)
    if "version" not in raw:
        raise ConfigError("config is missing the version key")
    unknown = sorted(k for k in raw if k not in KEYS and k not in INPUT_ONLY)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    values = {}
    for key, (conv, default) in KEYS.items():
        if key in raw:
            try:
                values[key] = conv(raw[key].strip())
            except ValueError:
                raise ConfigError(f"bad value for {key}: {raw[key]!r}") from None
        else:
            values[key] = default
    if values["version"] != CONFIG_VERSION:
        raise ConfigError(f"unsupported config version {values['version']} (expected {CONFIG_VERSION})")
    if "arch.preset" in raw:
        if "arch.layers" in raw:
            raise ConfigError("arch.preset and arch.layers are mutually exclusive")
        lik = Categorical(values["arch.classes"]) if values["arch.likelihood"] == "categorical" else Gaussian(
            values["arch.tau2"], values["arch.targets"])
        try:
            arch = preset(raw["arch.preset"].strip(), values["arch.input_shape"], lik)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        values["arch.layers"] = layers_to_string(arch.layers)
    cfg = RunConfig(values)
    try:  # validate every typed view now rather than mid-run
        cfg.train_config()
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if values["train.init"] not in ("random", "checkpoint"):
        raise ConfigError("train.init must be random or checkpoint")
    return cfg


def parse_text(text: str) -> RunConfig:
    pairs: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in pairs:
            raise ConfigError(f"line {lineno}: duplicate key {key}")
        pairs[key] = value
    return parse_pairs(pairs)


def load(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_text(fh.read())


def echo(cfg: RunConfig) -> str:
    return "".join(f"{k} = {_render(cfg.values[k])}\n" for k in KEYS)


def default_config(**overrides) -> RunConfig:
    pairs = {"version": str(CONFIG_VERSION)}
    pairs.update({k.replace("__", "."): _render(v) for k, v in overrides.items()})
    return parse_pairs(pairs)

