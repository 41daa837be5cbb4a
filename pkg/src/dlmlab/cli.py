"""Command-line interface: ``dlmlab {train,continue,eval,path,compare,oracle,gen-data}``.

Exit codes: 0 success, 1 validation error, 2 numerical abort.
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys

import numpy as np

from dlmlab import config as cfgmod
from dlmlab import datasets, kernels
from dlmlab.autodiff import NonFiniteError
from dlmlab.conjugate import ConjugateModel, mc_bias_probe, proposition1_grid_check
from dlmlab.fileio import _dumps_17g, atomic_write_text, load_checkpoint, save_checkpoint, write_table
from dlmlab.surface import COMPARE_COLUMNS, DEFAULT_ALPHAS, PATH_COLUMNS, RunSummary, compare_runs, path_scan
from dlmlab.trainer import TRAJECTORY_COLUMNS, TrainingAborted, continue_train, train
from dlmlab.objectives import test_metrics
from dlmlab.variational import EVAL_TEST, MeanFieldGaussian

logger = logging.getLogger("dlmlab")

CONFIG_ECHO = "config.cfg"


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# ----------------------------------------------------------------- config assembly

# explicit flag -> config key
FLAG_KEYS = {
    "seed": "train.seed",
    "epochs": "train.epochs",
    "objective": "objective.kind",
    "eta": "objective.eta",
    "train": "data.train",
    "test": "data.test",
    "label": "run.label",
}


def _parse_sets(items) -> dict[str, str]:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = (s.strip() for s in item.split("=", 1))
        if k in out:
            raise UsageError(f"--set given twice for {k}")
        out[k] = v
    return out


def build_config(args) -> tuple[cfgmod.RunConfig, set[str]]:
    """Config file, then ``--set`` pairs, then explicit flags. Returns the config and the explicitly given keys."""
    sets = _parse_sets(getattr(args, "set", None))
    for flag, key in FLAG_KEYS.items():
        value = getattr(args, flag, None)
        if value is None:
            continue
        if key in sets:
            raise UsageError(f"conflicting flags: --{flag} and --set {key}")
        sets[key] = str(value)
    explicit = set(sets)
    if args.config:
        if not os.path.exists(args.config):
            raise FileNotFoundError(f"config file not found: {args.config}")
        with open(args.config, encoding="utf-8") as fh:
            text = fh.read()
        base = cfgmod.parse_text(text)
        explicit |= {line.split("=", 1)[0].strip() for line in text.splitlines()
                     if "=" in line.split("#", 1)[0]}
        cfg = base.with_overrides(sets) if sets else base
    else:
        cfg = cfgmod.parse_pairs({"version": str(cfgmod.CONFIG_VERSION), **sets})
    return cfg, explicit


def _load_data(cfg: cfgmod.RunConfig):
    if not cfg["data.train"] or not cfg["data.test"]:
        raise UsageError("data.train and data.test must be set (config or --train/--test)")
    return {"train": datasets.read_csv(cfg["data.train"]), "test": datasets.read_csv(cfg["data.test"])}


def _write_run(out: str, cfg, result) -> None:
    os.makedirs(out, exist_ok=True)
    atomic_write_text(os.path.join(out, CONFIG_ECHO), cfgmod.echo(cfg))
    rows = [[getattr(r, c) for c in TRAJECTORY_COLUMNS] for r in result.trajectory]
    write_table(os.path.join(out, "trajectory.csv"), TRAJECTORY_COLUMNS, rows)
    # wall time lives apart from trajectory.csv so that file stays byte-reproducible
    write_table(os.path.join(out, "timing.csv"), ("epoch", "wall_time_seconds"),
                [[r.epoch, r.wall_time_seconds] for r in result.trajectory])
    save_checkpoint(result.checkpoint, os.path.join(out, "checkpoint.json"))
    last = result.trajectory[-1]
    print(f"{out}: epoch {last.epoch} test_nll={last.test_nll:.6f} test_acc={last.test_acc:.4f} "
          f"elbo={last.train_elbo_loss:.6f} dlm={last.train_dlm_loss:.6f}")


def _arch_keys_explicit(explicit) -> bool:
    return any(k.startswith("arch.") for k in explicit)


def _config_from_checkpoint_arch(cfg, ckpt):
    arch = ckpt.arch.to_dict()
    lik = arch["likelihood"]
    over = {
        "arch.input_shape": ",".join(str(n) for n in arch["input_shape"]),
        "arch.layers": arch["layers"],
        "arch.likelihood": lik["kind"],
    }
    if lik["kind"] == "categorical":
        over["arch.classes"] = str(lik["classes"])
    else:
        over["arch.tau2"] = repr(lik["tau2"])
        over["arch.targets"] = str(lik["targets"])
    return cfg.with_overrides(over)


def _continue(cfg, explicit, checkpoint_path, out):
    if _arch_keys_explicit(explicit):
        ckpt = load_checkpoint(checkpoint_path, expect_arch=cfg.arch())
    else:
        ckpt = load_checkpoint(checkpoint_path)
        cfg = _config_from_checkpoint_arch(cfg, ckpt)
    if "train.eval_seed" not in explicit:
        cfg = cfg.with_overrides({"train.eval_seed": str(ckpt.seed if ckpt.eval_seed is None else ckpt.eval_seed)})
    data = _load_data(cfg)
    tc = cfg.train_config(len(data["train"]))
    result = continue_train(ckpt, tc.objective, tc, data)
    _write_run(out, cfg, result)


# ----------------------------------------------------------------- commands


def cmd_train(args) -> None:
    cfg, explicit = build_config(args)
    if cfg["train.init"] == "checkpoint":
        if not cfg["train.init_checkpoint"]:
            raise UsageError("train.init = checkpoint needs train.init_checkpoint")
        _continue(cfg, explicit, cfg["train.init_checkpoint"], args.out)
        return
    data = _load_data(cfg)
    result = train(cfg.train_config(len(data["train"])), data)
    _write_run(args.out, cfg, result)


def cmd_continue(args) -> None:
    cfg, explicit = build_config(args)
    _continue(cfg, explicit, args.checkpoint, args.out)


def cmd_eval(args) -> None:
    ckpt = load_checkpoint(args.checkpoint)
    test = datasets.read_csv(args.data)
    seed = args.eval_seed if args.eval_seed is not None else (ckpt.seed if ckpt.eval_seed is None else ckpt.eval_seed)
    m = test_metrics(ckpt.arch, ckpt.q, test, args.m_eval, (seed, EVAL_TEST))
    report = {"checkpoint": args.checkpoint, "data": args.data, "m_eval": args.m_eval, "eval_seed": seed,
              "nll": m.nll, "accuracy": m.accuracy}
    os.makedirs(args.out, exist_ok=True)
    atomic_write_text(os.path.join(args.out, "metrics.json"), _dumps_17g(report) + "\n")
    print(f"nll={m.nll:.6f} accuracy={m.accuracy:.4f}")


def cmd_path(args) -> None:
    a = load_checkpoint(args.a)
    b = load_checkpoint(args.b, expect_arch=a.arch)
    cfg, explicit = build_config(args)
    data = _load_data(cfg)
    objective = a.objective
    if args.config or any(k.startswith("objective.") for k in explicit):
        objective = cfg.objective(len(data["train"]))
    alphas = DEFAULT_ALPHAS if args.alphas is None else [float(x) for x in args.alphas.split(",")]
    seed = args.eval_seed if args.eval_seed is not None else (a.seed if a.eval_seed is None else a.eval_seed)
    records = path_scan(a, b, data["train"], data["test"], objective, alphas, args.m_eval, seed, args.resample)
    write_table(os.path.join(args.out, "path.csv"), PATH_COLUMNS, [r.as_row() for r in records])
    print(f"wrote {len(records)} path records to {os.path.join(args.out, 'path.csv')}")


def _arch_name(cfg) -> str:
    return cfg["arch.layers"]


def cmd_compare(args) -> None:
    runs = []
    for run_dir in args.runs:
        cfg = cfgmod.load(os.path.join(run_dir, CONFIG_ECHO))
        traj = os.path.join(run_dir, "trajectory.csv")
        with open(traj, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise ValueError(f"{traj}: empty trajectory")
        last = rows[-1]
        runs.append(RunSummary(cfg.label, cfg["data.name"], _arch_name(cfg), cfg["train.seed"], float(last["test_nll"])))
    pairs, groups = compare_runs(runs, args.dlm_label, args.elbo_label)
    write_table(os.path.join(args.out, "compare.csv"), COMPARE_COLUMNS, [p.as_row() for p in pairs])
    write_table(
        os.path.join(args.out, "compare_summary.csv"),
        ("dataset", "arch", "count", "mean_delta", "min_delta", "max_delta"),
        [(g.dataset, g.arch, g.count, g.mean, g.min, g.max) for g in groups],
    )
    for p in pairs:
        print(f"{p.dataset} seed={p.seed} nll_dlm={p.nll_dlm:.5f} nll_elbo={p.nll_elbo:.5f} delta={p.delta:+.5f}")
    for g in groups:
        print(f"{g.dataset} [{g.arch}] n={g.count} delta mean={g.mean:+.5f} min={g.min:+.5f} max={g.max:+.5f}")


def cmd_oracle(args) -> None:
    if not (args.prop1 or args.bias):
        raise UsageError("oracle needs --prop1 and/or --bias")
    report: dict = {}
    ok = True
    if args.prop1:
        etas = args.eta or [0.01, 0.1, 1.0]
        model = ConjugateModel(np.zeros((1, 1)), tau2=1.0)
        results = [proposition1_grid_check(model, eta, prior_var=args.prior_var) for eta in etas]
        report["proposition1"] = [r.to_dict() for r in results]
        ok &= all(r.passed for r in results)
        for r in results:
            print(f"eta={r.eta:g} A_eta={r.a_eta:.6g} q_reg={r.q_reg} q_con={r.q_con} pass={r.passed}")
    if args.bias:
        q = MeanFieldGaussian.from_mean_var([0.3], [0.5])
        rows = mc_bias_probe(q, np.array([1.0]), 1.0, (1, 5, 10), args.trials, args.seed)
        report["bias_probe"] = [
            {"M": r.m, "elbo_mean": r.elbo_mean, "elbo_stderr": r.elbo_stderr, "exact_elbo": r.exact_elbo,
             "dlm_mean": r.dlm_mean, "dlm_stderr": r.dlm_stderr, "exact_dlm": r.exact_dlm}
            for r in rows
        ]
        for r in rows:
            print(f"M={r.m} elbo {r.elbo_mean:.5f}±{r.elbo_stderr:.5f} (exact {r.exact_elbo:.5f}) "
                  f"dlm {r.dlm_mean:.5f}±{r.dlm_stderr:.5f} (exact {r.exact_dlm:.5f})")
    report["pass"] = bool(ok)
    os.makedirs(args.out, exist_ok=True)
    atomic_write_text(os.path.join(args.out, "oracle-report.json"), _dumps_17g(report) + "\n")


def cmd_gen_data(args) -> None:
    train_set, test_set = datasets.generate_split(args.kind, args.n, args.seed, args.rate, args.base)
    os.makedirs(args.out, exist_ok=True)
    datasets.write_csv(train_set, os.path.join(args.out, "train.csv"))
    datasets.write_csv(test_set, os.path.join(args.out, "test.csv"))
    print(f"wrote {len(train_set)} train and {len(test_set)} test rows to {args.out}")


# ----------------------------------------------------------------- parser


def _add_config_args(p, flags=True):
    p.add_argument("--config", help="run configuration file (key = value)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (repeatable)")
    if flags:
        p.add_argument("--seed", type=int)
        p.add_argument("--epochs", type=int)
        p.add_argument("--objective", choices=("elbo", "dlm"))
        p.add_argument("--eta", type=float)
        p.add_argument("--label")
    p.add_argument("--train", help="training CSV (data.train)")
    p.add_argument("--test", help="test CSV (data.test)")
    p.add_argument("--out", required=True, help="output directory")


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dlmlab", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    parser.add_argument("--version", action="version", version=f"dlmlab (kernels: {kernels.BACKEND})")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a posterior from scratch")
    _add_config_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("continue", help="continue training from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    _add_config_args(p)
    p.set_defaults(func=cmd_continue)

    p = sub.add_parser("eval", help="test metrics of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="CSV to evaluate on")
    p.add_argument("--m-eval", type=int, default=10)
    p.add_argument("--eval-seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("path", help="scan the interpolation path between two checkpoints")
    p.add_argument("--a", required=True, help="checkpoint at alpha = 0")
    p.add_argument("--b", required=True, help="checkpoint at alpha = 1")
    _add_config_args(p, flags=False)
    p.add_argument("--alphas", help="comma-separated alphas (default 0, 0.05, ..., 1)")
    p.add_argument("--m-eval", type=int, default=10)
    p.add_argument("--eval-seed", type=int)
    p.add_argument("--resample", action="store_true", help="fresh noise at every alpha")
    p.set_defaults(func=cmd_path)

    p = sub.add_parser("compare", help="paired delta = nll(DLM) - nll(ELBO) table")
    p.add_argument("--runs", nargs="+", required=True, help="run directories")
    p.add_argument("--dlm-label", default="dlm")
    p.add_argument("--elbo-label", default="elbo")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("oracle", help="conjugate-model checks")
    p.add_argument("--prop1", action="store_true", help="penalised vs constrained argmin grid check")
    p.add_argument("--bias", action="store_true", help="MC estimator bias probe")
    p.add_argument("--eta", type=float, action="append")
    p.add_argument("--prior-var", type=float, default=0.05)
    p.add_argument("--trials", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("gen-data", help="generate a synthetic train/test split")
    p.add_argument("--kind", required=True, choices=datasets.GENERATORS)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rate", type=float, default=0.0, help="label-noise rate")
    p.add_argument("--base", default="two-moons", help="clean generator under label-noise")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (TrainingAborted, NonFiniteError) as exc:
        print(f"dlmlab: numerical abort: {exc}", file=sys.stderr)
        return 2
    except (ValueError, FileNotFoundError, KeyError) as exc:
        print(f"dlmlab: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
