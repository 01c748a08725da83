"""Command-line interface.

Experiments are described by an INI-style file; command-line flags override
it. Every key is optional; unknown sections or keys are rejected. Relative
paths are resolved against the directory of the config file.

    [experiment]
    output = results          # output directory
    seeds = 0-4               # comma list and/or inclusive ranges
    jobs = 1

    [data]
    functions = branin, hartmann3
    schemes = p10, p80        # pNN ramp censoring, fixed:VALUE, or none
    locations_per_dim = 100
    copies = 10

    [study]
    strategies = I, D, SH, T
    ensemble_size = 5
    folds = 5
    sh_iterations = 5

    [train]
    epochs = 2000
    batch_size = 16
    peak_lr = 0.01
    momentum = 0.9
    weight_decay = 0.0001
    grad_clip = 0.1

    [optimize]
    function = branin
    methods = nn_ts_tobit, random
    budget = 300
    kappa_max = 100
    pool_size = 512
    max_runs = 8
    slack = 1.2
    inner_epochs = 500
    cold_start = 8
    noise = 0.3
    validation_runs = 1000

Outputs (all inside the output directory):

    datagen   {function}_{scheme}_seed{seed}.jsonl
    table1    table1.csv (function, then one {scheme}_{strategy} column per
              cell holding the mean RMSE over seeds and folds; empty when the
              strategy failed) and table1_folds.csv (one row per fold)
    shtrace   shtrace_{function}_{scheme}.csv (iteration, mean, std)
    optimize  history_{method}_seed{seed}.jsonl, trajectory_{method}_seed{seed}.csv,
              per_seed.csv and summary.csv (method, n, median, q25, q75)

Exit status: 0 on success, 1 when an ``--assert`` check fails, 2 on usage or
input errors.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import logging
import math
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from tobitbo.benchmarks import (CensoringScheme, SimulatedTarget, censor_values, generate_dataset,
                                get_function)
from tobitbo.ensemble import Ensemble
from tobitbo.evaluation import STRATEGIES, StrategyKind, StudyConfig, fit_strategy, kfold_table1, sh_trace_study
from tobitbo.imputation import ImputationError
from tobitbo.nn import TrainConfig, TrainingError, load_snapshot, save_snapshot
from tobitbo.observations import MalformedRecord, Observation, as_arrays, read_jsonl
from tobitbo.optimizer import METHODS, OptimizerConfig, optimize, validate_incumbent

log = logging.getLogger("tobitbo")


class UsageError(Exception):
    pass


# -- configuration ---------------------------------------------------------------


def _int_list(text: str) -> list[int]:
    out = []
    for part in text.replace(" ", "").split(","):
        if not part:
            continue
        m = re.fullmatch(r"(\d+)-(\d+)", part)
        out.extend(range(int(m[1]), int(m[2]) + 1) if m else [int(part)])
    if not out:
        raise ValueError("empty list")
    return out


def _str_list(text: str) -> list[str]:
    out = [p.strip() for p in text.split(",") if p.strip()]
    if not out:
        raise ValueError("empty list")
    return out


def parse_scheme(text: str, seed: int = 0) -> CensoringScheme:
    t = text.strip().lower()
    if t == "none":
        return CensoringScheme("none", None, None, seed)
    if t.startswith("fixed:"):
        return CensoringScheme("fixed", None, float(t[6:]), seed)
    if t.startswith("p"):
        p = float(t[1:])
        if not 0 <= p <= 100:
            raise ValueError(f"percentile out of range in {text!r}")
        return CensoringScheme("random_ramp", p, None, seed)
    raise ValueError(f"unrecognized censoring scheme {text!r}")


_SCHEMA = {
    "experiment": {"output": Path, "seeds": _int_list, "jobs": int},
    "data": {"functions": _str_list, "schemes": _str_list, "locations_per_dim": int, "copies": int},
    "study": {"strategies": _str_list, "ensemble_size": int, "folds": int, "sh_iterations": int},
    "train": {"epochs": int, "batch_size": int, "peak_lr": float, "momentum": float,
              "weight_decay": float, "grad_clip": float},
    "optimize": {"function": str, "methods": _str_list, "budget": float, "kappa_max": float,
                 "pool_size": int, "max_runs": int, "slack": float, "inner_epochs": int,
                 "cold_start": int, "noise": float, "validation_runs": int},
}


@dataclass
class ExperimentConfig:
    output: Path = Path("results")
    seeds: list[int] = field(default_factory=lambda: [0])
    jobs: int = 1
    functions: list[str] = field(default_factory=lambda: ["branin"])
    schemes: list[str] = field(default_factory=lambda: ["p20"])
    locations_per_dim: int = 100
    copies: int = 10
    strategies: list[str] = field(default_factory=lambda: list(STRATEGIES))
    ensemble_size: int = 5
    folds: int = 5
    sh_iterations: int = 5
    epochs: int = 2000
    batch_size: int = 16
    peak_lr: float = 1e-2
    momentum: float = 0.9
    weight_decay: float = 1e-4
    grad_clip: float = 0.1
    function: str = "branin"
    methods: list[str] = field(default_factory=lambda: list(METHODS))
    budget: float = OptimizerConfig.budget
    kappa_max: float = OptimizerConfig.kappa_max
    pool_size: int = OptimizerConfig.pool_size
    max_runs: int = OptimizerConfig.max_runs
    slack: float = OptimizerConfig.slack
    inner_epochs: int = OptimizerConfig.inner_epochs
    cold_start: int = OptimizerConfig.cold_start
    noise: float = 0.3
    validation_runs: int = 1000

    def train_config(self, seed: int = 0) -> TrainConfig:
        return TrainConfig(self.epochs, self.batch_size, self.peak_lr, self.momentum,
                           self.weight_decay, self.grad_clip, seed)

    def study_config(self) -> StudyConfig:
        return StudyConfig(self.ensemble_size, self.sh_iterations, self.folds, self.train_config())

    def optimizer_config(self, seed: int) -> OptimizerConfig:
        return OptimizerConfig(budget=self.budget, kappa_max=self.kappa_max, pool_size=self.pool_size,
                               max_runs=self.max_runs, slack=self.slack, inner_epochs=self.inner_epochs,
                               cold_start=self.cold_start, seed=seed, train=self.train_config(seed))


def load_config(path: str | Path | None) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if path is None:
        return cfg
    path = Path(path)
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from None
    except configparser.Error as exc:
        raise UsageError(f"{path}: {exc}") from None
    for section in parser.sections():
        if section not in _SCHEMA:
            raise UsageError(f"{path}: unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in _SCHEMA[section]:
                raise UsageError(f"{path}: unknown key {key!r} in [{section}]")
            try:
                value = _SCHEMA[section][key](raw)
            except ValueError as exc:
                raise UsageError(f"{path}: bad value for {key}: {exc}") from None
            setattr(cfg, key, value)
    if not cfg.output.is_absolute():
        cfg.output = (path.parent / cfg.output).resolve()
    return cfg


def _resolve(args) -> ExperimentConfig:
    cfg = load_config(getattr(args, "config", None))
    if getattr(args, "out", None) is not None:
        cfg.output = Path(args.out)
    if getattr(args, "seed", None) is not None:
        cfg.seeds = [args.seed]
    if getattr(args, "jobs", None) is not None:
        cfg.jobs = args.jobs
    for name in ("functions", "schemes", "strategies", "methods"):
        v = getattr(args, name, None)
        if v:
            setattr(cfg, name, _str_list(v))
    for name in ("budget", "epochs"):
        v = getattr(args, name, None)
        if v is not None:
            setattr(cfg, name, v)
    if cfg.jobs < 1:
        raise UsageError("jobs must be at least 1")
    return cfg


def _outdir(cfg: ExperimentConfig) -> Path:
    try:
        cfg.output.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {cfg.output}: {exc.strerror}") from None
    if not cfg.output.is_dir():
        raise UsageError(f"output path {cfg.output} is not a directory")
    return cfg.output


def _fmt(v: float) -> str:
    return "" if v is None or (isinstance(v, float) and math.isnan(v)) else repr(float(v))


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


# -- commands ----------------------------------------------------------------------


def cmd_datagen(args) -> int:
    cfg = _resolve(args)
    # validate every name before the first file is written
    fns = [get_function(f) for f in cfg.functions]
    schemes = [parse_scheme(s) for s in cfg.schemes]
    out = _outdir(cfg)
    for fn in fns:
        for scheme in schemes:
            for seed in cfg.seeds:
                ds = generate_dataset(fn, seed, cfg.locations_per_dim, cfg.copies)
                observed, flags, cutoffs = censor_values(ds.noisy_y, replace(scheme, seed=seed))
                path = out / f"{fn.name}_{scheme.label}_seed{seed}.jsonl"
                with open(path, "w", encoding="utf-8", newline="\n") as fh:
                    for x, y, c, k in zip(ds.X, observed, flags, cutoffs):
                        fh.write(Observation(tuple(x), float(y), bool(c), float(k)).to_json() + "\n")
                print(f"{path.name}: {len(ds)} records, censored fraction {flags.mean():.3f}")
    return 0


def cmd_table1(args) -> int:
    cfg = _resolve(args)
    fns = [get_function(f) for f in cfg.functions]
    schemes = [parse_scheme(s) for s in cfg.schemes]
    strategies = [StrategyKind(s).value for s in cfg.strategies]
    out = _outdir(cfg)
    study = cfg.study_config()
    header = ["function"] + [f"{sc.label}_{s}" for sc in schemes for s in strategies]
    rows, fold_rows, ok = [], [], True
    for fn in fns:
        row = [fn.name]
        for scheme in schemes:
            cell = kfold_table1(fn, scheme, strategies, cfg.seeds, study, cfg.jobs)
            for s in strategies:
                m = cell.mean(s)
                if math.isnan(m):
                    log.warning("%s %s: strategy %s failed on at least one fold", fn.name, scheme.label, s)
                row.append(_fmt(m))
            for i, seed in enumerate(cfg.seeds):
                for f in range(study.folds):
                    j = i * study.folds + f
                    fold_rows.append([fn.name, scheme.label, seed, f] + [_fmt(cell.per_fold[s][j]) for s in strategies])
            if "T" in strategies and "I" in strategies:
                ok &= not cell.mean("T") > cell.mean("I")
            print(f"{fn.name} {scheme.label} (censored {cell.censored_fraction:.3f}): "
                  + ", ".join(f"{s}={_fmt(cell.mean(s)) or 'failed'}" for s in strategies))
        rows.append(row)
    _write_csv(out / "table1.csv", header, rows)
    _write_csv(out / "table1_folds.csv", ["function", "scheme", "seed", "fold"] + strategies, fold_rows)
    if args.check and not ok:
        print("assertion failed: RMSE(T) exceeds RMSE(I) in some cell", file=sys.stderr)
        return 1
    return 0


def cmd_shtrace(args) -> int:
    cfg = _resolve(args)
    fns = [get_function(f) for f in cfg.functions]
    schemes = [parse_scheme(s) for s in cfg.schemes]
    K = args.iterations if args.iterations is not None else cfg.sh_iterations
    if K < 1:
        raise UsageError("K must be at least 1")
    out = _outdir(cfg)
    for fn in fns:
        for scheme in schemes:
            rows = sh_trace_study(fn, scheme, K, cfg.seeds, cfg.study_config(), cfg.jobs)
            path = out / f"shtrace_{fn.name}_{scheme.label}.csv"
            _write_csv(path, ["iteration", "mean", "std"], [[r[0], _fmt(r[1]), _fmt(r[2])] for r in rows])
            print(f"{path.name}: " + ", ".join(f"{r[0]}={r[1]:.4g}" for r in rows))
    return 0


def _optimize_one(task):
    cfg, method, seed = task
    out = cfg.output
    target = SimulatedTarget(get_function(cfg.function), s=cfg.noise)
    res = optimize(target, cfg=cfg.optimizer_config(seed), method=method,
                   history_path=out / f"history_{method}_seed{seed}.jsonl")
    res.write_trajectory(out / f"trajectory_{method}_seed{seed}.csv")
    stats = validate_incumbent(res.incumbent, target, cfg.validation_runs, seed)
    return method, seed, stats.mean, res.iterations


def cmd_optimize(args) -> int:
    cfg = _resolve(args)
    get_function(cfg.function)
    for m in cfg.methods:
        if m not in METHODS:
            raise UsageError(f"unknown method {m!r}; choose from {METHODS}")
    cfg.optimizer_config(cfg.seeds[0])
    out = _outdir(cfg)
    tasks = [(cfg, m, s) for m in cfg.methods for s in cfg.seeds]
    results = []
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as ex:
            futures = [ex.submit(_optimize_one, t) for t in tasks]
            for t, fut in zip(tasks, futures):
                try:
                    results.append(fut.result())
                except Exception as exc:  # noqa: BLE001 - one bad seed must not sink the study
                    log.error("%s seed %d failed: %s", t[1], t[2], exc)
    else:
        for t in tasks:
            try:
                results.append(_optimize_one(t))
            except (TrainingError, ValueError, FloatingPointError) as exc:
                log.error("%s seed %d failed: %s", t[1], t[2], exc)
    _write_csv(out / "per_seed.csv", ["method", "seed", "validated_cost", "iterations"],
               [[m, s, repr(c), it] for m, s, c, it in results])
    summary, medians = [], {}
    for m in cfg.methods:
        costs = np.array([c for mm, _, c, _ in results if mm == m])
        if costs.size == 0:
            continue
        q25, med, q75 = np.percentile(costs, [25, 50, 75])
        medians[m] = med
        summary.append([m, costs.size, repr(float(med)), repr(float(q25)), repr(float(q75))])
        print(f"{m}: median {med:.4g} (q25 {q25:.4g}, q75 {q75:.4g}) over {costs.size} seeds")
    _write_csv(out / "summary.csv", ["method", "n", "median", "q25", "q75"], summary)
    if args.check:
        if not ("nn_ts_tobit" in medians and "random" in medians):
            print("assertion needs both methods to complete", file=sys.stderr)
            return 1
        if medians["nn_ts_tobit"] > medians["random"]:
            print("assertion failed: nn_ts_tobit median exceeds random median", file=sys.stderr)
            return 1
    return 0


def _load_dataset(path):
    try:
        obs = read_jsonl(path)
    except MalformedRecord as exc:
        raise UsageError(f"{path}: line {exc.lineno}: {exc}") from None
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None
    if not obs:
        raise UsageError(f"{path}: no records")
    try:
        return as_arrays(obs)
    except ValueError as exc:
        raise UsageError(f"{path}: {exc}") from None


def cmd_fit(args) -> int:
    cfg = _resolve(args)
    data = _load_dataset(args.data)
    seed = cfg.seeds[0]
    members = args.members if args.members is not None else cfg.ensemble_size
    try:
        model = fit_strategy(data, args.strategy, members, cfg.train_config(seed), seed,
                             K=cfg.sh_iterations)
    except (ValueError, ImputationError) as exc:
        raise UsageError(str(exc)) from None
    Path(args.model).parent.mkdir(parents=True, exist_ok=True)
    save_snapshot(args.model, model.members, model.normalizer,
                  {"strategy": args.strategy, "loss": model.loss, "seed": seed})
    print(f"fitted {model.size} members with strategy {args.strategy} on {len(data.y)} rows -> {args.model}")
    return 0


def cmd_predict(args) -> int:
    try:
        nets, norm, meta = load_snapshot(args.model)
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot load model {args.model}: {exc}") from None
    model = Ensemble(nets, norm, meta.get("loss", "gaussian_nll"))
    X = _load_dataset(args.data).X
    if X.shape[1] != model.input_dim:
        raise UsageError(f"input dimension {X.shape[1]} does not match model dimension {model.input_dim}")
    mu, var = model.predict(X)
    Path(args.predictions).parent.mkdir(parents=True, exist_ok=True)
    _write_csv(Path(args.predictions), [f"x{i}" for i in range(X.shape[1])] + ["mu", "sigma2"],
               [[repr(float(v)) for v in x] + [repr(float(m)), repr(float(s))] for x, m, s in zip(X, mu, var)])
    print(f"wrote {len(mu)} predictions to {args.predictions}")
    return 0


def cmd_validate(args) -> int:
    cfg = _resolve(args)
    fn = get_function(cfg.function)
    if (args.x is None) == (args.trajectory is None):
        raise UsageError("give exactly one of --x or --trajectory")
    if args.x is not None:
        try:
            x = np.array([float(v) for v in args.x.split(",")])
        except ValueError:
            raise UsageError(f"cannot parse --x {args.x!r}") from None
    else:
        try:
            with open(args.trajectory, newline="", encoding="utf-8") as fh:
                rows = list(csv.DictReader(fh))
        except OSError as exc:
            raise UsageError(f"cannot read {args.trajectory}: {exc.strerror}") from None
        if not rows:
            raise UsageError(f"{args.trajectory}: empty trajectory")
        x = np.array([float(rows[-1][f"x{i}"]) for i in range(fn.dim)])
    if not fn.in_domain(x):
        raise UsageError(f"configuration {list(x)} outside the {fn.name} domain")
    runs = args.runs if args.runs is not None else cfg.validation_runs
    st = validate_incumbent(x, SimulatedTarget(fn, s=cfg.noise), runs, cfg.seeds[0])
    out = _outdir(cfg)
    _write_csv(out / "validation.csv", ["n", "mean", "median", "q25", "q75"],
               [[st.n, repr(st.mean), repr(st.median), repr(st.q25), repr(st.q75)]])
    print(f"mean {st.mean:.4g}, median {st.median:.4g} (q25 {st.q25:.4g}, q75 {st.q75:.4g}) over {st.n} runs")
    return 0


# -- argument parsing ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tobitbo", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out=True):
        sp.add_argument("--config", help="experiment config file")
        sp.add_argument("--seed", type=int, help="run only this seed")
        sp.add_argument("--jobs", type=int, help="worker processes")
        if out:
            sp.add_argument("--out", help="output directory (overrides the config)")

    sp = sub.add_parser("datagen", help="write censored datasets as JSONL")
    common(sp)
    sp.add_argument("--functions")
    sp.add_argument("--schemes")
    sp.set_defaults(func=cmd_datagen)

    sp = sub.add_parser("table1", help="k-fold RMSE of the four strategies")
    common(sp)
    sp.add_argument("--functions")
    sp.add_argument("--schemes")
    sp.add_argument("--strategies")
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--assert", dest="check", action="store_true", help="exit 1 unless T <= I in every cell")
    sp.set_defaults(func=cmd_table1)

    sp = sub.add_parser("shtrace", help="RMSE per imputation round plus a Tobit reference")
    common(sp)
    sp.add_argument("--functions")
    sp.add_argument("--schemes")
    sp.add_argument("-K", "--iterations", type=int)
    sp.add_argument("--epochs", type=int)
    sp.set_defaults(func=cmd_shtrace)

    sp = sub.add_parser("optimize", help="race nn_ts_tobit and random search on the simulator")
    common(sp)
    sp.add_argument("--methods")
    sp.add_argument("--budget", type=float)
    sp.add_argument("--assert", dest="check", action="store_true",
                    help="exit 1 unless the nn_ts_tobit median is at most the random median")
    sp.set_defaults(func=cmd_optimize)

    sp = sub.add_parser("fit", help="train an ensemble on a JSONL dataset")
    common(sp, out=False)
    sp.add_argument("--data", required=True)
    sp.add_argument("--strategy", default="T", choices=STRATEGIES)
    sp.add_argument("--model", required=True, help="snapshot file to write")
    sp.add_argument("--members", type=int)
    sp.add_argument("--epochs", type=int)
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("predict", help="predict with a saved snapshot")
    sp.add_argument("--model", required=True)
    sp.add_argument("--data", required=True, help="JSONL whose x fields are predicted")
    sp.add_argument("--predictions", required=True, help="CSV file to write")
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("validate", help="uncapped validation runs of a configuration")
    common(sp)
    sp.add_argument("--x", help="comma-separated configuration")
    sp.add_argument("--trajectory", help="trajectory CSV; its last incumbent is validated")
    sp.add_argument("--runs", type=int)
    sp.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, KeyError, ValueError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
