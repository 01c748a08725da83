"""Metrics and the censored-regression comparison studies.

Four ways of handling censored rows are compared, all with ensembles:

* ``I``  - ignore the flags, train Gaussian NLL on observed values
* ``D``  - drop censored rows, train Gaussian NLL on the rest
* ``SH`` - Schmee & Hahn imputation, K rounds of Gaussian NLL fits
* ``T``  - train with the Tobit loss

Cross-validation folds are split by sampling location, so the noisy
replicates of a test location never appear in training.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import rankdata

from tobitbo.benchmarks import CensoringScheme, SyntheticFn, censor_values, generate_dataset
from tobitbo.core_math import _logsf_and_hazard
from tobitbo.ensemble import train_ensemble
from tobitbo.imputation import schmee_hahn
from tobitbo.nn import TrainConfig
from tobitbo.observations import TrainingData


class StrategyKind(str, Enum):
    I = "I"
    D = "D"
    SH = "SH"
    T = "T"


STRATEGIES = tuple(s.value for s in StrategyKind)


def rmse(preds, truths) -> float:
    p = np.asarray(preds, dtype=np.float64)
    t = np.asarray(truths, dtype=np.float64)
    if p.shape != t.shape or p.size == 0:
        raise ValueError("rmse needs two non-empty vectors of equal length")
    return float(np.sqrt(np.mean((p - t) ** 2)))


def spearman_cc(preds, truths) -> float:
    """Pearson correlation of average ranks; NaN if either vector is constant."""
    p = np.asarray(preds, dtype=np.float64)
    t = np.asarray(truths, dtype=np.float64)
    if p.shape != t.shape or p.size < 2:
        raise ValueError("spearman_cc needs two vectors of equal length >= 2")
    rp, rt = rankdata(p), rankdata(t)
    rp -= rp.mean()
    rt -= rt.mean()
    denom = math.sqrt(float(np.dot(rp, rp) * np.dot(rt, rt)))
    if denom == 0.0:
        return math.nan
    return float(np.dot(rp, rt) / denom)


def fit_censored_normal(values, flags, tol: float = 1e-10, max_iter: int = 200) -> tuple[float, float]:
    """Maximum-likelihood (mu, sigma) of a normal under right censoring.

    Newton's method in the parametrization ``(mu / sigma, 1 / sigma)``,
    where the Tobit log-likelihood is concave, with backtracking.
    """
    y = np.asarray(values, dtype=np.float64)
    c = np.asarray(flags, dtype=bool)
    if y.shape != c.shape or y.size == 0:
        raise ValueError("values and flags must be non-empty and of equal length")
    if c.all():
        raise ValueError("need at least one uncensored value")
    obs = y[~c]
    # rescale for conditioning; undone at the end
    loc = float(obs.mean())
    scale = float(obs.std()) if obs.size > 1 and obs.std() > 0 else max(1.0, float(np.abs(y - loc).max()))
    u = (y - loc) / scale
    yo, yc = u[~c], u[c]
    n_obs = yo.size

    def nll(theta):
        d, g = theta
        zo = g * yo - d
        val = 0.5 * float(zo @ zo) - n_obs * math.log(g)
        if yc.size:
            val -= float(_logsf_and_hazard(g * yc - d)[0].sum())
        return val

    def grad_hess(theta):
        d, g = theta
        zo = g * yo - d
        gr = np.array([-zo.sum(), float(zo @ yo) - n_obs / g])
        H = np.array([[n_obs, -yo.sum()], [-yo.sum(), float(yo @ yo) + n_obs / g ** 2]])
        if yc.size:
            zc = g * yc - d
            h = _logsf_and_hazard(zc)[1]
            hp = h * (h - zc)
            gr += np.array([-h.sum(), float(h @ yc)])
            H += np.array([[hp.sum(), -float(hp @ yc)], [-float(hp @ yc), float(hp @ (yc * yc))]])
        return gr, H

    theta = np.array([0.0, 1.0])
    f = nll(theta)
    for _ in range(max_iter):
        gr, H = grad_hess(theta)
        try:
            step = np.linalg.solve(H, gr)
        except np.linalg.LinAlgError:
            step = gr
        t = 1.0
        while True:
            cand = theta - t * step
            if cand[1] > 0:
                fc = nll(cand)
                if fc <= f - 1e-4 * t * float(gr @ step) or t < 1e-12:
                    break
            t *= 0.5
        moved = np.abs(cand - theta).max()
        theta, f = cand, fc
        if moved < tol:
            break
    d, g = theta
    return float(loc + scale * d / g), float(scale / g)


# -- cross-validation studies ------------------------------------------------------


@dataclass(frozen=True)
class StudyConfig:
    ensemble_size: int = 5
    sh_iterations: int = 5
    folds: int = 5
    train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=2000))


@dataclass
class CellResult:
    """One (function, censoring) cell: per-strategy RMSE for every (seed, fold)."""

    function: str
    scheme: str
    censored_fraction: float
    per_fold: dict[str, list[float]]

    def mean(self, strategy: str) -> float:
        vals = self.per_fold.get(strategy, [])
        if not vals or any(math.isnan(v) for v in vals):
            return math.nan
        return float(np.mean(vals))


def _fold_assignment(n_loc: int, k: int, seed: int) -> np.ndarray:
    perm = np.random.Generator(np.random.PCG64([seed, 808])).permutation(n_loc)
    fold = np.empty(n_loc, dtype=int)
    fold[perm] = np.arange(n_loc) % k
    return fold


def _member_seed(seed: int, fold: int) -> int:
    return int(np.random.SeedSequence([seed, 909, fold]).generate_state(1)[0] % (2 ** 31))


class _MemoTrainer:
    """Gaussian-NLL ensemble trainer that reuses fits of identical targets."""

    def __init__(self, M, cfg, base_seed, bounds):
        self.M, self.cfg, self.base_seed, self.bounds = M, cfg, base_seed, bounds
        self.cache: dict[bytes, object] = {}
        self.calls = 0

    def __call__(self, data: TrainingData):
        self.calls += 1
        key = data.y.tobytes()
        if key not in self.cache:
            self.cache[key] = train_ensemble(data, self.M, self.cfg, self.base_seed, "gaussian_nll", self.bounds)
        return self.cache[key]


def _prepare(fn: SyntheticFn, scheme: CensoringScheme, seed: int):
    ds = generate_dataset(fn, seed)
    observed, flags, _ = censor_values(ds.noisy_y, replace(scheme, seed=seed))
    return ds, observed, flags


def _test_points(ds, test_rows):
    locs, first = np.unique(ds.location[test_rows], return_index=True)
    rows = np.flatnonzero(test_rows)[first]
    return ds.X[rows], ds.true_y[rows]


def fit_strategy(data: TrainingData, strategy: str, M: int = 5, cfg: TrainConfig | None = None,
                 base_seed: int = 0, bounds=None, K: int = 5, trainer=None):
    """Train an ensemble on ``data`` handling censored rows as ``strategy`` prescribes.

    Raises ``ValueError`` when ``D`` leaves no rows.
    """
    s = StrategyKind(strategy).value
    X, y, c = data
    trainer = trainer or _MemoTrainer(M, cfg, base_seed, bounds)
    if s == "I":
        return trainer(TrainingData(X, y, np.zeros_like(c)))
    if s == "D":
        keep = ~c
        if not keep.any():
            raise ValueError("no uncensored observations")
        return trainer(TrainingData(X[keep], y[keep], c[keep]))
    if s == "SH":
        return schmee_hahn(data, K, trainer).model
    return train_ensemble(data, M, cfg, base_seed, "tobit", bounds)


def _fold_task(args):
    fn, scheme, seed, fold, strategies, study = args
    ds, observed, flags = _prepare(fn, scheme, seed)
    assign = _fold_assignment(len(np.unique(ds.location)), study.folds, seed)
    test_rows = assign[ds.location] == fold
    tr = ~test_rows
    data = TrainingData(ds.X[tr], observed[tr], flags[tr])
    Xte, fte = _test_points(ds, test_rows)
    base = _member_seed(seed, fold)
    # one memoizing trainer per fold, so S&H's first round reuses the I fit
    trainer = _MemoTrainer(study.ensemble_size, study.train, base, fn.bounds)
    out = {}
    for s in strategies:
        try:
            model = fit_strategy(data, s, study.ensemble_size, study.train, base, fn.bounds,
                                 study.sh_iterations, trainer)
        except ValueError:
            out[s] = math.nan
            continue
        out[s] = rmse(model.predict(Xte)[0], fte)
    return out


def _run_tasks(fn, tasks, jobs):
    if jobs and jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(fn, tasks))
    return [fn(t) for t in tasks]


def kfold_table1(fn: SyntheticFn, scheme: CensoringScheme, strategies: Sequence[str] = STRATEGIES,
                 seeds: Iterable[int] = (0,), study: StudyConfig | None = None, jobs: int = 1) -> CellResult:
    """Location-split k-fold RMSE of the ensemble mean against the noise-free function.

    For each seed the dataset, censoring draw and folds are fixed and shared
    by all strategies; the scheme's own seed is replaced by the study seed.
    """
    study = study or StudyConfig()
    strategies = [StrategyKind(s).value for s in strategies]
    seeds = list(seeds)
    tasks = [(fn, scheme, s, f, strategies, study) for s in seeds for f in range(study.folds)]
    results = _run_tasks(_fold_task, tasks, jobs)
    per_fold = {s: [r[s] for r in results] for s in strategies}
    frac = float(np.mean([_prepare(fn, scheme, s)[2].mean() for s in seeds]))
    return CellResult(fn.name, scheme.label, frac, per_fold)


def _trace_task(args):
    fn, scheme, seed, fold, K, study = args
    ds, observed, flags = _prepare(fn, scheme, seed)
    assign = _fold_assignment(len(np.unique(ds.location)), study.folds, seed)
    test_rows = assign[ds.location] == fold
    tr = ~test_rows
    Xte, fte = _test_points(ds, test_rows)
    base = _member_seed(seed, fold)
    trainer = _MemoTrainer(study.ensemble_size, study.train, base, fn.bounds)
    res = schmee_hahn(TrainingData(ds.X[tr], observed[tr], flags[tr]), K, trainer, keep_models=True)
    models = res.trace.models or [res.model]
    per_iter = [rmse(m.predict(Xte)[0], fte) for m in models]
    tobit = train_ensemble(TrainingData(ds.X[tr], observed[tr], flags[tr]), study.ensemble_size, study.train,
                           base, "tobit", fn.bounds)
    return per_iter, rmse(tobit.predict(Xte)[0], fte)


def sh_trace_study(fn: SyntheticFn, scheme: CensoringScheme, K: int = 5, seeds: Iterable[int] = (0,),
                   study: StudyConfig | None = None, jobs: int = 1) -> list[tuple]:
    """Rows ``(iteration, mean RMSE, std RMSE)`` over folds for each S&H round,
    followed by a ``("tobit", mean, std)`` reference row."""
    if K < 1:
        raise ValueError("K must be at least 1")
    study = study or StudyConfig()
    tasks = [(fn, scheme, s, f, K, study) for s in seeds for f in range(study.folds)]
    results = _run_tasks(_trace_task, tasks, jobs)
    width = max(len(r[0]) for r in results)
    rows = []
    for k in range(width):
        vals = np.array([r[0][min(k, len(r[0]) - 1)] for r in results])
        rows.append((k + 1, float(vals.mean()), float(vals.std())))
    tob = np.array([r[1] for r in results])
    rows.append(("tobit", float(tob.mean()), float(tob.std())))
    return rows
