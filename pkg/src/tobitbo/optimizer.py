"""Model-based configuration with racing and adaptive capping.

Each iteration proposes one challenger, then races it against the
incumbent on matched run indices with run cutoffs derived from the
incumbent's cost. The ``nn_ts_tobit`` method proposes by training a single
fresh Tobit network on the log-costs of the whole history and taking the
argmin of its mean head over a random candidate pool (a Thompson sample:
the network's random initialization and shuffling play the role of the
posterior draw). The ``random`` method draws challengers uniformly.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Optional

import numpy as np

from tobitbo.benchmarks import SimulatedTarget, run_target
from tobitbo.core_math import seeded_rng
from tobitbo.nn import TrainConfig, TrainingError, fit_normalizer, forward, init_mlp, train
from tobitbo.observations import Observation, TrainingData

log = logging.getLogger(__name__)

METHODS = ("nn_ts_tobit", "random")


@dataclass(frozen=True)
class OptimizerConfig:
    budget: float = 300.0
    max_iterations: Optional[int] = None
    kappa_max: float = 100.0
    pool_size: int = 512
    max_runs: int = 8
    slack: float = 1.2
    inner_epochs: int = 500
    cold_start: int = 8
    seed: int = 0
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if not self.budget > 0:
            raise ValueError("budget must be positive")
        if self.max_iterations is not None and self.max_iterations < 0:
            raise ValueError("max_iterations must be non-negative")
        for name in ("kappa_max", "pool_size", "max_runs", "inner_epochs", "cold_start"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.slack < 1:
            raise ValueError("slack must be at least 1")


def run_seed(seed: int, run_index: int) -> int:
    """Seed of the ``run_index``-th run of any configuration; shared across configurations."""
    return int(np.random.SeedSequence([seed, 404, run_index]).generate_state(1)[0])


@dataclass
class RunHistory:
    """Append-only run log plus per-configuration run costs.

    ``runs[cid]`` maps run index to capped cost; ``incumbent`` is a config id.
    """

    observations: list[Observation] = field(default_factory=list)
    records: list[dict] = field(default_factory=list)
    configs: list[tuple] = field(default_factory=list)
    runs: list[dict] = field(default_factory=list)
    incumbent: Optional[int] = None
    spent: float = 0.0
    events: list[str] = field(default_factory=list)
    sink: Optional[IO] = None

    def config_id(self, x) -> int:
        key = tuple(float(v) for v in x)
        try:
            return self.configs.index(key)
        except ValueError:
            self.configs.append(key)
            self.runs.append({})
            return len(self.configs) - 1

    def add(self, cid: int, run_index: int, obs: Observation, iteration: int) -> None:
        self.observations.append(obs)
        rec = {"iteration": iteration, "incumbent": cid == self.incumbent}
        self.records.append(rec)
        self.runs[cid][run_index] = obs.y
        self.spent += obs.y
        if self.sink is not None:
            line = Observation(obs.x, obs.y, obs.censored, obs.cutoff, rec).to_json()
            self.sink.write(line + "\n")
            self.sink.flush()

    def n_runs(self, cid: int) -> int:
        return len(self.runs[cid])

    def cost_sum(self, cid: int, upto: int) -> float:
        r = self.runs[cid]
        return float(sum(r[j] for j in range(upto)))

    def mean_cost(self, cid: int) -> float:
        r = self.runs[cid]
        return float(sum(r.values()) / len(r))

    def training_data(self) -> TrainingData:
        """Log-costs of every run, censored runs at their log cutoff."""
        X = np.array([o.x for o in self.observations], dtype=np.float64)
        y = np.log(np.array([o.y for o in self.observations], dtype=np.float64))
        c = np.array([o.censored for o in self.observations], dtype=bool)
        return TrainingData(X, y, c)

    def write_jsonl(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for obs, rec in zip(self.observations, self.records):
                fh.write(Observation(obs.x, obs.y, obs.censored, obs.cutoff, rec).to_json() + "\n")


@dataclass
class Proposal:
    x: np.ndarray
    source: str
    networks_trained: int = 0


def _uniform(rng, space) -> np.ndarray:
    lo, hi = (np.asarray(b, dtype=np.float64) for b in space)
    return lo + (hi - lo) * rng.random(len(lo))


def propose(history: RunHistory, space, cfg: OptimizerConfig, iteration: int,
            rng: Optional[np.random.Generator] = None) -> Proposal:
    """Thompson-sampling proposal from one freshly trained Tobit network."""
    rng = rng if rng is not None else seeded_rng([cfg.seed, 606, iteration])
    if not any(not o.censored for o in history.observations):
        return Proposal(_uniform(rng, space), "random-fallback")
    lo, hi = (np.asarray(b, dtype=np.float64) for b in space)
    data = history.training_data()
    norm = fit_normalizer(data, bounds=(lo, hi))
    net_seed = int(np.random.SeedSequence([cfg.seed, 607, iteration]).generate_state(1)[0])
    net = init_mlp(len(lo), net_seed)
    tcfg = cfg.train.with_(epochs=cfg.inner_epochs, seed=cfg.seed)
    try:
        net, _ = train(net, data, "tobit", norm, tcfg)
    except TrainingError as exc:
        history.events.append(f"iteration {iteration}: {exc}; falling back to a random proposal")
        log.warning(history.events[-1])
        return Proposal(_uniform(rng, space), "random-fallback", 1)
    pool = lo + (hi - lo) * rng.random((cfg.pool_size, len(lo)))
    # an incumbent with all its runs would win a race without running anything,
    # so it is only a candidate while it can still gain runs
    inc = history.incumbent
    if inc is not None and history.n_runs(inc) < cfg.max_runs:
        pool = np.vstack([pool, np.asarray(history.configs[history.incumbent])])
    scores = np.asarray(forward(net, norm.apply_x(pool)).mu_hat)
    return Proposal(pool[int(np.argmin(scores))], "model", 1)


@dataclass
class RaceOutcome:
    challenger: int
    accepted: bool
    runs: int
    reason: str


def race(x, history: RunHistory, target: SimulatedTarget, cfg: OptimizerConfig, iteration: int) -> RaceOutcome:
    """Race challenger ``x`` against the incumbent.

    The incumbent first gains one run (up to ``max_runs``). The challenger
    then runs in rounds of 1, 2, 4, ... runs on the incumbent's run indices
    until it matches the incumbent's run count. Each run's cutoff is
    ``min(kappa_max, slack * (incumbent cost on this round's runs - challenger
    cost so far))``. After a round, a challenger with a higher mean capped
    cost is rejected; a challenger that completes with a strictly lower mean
    replaces the incumbent. Exact ties keep the incumbent.
    """
    inc = history.incumbent
    if inc is None:
        raise ValueError("race needs an incumbent")
    n_inc = history.n_runs(inc)
    if n_inc < cfg.max_runs:
        obs = run_target(target, history.configs[inc], cfg.kappa_max, run_seed(cfg.seed, n_inc))
        history.add(inc, n_inc, obs, iteration)
        n_inc += 1

    cid = history.config_id(x)
    if cid == inc:
        return RaceOutcome(cid, False, 0, "challenger is the incumbent")
    goal = n_inc
    done, size, chal_sum, n_new = 0, 1, 0.0, 0
    known = history.runs[cid]
    while done < goal:
        upto = min(done + size, goal)
        inc_sum = history.cost_sum(inc, upto)
        for j in range(done, upto):
            if j in known:
                # a previous race already ran this configuration on run j
                chal_sum += known[j]
                continue
            kappa = min(cfg.kappa_max, cfg.slack * (inc_sum - chal_sum))
            if kappa <= 0:
                return RaceOutcome(cid, False, n_new, "capping budget exhausted")
            obs = run_target(target, history.configs[cid], kappa, run_seed(cfg.seed, j))
            history.add(cid, j, obs, iteration)
            chal_sum += obs.y
            n_new += 1
        done = upto
        if chal_sum / done > inc_sum / done:
            return RaceOutcome(cid, False, n_new, f"worse after {done} runs")
        size *= 2
    if chal_sum < history.cost_sum(inc, goal):
        history.incumbent = cid
        history.events.append(f"iteration {iteration}: config {cid} replaces {inc}")
        return RaceOutcome(cid, True, n_new, "new incumbent")
    return RaceOutcome(cid, False, n_new, "tie keeps incumbent")


@dataclass
class TrajectoryPoint:
    iteration: int
    wallclock: float
    incumbent: tuple
    incumbent_cost: float


@dataclass
class OptimizationResult:
    history: RunHistory
    trajectory: list[TrajectoryPoint]
    method: str
    networks_trained: int = 0
    iterations: int = 0

    @property
    def incumbent(self) -> np.ndarray:
        return np.asarray(self.history.configs[self.history.incumbent])

    def write_trajectory(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            dim = len(self.trajectory[0].incumbent) if self.trajectory else 0
            w.writerow(["iteration", "wallclock", "incumbent_cost"] + [f"x{i}" for i in range(dim)])
            for p in self.trajectory:
                w.writerow([p.iteration, repr(p.wallclock), repr(p.incumbent_cost)] + [repr(v) for v in p.incumbent])


def optimize(target: SimulatedTarget, space=None, cfg: OptimizerConfig | None = None,
             method: str = "nn_ts_tobit", history_path: str | Path | None = None) -> OptimizationResult:
    """Cold start with uniform configurations, then propose and race until the
    budget (total capped cost of target runs) or ``max_iterations`` runs out.

    ``wallclock`` in the trajectory is the simulated cost spent so far.
    """
    cfg = cfg or OptimizerConfig()
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {METHODS}")
    space = space if space is not None else target.bounds
    sink = open(history_path, "w", encoding="utf-8", newline="\n") if history_path else None
    try:
        return _optimize(target, space, cfg, method, sink)
    finally:
        if sink is not None:
            sink.close()


def _optimize(target, space, cfg, method, sink) -> OptimizationResult:
    history = RunHistory(sink=sink)
    rng = seeded_rng([cfg.seed, 505])
    trajectory: list[TrajectoryPoint] = []

    def snapshot(it):
        inc = history.incumbent
        trajectory.append(TrajectoryPoint(it, history.spent, history.configs[inc], history.mean_cost(inc)))

    initial = []
    for _ in range(cfg.cold_start):
        cid = history.config_id(_uniform(rng, space))
        obs = run_target(target, history.configs[cid], cfg.kappa_max, run_seed(cfg.seed, 0))
        history.add(cid, 0, obs, 0)
        initial.append((obs.y, cid))
    history.incumbent = min(initial)[1]
    snapshot(0)

    trained = 0
    it = 0
    while history.spent < cfg.budget and (cfg.max_iterations is None or it < cfg.max_iterations):
        it += 1
        if method == "random":
            x = _uniform(rng, space)
        else:
            prop = propose(history, space, cfg, it)
            trained += prop.networks_trained
            x = prop.x
        race(x, history, target, cfg, it)
        snapshot(it)
    return OptimizationResult(history, trajectory, method, trained, it)


@dataclass(frozen=True)
class ValidationStats:
    n: int
    mean: float
    median: float
    q25: float
    q75: float


def validate_incumbent(x, target: SimulatedTarget, n: int = 1000, seed: int = 0) -> ValidationStats:
    """Summary of ``n`` uncapped runs at ``x``."""
    if n < 1:
        raise ValueError("n must be at least 1")
    costs = np.array([target.sample_cost(x, int(np.random.SeedSequence([seed, 707, i]).generate_state(1)[0]))
                      for i in range(n)])
    q25, med, q75 = np.percentile(costs, [25, 50, 75])
    return ValidationStats(n, float(costs.mean()), float(med), float(q25), float(q75))
