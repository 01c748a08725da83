"""Synthetic test functions, censored-data generation and a capped-runtime simulator."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Literal

import numpy as np

from tobitbo.core_math import seeded_rng
from tobitbo.observations import Observation, TrainingData

# -- test functions ------------------------------------------------------------


def branin(x) -> float:
    x1, x2 = x
    b = 5.1 / (4.0 * math.pi ** 2)
    c = 5.0 / math.pi
    t = 1.0 / (8.0 * math.pi)
    return (x2 - b * x1 ** 2 + c * x1 - 6.0) ** 2 + 10.0 * (1.0 - t) * math.cos(x1) + 10.0


def camelback(x) -> float:
    """Six-hump camel."""
    x1, x2 = x
    return (4.0 - 2.1 * x1 ** 2 + x1 ** 4 / 3.0) * x1 ** 2 + x1 * x2 + (-4.0 + 4.0 * x2 ** 2) * x2 ** 2


_HART_ALPHA = np.array([1.0, 1.2, 3.0, 3.2])
_HART3_A = np.array([[3.0, 10.0, 30.0], [0.1, 10.0, 35.0], [3.0, 10.0, 30.0], [0.1, 10.0, 35.0]])
_HART3_P = 1e-4 * np.array([[3689, 1170, 2673], [4699, 4387, 7470], [1091, 8732, 5547], [381, 5743, 8828]])
_HART6_A = np.array([[10.0, 3.0, 17.0, 3.5, 1.7, 8.0],
                     [0.05, 10.0, 17.0, 0.1, 8.0, 14.0],
                     [3.0, 3.5, 1.7, 10.0, 17.0, 8.0],
                     [17.0, 8.0, 0.05, 10.0, 0.1, 14.0]])
_HART6_P = 1e-4 * np.array([[1312, 1696, 5569, 124, 8283, 5886],
                            [2329, 4135, 8307, 3736, 1004, 9991],
                            [2348, 1451, 3522, 2883, 3047, 6650],
                            [4047, 8828, 8732, 5743, 1091, 381]])


def _hartmann(A, P):
    def f(x) -> float:
        x = np.asarray(x, dtype=np.float64)
        return float(-np.dot(_HART_ALPHA, np.exp(-np.sum(A * (x - P) ** 2, axis=1))))
    return f


@dataclass(frozen=True)
class SyntheticFn:
    name: str
    dim: int
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    func: Callable
    f_min: float
    # box maximum, located by multi-start L-BFGS-B
    f_max: float

    @property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return np.array(self.lower), np.array(self.upper)

    def in_domain(self, x) -> bool:
        x = np.asarray(x, dtype=np.float64)
        lo, hi = self.bounds
        return x.shape == (self.dim,) and bool(np.all(x >= lo) and np.all(x <= hi))

    def __call__(self, x) -> float:
        if not self.in_domain(x):
            raise ValueError(f"{self.name}: point {list(np.ravel(x))} outside the domain box")
        return float(self.func(np.asarray(x, dtype=np.float64)))

    def evaluate_many(self, X) -> np.ndarray:
        return np.array([self(x) for x in np.asarray(X, dtype=np.float64)])

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        lo, hi = self.bounds
        return lo + (hi - lo) * rng.random((n, self.dim))


FUNCTIONS: dict[str, SyntheticFn] = {
    "branin": SyntheticFn("branin", 2, (-5.0, 0.0), (10.0, 15.0), branin,
                          0.39788735772973816, 308.12909601160663),
    "camelback": SyntheticFn("camelback", 2, (-3.0, -2.0), (3.0, 2.0), camelback,
                             -1.0316284534898774, 162.9),
    "hartmann3": SyntheticFn("hartmann3", 3, (0.0,) * 3, (1.0,) * 3, _hartmann(_HART3_A, _HART3_P),
                             -3.862779787332663, -3.772718514162667e-05),
    "hartmann6": SyntheticFn("hartmann6", 6, (0.0,) * 6, (1.0,) * 6, _hartmann(_HART6_A, _HART6_P),
                             -3.3223680114155147, -2.9530036785742343e-08),
}
ALIASES = {"camel": "camelback", "hart3": "hartmann3", "hart6": "hartmann6"}


def get_function(name: str) -> SyntheticFn:
    key = ALIASES.get(name, name)
    if key not in FUNCTIONS:
        raise KeyError(f"unknown function {name!r}; choose from {sorted(FUNCTIONS)}")
    return FUNCTIONS[key]


def eval_fn(fn: SyntheticFn, x) -> float:
    return fn(x)


# -- data generation -----------------------------------------------------------


@dataclass(frozen=True)
class SyntheticDataset:
    """Noisy replicated samples of a test function.

    ``location`` maps each row to the index of its sampling location.
    """

    X: np.ndarray
    true_y: np.ndarray
    noisy_y: np.ndarray
    location: np.ndarray
    noise_std: float

    def __len__(self) -> int:
        return len(self.noisy_y)


def generate_dataset(fn: SyntheticFn, seed: int, locations_per_dim: int = 100,
                     copies: int = 10, noise_frac: float = 0.1) -> SyntheticDataset:
    """``100 * d`` uniform locations, each replicated ``copies`` times with
    Gaussian noise of std ``noise_frac * (max - min)`` of the sampled true values."""
    rng = seeded_rng([seed, 101])
    n_loc = locations_per_dim * fn.dim
    X_loc = fn.sample(rng, n_loc)
    f_loc = fn.evaluate_many(X_loc)
    noise_std = noise_frac * float(f_loc.max() - f_loc.min())
    location = np.repeat(np.arange(n_loc), copies)
    true_y = f_loc[location]
    noisy_y = true_y + noise_std * rng.standard_normal(len(location))
    return SyntheticDataset(X_loc[location], true_y, noisy_y, location, noise_std)


@dataclass(frozen=True)
class CensoringScheme:
    kind: Literal["random_ramp", "fixed", "none"] = "random_ramp"
    percentile: float | None = 20.0
    cutoff: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.kind == "random_ramp" and self.percentile is None:
            raise ValueError("random_ramp censoring needs a percentile")
        if self.kind == "fixed" and self.cutoff is None:
            raise ValueError("fixed censoring needs a cutoff")
        if self.kind not in ("random_ramp", "fixed", "none"):
            raise ValueError(f"unknown censoring kind {self.kind!r}")

    @property
    def label(self) -> str:
        if self.kind == "random_ramp":
            return f"p{self.percentile:g}"
        if self.kind == "fixed":
            return f"fixed{self.cutoff:g}"
        return "none"


def censor_values(values: np.ndarray, scheme: CensoringScheme):
    """(observed values, censored flags, cutoffs) for a vector of noisy values.

    Ramp censoring: with ``g`` the percentile threshold, a value ``v > g`` is
    censored with probability ``(v - g) / (v_max - g)`` and then observed at
    a cutoff drawn uniformly from ``[g, v]``. Values at or below ``g`` are
    never censored.
    """
    v = np.asarray(values, dtype=np.float64)
    n = len(v)
    flags = np.zeros(n, dtype=bool)
    cutoffs = np.full(n, math.inf)
    if scheme.kind == "none":
        return v.copy(), flags, cutoffs
    if scheme.kind == "fixed":
        flags = v > scheme.cutoff
        cutoffs[:] = scheme.cutoff
        return np.where(flags, scheme.cutoff, v), flags, cutoffs
    gamma = float(np.percentile(v, scheme.percentile))
    vmax = float(v.max())
    rng = seeded_rng([scheme.seed, 202])
    u = rng.random(n)
    w = rng.random(n)
    if vmax <= gamma:
        return v.copy(), flags, cutoffs
    p = np.clip((v - gamma) / (vmax - gamma), 0.0, 1.0)
    flags = (v > gamma) & (u < p)
    drawn = gamma + w * (v - gamma)
    # the drawn cutoff must not exceed the value it caps
    drawn = np.minimum(drawn, v)
    cutoffs[flags] = drawn[flags]
    observed = np.where(flags, cutoffs, v)
    return observed, flags, cutoffs


def apply_censoring(rows: SyntheticDataset, scheme: CensoringScheme) -> list[Observation]:
    observed, flags, cutoffs = censor_values(rows.noisy_y, scheme)
    return [Observation(tuple(x), y, bool(f), k) for x, y, f, k in zip(rows.X, observed, flags, cutoffs)]


def censored_1d(seed: int, n: int = 200, percentile: float = 20.0, noise_std: float = 0.1) -> TrainingData:
    """Small 1-D censored regression problem for visual checks.

    ``f(x) = sin(2x) + 0.3 x^2`` on ``[-3, 3]`` with Gaussian noise and ramp
    censoring at the given percentile. Rows are sorted by ``x``.
    """
    rng = seeded_rng([seed, 111])
    x = np.sort(rng.uniform(-3.0, 3.0, n))
    y = np.sin(2.0 * x) + 0.3 * x * x + noise_std * rng.standard_normal(n)
    observed, flags, _ = censor_values(y, CensoringScheme("random_ramp", percentile, seed=seed))
    return TrainingData(x[:, None], observed, flags)


# -- capped runtime simulator ----------------------------------------------------


@dataclass(frozen=True)
class SimulatedTarget:
    """Log-normal runtimes around a synthetic function rescaled into ``[t_min, t_max]``.

    The median cost at ``x`` is ``median_cost(x)``; a run's cost is
    ``median_cost(x) * exp(s * eps)`` with ``eps`` standard normal, drawn
    from a stream keyed on the run seed and the exact bits of ``x``.
    """

    fn: SyntheticFn
    s: float = 0.3
    t_min: float = 1.0
    t_max: float = 100.0

    @property
    def bounds(self):
        return self.fn.bounds

    @property
    def dim(self) -> int:
        return self.fn.dim

    def median_cost(self, x) -> float:
        f = self.fn(x)
        frac = (f - self.fn.f_min) / (self.fn.f_max - self.fn.f_min)
        return self.t_min + (self.t_max - self.t_min) * min(max(frac, 0.0), 1.0)

    def mean_cost(self, x) -> float:
        return self.median_cost(x) * math.exp(0.5 * self.s * self.s)

    def _eps(self, x, seed: int) -> float:
        bits = np.asarray(x, dtype="<f8").view("<u4")
        return float(seeded_rng([seed, 303, *bits.tolist()]).standard_normal())

    def sample_cost(self, x, seed: int) -> float:
        return self.median_cost(x) * math.exp(self.s * self._eps(x, seed))


def run_target(t: SimulatedTarget, x, kappa: float, seed: int) -> Observation:
    """One run of ``t`` at ``x`` capped at ``kappa``."""
    if not kappa > 0:
        raise ValueError("cutoff must be positive")
    c = t.sample_cost(x, seed)
    capped = c > kappa
    return Observation(tuple(np.asarray(x, dtype=np.float64)), kappa if capped else c, capped, kappa)
