"""Scalar special functions for the standard normal family.

Every function accepts a float or an array and returns the same shape.
Non-finite inputs raise ``ValueError``.
"""

from __future__ import annotations

import math
from typing import Sequence, Union

import numpy as np
from scipy.special import erfc, erfcx

ArrayLike = Union[float, np.ndarray]

_SQRT2 = math.sqrt(2.0)
_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
_SQRT_PI_OVER_2 = math.sqrt(math.pi / 2.0)


def _as_finite(z, name="z"):
    arr = np.asarray(z, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    return arr


def _unwrap(arr, like):
    return float(arr) if np.ndim(like) == 0 else arr


def std_normal_logpdf(z: ArrayLike) -> ArrayLike:
    arr = _as_finite(z)
    return _unwrap(-0.5 * arr * arr - _LOG_SQRT_2PI, z)


def std_normal_pdf(z: ArrayLike) -> ArrayLike:
    arr = _as_finite(z)
    return _unwrap(np.exp(-0.5 * arr * arr - _LOG_SQRT_2PI), z)


def std_normal_cdf(z: ArrayLike) -> ArrayLike:
    arr = _as_finite(z)
    return _unwrap(0.5 * erfc(-arr / _SQRT2), z)


def _mills_ratio(z):
    # (1 - Phi(z)) / phi(z) for z >= 0, via the scaled complementary error function
    return _SQRT_PI_OVER_2 * erfcx(z / _SQRT2)


def _logsf_and_hazard(z: np.ndarray):
    """Unchecked kernel: (log(1 - Phi(z)), phi(z) / (1 - Phi(z))) for an array."""
    right = z >= 0.0
    zr = np.where(right, z, 0.0)
    zl = np.where(right, 0.0, z)
    mills = _mills_ratio(zr)
    logphi = -0.5 * z * z - _LOG_SQRT_2PI
    sf_left = 0.5 * erfc(zl / _SQRT2)
    logsf = np.where(right, logphi + np.log(mills), np.log1p(-0.5 * erfc(-zl / _SQRT2)))
    haz = np.where(right, 1.0 / mills, np.exp(logphi) / sf_left)
    return logsf, haz


def log_survival(z: ArrayLike) -> ArrayLike:
    """log(1 - Phi(z)), finite for every representable ``z``.

    The right tail is evaluated as ``log phi(z) + log R(z)`` with the Mills
    ratio ``R`` so nothing underflows; the left tail uses ``log1p(-Phi(z))``.
    """
    arr = _as_finite(z)
    return _unwrap(_logsf_and_hazard(arr)[0], z)


def hazard(z: ArrayLike) -> ArrayLike:
    """phi(z) / (1 - Phi(z)), the inverse Mills ratio."""
    arr = _as_finite(z)
    return _unwrap(_logsf_and_hazard(arr)[1], z)


def softplus(x: ArrayLike) -> ArrayLike:
    arr = _as_finite(x, "x")
    return _unwrap(np.logaddexp(0.0, arr), x)


def sigmoid(x: ArrayLike) -> ArrayLike:
    arr = _as_finite(x, "x")
    out = np.empty_like(arr)
    pos = arr >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-arr[pos]))
    e = np.exp(arr[~pos])
    out[~pos] = e / (1.0 + e)
    return _unwrap(out, x)


def inverse_softplus(y: float) -> float:
    if y <= 0:
        raise ValueError("softplus is strictly positive")
    return float(y + math.log(-math.expm1(-y)))


def truncated_normal_mean(mu: ArrayLike, sigma: ArrayLike, lower: ArrayLike) -> ArrayLike:
    """Mean of Normal(mu, sigma^2) truncated to ``[lower, inf)``."""
    mu_a = _as_finite(mu, "mu")
    sigma_a = _as_finite(sigma, "sigma")
    lower_a = _as_finite(lower, "lower")
    if np.any(sigma_a <= 0):
        raise ValueError("sigma must be positive")
    alpha = (lower_a - mu_a) / sigma_a
    out = mu_a + sigma_a * np.asarray(hazard(alpha))
    # h(alpha) > alpha holds exactly; guard the last ulp
    out = np.maximum(out, lower_a)
    scalar = np.ndim(mu) == 0 and np.ndim(sigma) == 0 and np.ndim(lower) == 0
    return float(out) if scalar else out


def seeded_rng(seed: Union[int, Sequence[int]]) -> np.random.Generator:
    """PCG64 stream; identical seeds give identical streams on every platform."""
    return np.random.Generator(np.random.PCG64(seed))
