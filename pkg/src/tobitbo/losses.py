"""Gaussian and Tobit negative log-likelihoods with closed-form gradients.

Gradients are taken with respect to the two network heads: the predicted
mean ``mu`` and the predicted variance ``sigma2``. Scale standardization
uses the standard deviation, ``z = (y - mu) / sqrt(sigma2)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from tobitbo.core_math import _LOG_SQRT_2PI, _logsf_and_hazard, hazard, log_survival

LossKind = Literal["gaussian_nll", "tobit"]
LOSS_KINDS = ("gaussian_nll", "tobit")


@dataclass(frozen=True)
class LossGrad:
    d_mu: np.ndarray | float
    d_sigma2: np.ndarray | float


def _check_sigma2(sigma2):
    s2 = np.asarray(sigma2, dtype=np.float64)
    if not np.all(s2 > 0):
        raise ValueError("sigma2 must be positive")
    return s2


def _out(arr, *inputs):
    if all(np.ndim(v) == 0 for v in inputs):
        return float(arr)
    return arr


def gaussian_nll(y, mu, sigma2):
    s2 = _check_sigma2(sigma2)
    r = np.asarray(y, dtype=np.float64) - np.asarray(mu, dtype=np.float64)
    val = _LOG_SQRT_2PI + 0.5 * np.log(s2) + r * r / (2.0 * s2)
    return _out(val, y, mu, sigma2)


def gaussian_grad(y, mu, sigma2) -> LossGrad:
    s2 = _check_sigma2(sigma2)
    r = np.asarray(y, dtype=np.float64) - np.asarray(mu, dtype=np.float64)
    d_mu = -r / s2
    d_s2 = 0.5 / s2 - r * r / (2.0 * s2 * s2)
    return LossGrad(_out(d_mu, y, mu, sigma2), _out(d_s2, y, mu, sigma2))


def _broadcast(y, mu, s2, censored):
    y_a, mu_a, s2, c = np.broadcast_arrays(
        np.asarray(y, dtype=np.float64), np.asarray(mu, dtype=np.float64), s2,
        np.asarray(censored, dtype=bool))
    return y_a - mu_a, s2, c


def tobit_nll(y, mu, sigma2, censored):
    """Gaussian NLL for observed points, ``-log(1 - Phi(z))`` for censored ones."""
    r, s2, c = _broadcast(y, mu, _check_sigma2(sigma2), censored)
    val = _LOG_SQRT_2PI + 0.5 * np.log(s2) + r * r / (2.0 * s2)
    if c.any():
        z = np.where(c, r / np.sqrt(s2), 0.0)
        val = np.where(c, -np.asarray(log_survival(z)), val)
    return _out(val, y, mu, sigma2, censored)


def tobit_grad(y, mu, sigma2, censored) -> LossGrad:
    r, s2, c = _broadcast(y, mu, _check_sigma2(sigma2), censored)
    d_mu = -r / s2
    d_s2 = 0.5 / s2 - r * r / (2.0 * s2 * s2)
    if c.any():
        sigma = np.sqrt(s2)
        h = np.asarray(hazard(np.where(c, r / sigma, 0.0)))
        d_mu = np.where(c, -h / sigma, d_mu)
        d_s2 = np.where(c, -h * r / (2.0 * s2 * sigma), d_s2)
    return LossGrad(_out(d_mu, y, mu, sigma2, censored), _out(d_s2, y, mu, sigma2, censored))


def head_loss_and_grad(kind: LossKind, y, mu, raw, censored):
    """Per-sample loss and gradients w.r.t. (mean head, raw variance head).

    Training hot path: inputs are arrays of one shape and are not validated;
    a non-finite head shows up as a non-finite loss. The raw head maps to
    the variance through softplus.
    """
    if kind not in LOSS_KINDS:
        raise ValueError(f"unknown loss kind {kind!r}")
    sigma2 = np.logaddexp(0.0, raw)
    dsoftplus = 0.5 * (1.0 + np.tanh(0.5 * raw))
    r = y - mu
    inv = 1.0 / sigma2
    loss = _LOG_SQRT_2PI + 0.5 * np.log(sigma2) + 0.5 * r * r * inv
    d_mu = -r * inv
    d_s2 = 0.5 * inv * (1.0 - r * r * inv)
    if kind == "tobit" and censored.any():
        sigma = np.sqrt(sigma2)
        z = r / sigma
        logsf, h = _logsf_and_hazard(z)
        loss = np.where(censored, -logsf, loss)
        d_mu = np.where(censored, -h / sigma, d_mu)
        d_s2 = np.where(censored, -0.5 * h * z * inv, d_s2)
    return loss, d_mu, d_s2 * dsoftplus
