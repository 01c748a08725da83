"""Ensembles of independently initialized networks.

The predictive mean is the average of the members' mean heads and the
predictive variance is the population variance of those means. The
members' variance heads (aleatoric noise) do not enter the predictive
variance.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from tobitbo.nn import (HIDDEN, Mlp, Normalizer, TrainConfig, TrainingError, fit_normalizer,
                        forward_stack, init_mlp, train_many)
from tobitbo.observations import as_arrays


@dataclass
class Ensemble:
    members: list[Mlp]
    normalizer: Normalizer
    loss: str = "gaussian_nll"
    cfg: TrainConfig | None = None

    def __post_init__(self):
        if not self.members:
            raise ValueError("an ensemble needs at least one member")
        dims = {m.input_dim for m in self.members}
        if len(dims) != 1:
            raise ValueError("members disagree on input dimension")

    @property
    def size(self) -> int:
        return len(self.members)

    @property
    def input_dim(self) -> int:
        return self.members[0].input_dim

    def _heads(self, x, members: Sequence[Mlp]):
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        X = np.atleast_2d(x)
        if X.shape[1] != self.input_dim:
            raise ValueError(f"expected input dimension {self.input_dim}, got {X.shape[1]}")
        Z = self.normalizer.apply_x(X, clamp=True)
        mu, s2 = forward_stack(members, Z)
        std = self.normalizer.y_std
        return single, self.normalizer.invert_y(mu), s2 * std * std

    def member_means(self, x) -> np.ndarray:
        """Denormalized mean heads, shape (M, n)."""
        return self._heads(x, self.members)[1]

    def predict(self, x):
        """(mean, epistemic variance) in original target units."""
        single, means, _ = self._heads(x, self.members)
        mu = means.mean(axis=0)
        var = ((means - mu) ** 2).mean(axis=0)
        if single:
            return float(mu[0]), float(var[0])
        return mu, var

    def predict_member(self, m: int, x):
        """(mean, aleatoric variance) of member ``m`` in original target units."""
        if not 0 <= m < self.size:
            raise IndexError(f"member index {m} out of range for ensemble of size {self.size}")
        single, means, s2 = self._heads(x, [self.members[m]])
        if single:
            return float(means[0, 0]), float(s2[0, 0])
        return means[0], s2[0]

    def predictive_std(self, x):
        """sqrt(epistemic variance + mean aleatoric variance)."""
        single, means, s2 = self._heads(x, self.members)
        total = means.var(axis=0) + s2.mean(axis=0)
        out = np.sqrt(total)
        return float(out[0]) if single else out


def train_ensemble(data, M: int = 5, cfg: TrainConfig | None = None, base_seed: int = 0,
                   loss_kind: str = "tobit", bounds=None, normalizer: Normalizer | None = None,
                   hidden: Sequence[int] = HIDDEN) -> Ensemble:
    """Train ``M`` members on the full data; member ``m`` uses seed ``base_seed + m``.

    Members share one normalizer (fitted on ``data`` unless given) and
    differ only in initialization and shuffling order.
    """
    if M < 1:
        raise ValueError("M must be at least 1")
    cfg = cfg or TrainConfig()
    arrays = as_arrays(data)
    norm = normalizer or fit_normalizer(arrays, bounds)
    nets = [init_mlp(arrays.X.shape[1], base_seed + m, hidden) for m in range(M)]
    try:
        trained, _ = train_many(nets, arrays, loss_kind, norm, cfg)
    except TrainingError as exc:
        raise TrainingError(exc.step, exc.member, f"ensemble member {exc.member}: {exc}") from None
    return Ensemble(trained, norm, loss_kind, cfg)
