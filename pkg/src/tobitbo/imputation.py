"""Schmee & Hahn iterative restoration of censored targets.

Each round fits a Gaussian-NLL model to the current targets and replaces
every censored target by the mean of the model's predictive normal,
truncated below at the observed bound. Uncensored targets are never
touched, and an imputed target never falls below its bound.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from tobitbo.core_math import truncated_normal_mean
from tobitbo.nn import TrainingError
from tobitbo.observations import TrainingData, as_arrays


class ImputationError(RuntimeError):
    pass


@dataclass
class ImputationTrace:
    targets: list[np.ndarray] = field(default_factory=list)
    models: list = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return len(self.targets)

    def rmse_rows(self, truth, mask=None) -> list[tuple[int, float]]:
        """(iteration, RMSE of imputed censored targets vs ``truth``)."""
        truth = np.asarray(truth, dtype=np.float64)
        rows = []
        for k, t in enumerate(self.targets, start=1):
            sel = slice(None) if mask is None else mask
            rows.append((k, float(np.sqrt(np.mean((t[sel] - truth[sel]) ** 2)))))
        return rows

    def write_csv(self, path, truth, mask=None) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration", "rmse"])
            for k, r in self.rmse_rows(truth, mask):
                w.writerow([k, repr(r)])


@dataclass
class ImputationResult:
    data: TrainingData
    model: object
    trace: ImputationTrace


Trainer = Callable[[TrainingData], object]


def schmee_hahn(data, K: int, trainer: Trainer, keep_models: bool = False) -> ImputationResult:
    """Run ``K`` fit-and-impute rounds.

    ``trainer`` maps a ``TrainingData`` (censored flags cleared, so it sees a
    plain regression problem) to a model exposing ``predict(X) -> (mu, var)``
    and ``predictive_std(X)``; an :class:`~tobitbo.ensemble.Ensemble` does.
    Round ``k`` trains on the targets imputed in round ``k - 1`` (round 0 uses
    the observed values) and is the ``k``-th of exactly ``K`` trainer calls;
    the model of the last round is returned. Data without censored points
    is fitted once and returned unchanged.
    """
    if K < 1:
        raise ValueError("K must be at least 1")
    X, y, c = as_arrays(data)
    if c.all():
        raise ImputationError("no uncensored observations")
    flags = np.zeros_like(c)
    trace = ImputationTrace()
    if not c.any():
        model = trainer(TrainingData(X, y.copy(), flags))
        return ImputationResult(TrainingData(X, y.copy(), c.copy()), model, trace)

    bounds = y[c]
    targets = y.copy()
    model = None
    for k in range(1, K + 1):
        try:
            model = trainer(TrainingData(X, targets.copy(), flags))
        except TrainingError as exc:
            raise ImputationError(f"imputation round {k}: {exc}") from exc
        mu, _ = model.predict(X[c])
        sd = np.maximum(np.asarray(model.predictive_std(X[c])), 1e-12)
        targets = targets.copy()
        targets[c] = truncated_normal_mean(np.asarray(mu), sd, bounds)
        trace.targets.append(targets.copy())
        if keep_models:
            trace.models.append(model)
    return ImputationResult(TrainingData(X, targets, c.copy()), model, trace)
