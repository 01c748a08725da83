"""The censored observation record and its JSONL encoding."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np


class MalformedRecord(ValueError):
    def __init__(self, lineno: int, reason: str):
        super().__init__(f"line {lineno}: {reason}")
        self.lineno = lineno


@dataclass(frozen=True)
class Observation:
    """One (input, observed cost, censored flag, cutoff) record.

    A censored record only bounds the true value from below, so its ``y``
    equals the cutoff; an uncensored record never exceeds its cutoff.
    ``cutoff`` is ``inf`` when no cap was applied.
    """

    x: tuple[float, ...]
    y: float
    censored: bool = False
    cutoff: float = math.inf
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "x", tuple(float(v) for v in self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "cutoff", float(self.cutoff))
        object.__setattr__(self, "censored", bool(self.censored))
        if not (math.isfinite(self.y) and all(math.isfinite(v) for v in self.x)):
            raise ValueError("x and y must be finite")
        if math.isnan(self.cutoff):
            raise ValueError("cutoff must not be NaN")
        if self.censored and self.y != self.cutoff:
            raise ValueError("censored observation must sit at its cutoff")
        if not self.censored and self.y > self.cutoff:
            raise ValueError("uncensored observation exceeds its cutoff")

    def to_json(self) -> str:
        rec = {
            "x": list(self.x),
            "y": self.y,
            "censored": self.censored,
            # JSON has no infinity; an uncapped run is written as null
            "cutoff": None if math.isinf(self.cutoff) else self.cutoff,
        }
        rec.update(self.extra)
        return json.dumps(rec, allow_nan=False)

    @classmethod
    def from_json(cls, line: str, lineno: int = 0) -> "Observation":
        try:
            rec = json.loads(line)
            x = rec.pop("x")
            y = rec.pop("y")
            censored = rec.pop("censored")
            cutoff = rec.pop("cutoff", None)
        except (json.JSONDecodeError, KeyError, TypeError, AttributeError) as exc:
            raise MalformedRecord(lineno, f"cannot parse record ({exc})") from None
        if not isinstance(x, list) or not isinstance(censored, bool):
            raise MalformedRecord(lineno, "bad field types")
        try:
            return cls(tuple(x), y, censored, math.inf if cutoff is None else cutoff, rec)
        except (TypeError, ValueError) as exc:
            raise MalformedRecord(lineno, str(exc)) from None


def write_jsonl(path: str | Path, observations: Iterable[Observation]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for obs in observations:
            fh.write(obs.to_json())
            fh.write("\n")


def read_jsonl(path: str | Path) -> list[Observation]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.strip():
                out.append(Observation.from_json(line, lineno))
    return out


class TrainingData(NamedTuple):
    """Column form of a training set; targets may be imputed values."""

    X: np.ndarray
    y: np.ndarray
    censored: np.ndarray


def as_arrays(observations) -> TrainingData:
    """Stack observations into ``(X, y, censored)`` arrays.

    A ``TrainingData`` (or any 3-tuple of arrays) passes through.
    """
    if isinstance(observations, tuple) and len(observations) == 3 and not isinstance(observations[0], Observation):
        X, y, c = observations
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
        return TrainingData(X, np.asarray(y, dtype=np.float64), np.asarray(c, dtype=bool))
    if len(observations) == 0:
        raise ValueError("no observations")
    X = np.array([o.x for o in observations], dtype=np.float64)
    y = np.array([o.y for o in observations], dtype=np.float64)
    c = np.array([o.censored for o in observations], dtype=bool)
    return TrainingData(X, y, c)
