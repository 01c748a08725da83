"""Two-headed tanh MLP with hand-derived backpropagation.

The network maps a normalized input in [0, 1]^d to a mean head and a raw
variance head (variance = softplus(raw)). Training uses SGD with momentum,
a one-cycle learning rate, elementwise gradient clipping and weight decay.

Internally a set of networks is trained as one stack: weights have shape
``(M, fan_in, fan_out)`` and each member keeps its own shuffling stream,
so a member's result does not depend on which other members share the
stack.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from tobitbo.core_math import inverse_softplus, seeded_rng, softplus
from tobitbo.losses import LOSS_KINDS, head_loss_and_grad
from tobitbo.observations import as_arrays

HIDDEN = (50, 50, 50)


def _sgd_update_numpy(P, G, V, decay, clip, mom, lr):
    np.clip(G, -clip, clip, out=G)
    G += decay * P
    V *= mom
    V += G
    P -= lr * V


try:
    import numba
except ImportError:  # pragma: no cover - exercised only without numba
    _sgd_update = _sgd_update_numpy
else:
    @numba.njit(cache=True)
    def _sgd_update(P, G, V, decay, clip, mom, lr):
        # same operation order as the numpy path, so both give identical bits
        for i in range(P.size):
            g = min(max(G[i], -clip), clip)
            g = g + decay[i] * P[i]
            v = V[i] * mom + g
            V[i] = v
            P[i] -= lr * v


class TrainingError(RuntimeError):
    def __init__(self, step: int, member: int | None = None, reason: str = "non-finite loss or gradient"):
        where = f"step {step}" if member is None else f"member {member}, step {step}"
        super().__init__(f"training diverged at {where}: {reason}")
        self.step = step
        self.member = member


@dataclass
class Mlp:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    seed: int

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return (self.input_dim,) + tuple(w.shape[1] for w in self.weights)

    def copy(self) -> "Mlp":
        return Mlp([w.copy() for w in self.weights], [b.copy() for b in self.biases], self.seed)

    def flat(self) -> np.ndarray:
        return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in zip(self.weights, self.biases)])


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 1000
    batch_size: int = 16
    peak_lr: float = 1e-2
    momentum: float = 0.9
    weight_decay: float = 1e-4
    grad_clip: float = 0.1
    seed: int = 0

    def __post_init__(self):
        for name in ("epochs", "batch_size", "peak_lr", "grad_clip"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.momentum < 0 or self.weight_decay < 0:
            raise ValueError("momentum and weight_decay must be non-negative")

    def with_(self, **kw) -> "TrainConfig":
        return replace(self, **kw)


@dataclass
class Normalizer:
    x_lower: np.ndarray
    x_upper: np.ndarray
    y_mean: float = 0.0
    y_std: float = 1.0

    def apply_x(self, X, clamp: bool = False) -> np.ndarray:
        Z = (np.asarray(X, dtype=np.float64) - self.x_lower) / (self.x_upper - self.x_lower)
        return np.clip(Z, 0.0, 1.0) if clamp else Z

    def invert_x(self, Z) -> np.ndarray:
        return np.asarray(Z, dtype=np.float64) * (self.x_upper - self.x_lower) + self.x_lower

    def apply_y(self, y):
        return (np.asarray(y, dtype=np.float64) - self.y_mean) / self.y_std

    def invert_y(self, z):
        return np.asarray(z, dtype=np.float64) * self.y_std + self.y_mean

    def to_dict(self) -> dict:
        return {"x_lower": self.x_lower.tolist(), "x_upper": self.x_upper.tolist(),
                "y_mean": self.y_mean, "y_std": self.y_std}

    @classmethod
    def from_dict(cls, d: dict) -> "Normalizer":
        return cls(np.asarray(d["x_lower"], dtype=np.float64), np.asarray(d["x_upper"], dtype=np.float64),
                   float(d["y_mean"]), float(d["y_std"]))


@dataclass(frozen=True)
class PredictiveHead:
    mu_hat: np.ndarray | float
    sigma2_hat: np.ndarray | float


def fit_normalizer(data, bounds=None) -> Normalizer:
    """Input box and target moments.

    Censored targets enter the moments at their observed lower bounds. When
    ``bounds`` (a ``(lower, upper)`` pair) is omitted the data range is used.
    """
    X, y, _ = as_arrays(data)
    if bounds is None:
        lo, hi = X.min(axis=0), X.max(axis=0)
    else:
        lo = np.asarray(bounds[0], dtype=np.float64)
        hi = np.asarray(bounds[1], dtype=np.float64)
    lo = np.array(lo, dtype=np.float64)
    hi = np.array(hi, dtype=np.float64)
    flat = hi <= lo
    hi[flat] = lo[flat] + 1.0
    mean = float(np.mean(y))
    std = float(np.std(y))
    if not std > 1e-12 * max(1.0, abs(mean)):
        std = 1.0
    return Normalizer(lo, hi, mean, std)


def init_mlp(input_dim: int, seed: int, hidden: Sequence[int] = HIDDEN) -> Mlp:
    if input_dim < 1:
        raise ValueError("input_dim must be at least 1")
    rng = seeded_rng([seed, 0])
    sizes = (input_dim, *hidden, 2)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / math.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return Mlp(weights, biases, seed)


# -- stacked kernels ---------------------------------------------------------

def _stack(nets: Sequence[Mlp]):
    Ws = [np.stack([n.weights[i] for n in nets]) for i in range(len(nets[0].weights))]
    bs = [np.stack([n.biases[i] for n in nets])[:, None, :] for i in range(len(nets[0].biases))]
    return Ws, bs


def _unstack(Ws, bs, seeds) -> list[Mlp]:
    return [Mlp([W[m].copy() for W in Ws], [b[m, 0].copy() for b in bs], seeds[m])
            for m in range(len(seeds))]


def _forward_stack(Ws, bs, X):
    """X has shape (M, B, d) or (1, B, d); returns hidden activations and output."""
    acts = [X]
    h = X
    for W, b in zip(Ws[:-1], bs[:-1]):
        h = np.tanh(h @ W + b)
        acts.append(h)
    out = h @ Ws[-1] + bs[-1]
    return acts, out


def _backward_stack(Ws, acts, dout):
    gWs = [None] * len(Ws)
    gbs = [None] * len(Ws)
    d = dout
    for i in range(len(Ws) - 1, -1, -1):
        gWs[i] = np.swapaxes(acts[i], 1, 2) @ d
        gbs[i] = d.sum(axis=1, keepdims=True)
        if i > 0:
            h = acts[i]
            d = (d @ np.swapaxes(Ws[i], 1, 2)) * (1.0 - h * h)
    return gWs, gbs


def _loss_and_grads_stack(Ws, bs, xb, yb, cb, kind):
    acts, out = _forward_stack(Ws, bs, xb)
    loss, g_mu, g_raw = head_loss_and_grad(kind, yb, out[..., 0], out[..., 1], cb)
    B = xb.shape[1]
    dout = np.stack([g_mu, g_raw], axis=-1) / B
    gWs, gbs = _backward_stack(Ws, acts, dout)
    return loss.mean(axis=1), gWs, gbs


def loss_and_grads(net: Mlp, X, y, censored, kind: str):
    """Mean per-sample loss of ``net`` on a normalized batch and its parameter gradients."""
    Ws, bs = _stack([net])
    X = np.asarray(X, dtype=np.float64)[None]
    y = np.asarray(y, dtype=np.float64)[None]
    c = np.asarray(censored, dtype=bool)[None]
    loss, gWs, gbs = _loss_and_grads_stack(Ws, bs, X, y, c, kind)
    return float(loss[0]), [g[0] for g in gWs], [g[0, 0] for g in gbs]


def forward(net: Mlp, x) -> PredictiveHead:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if X.shape[1] != net.input_dim:
        raise ValueError(f"expected input dimension {net.input_dim}, got {X.shape[1]}")
    Ws, bs = _stack([net])
    _, out = _forward_stack(Ws, bs, X[None])
    mu, s2 = out[0, :, 0], np.asarray(softplus(out[0, :, 1]))
    if single:
        return PredictiveHead(float(mu[0]), float(s2[0]))
    return PredictiveHead(mu, s2)


def forward_stack(nets: Sequence[Mlp], X) -> tuple[np.ndarray, np.ndarray]:
    """Heads of every network on the same inputs, each of shape (M, n)."""
    Ws, bs = _stack(nets)
    _, out = _forward_stack(Ws, bs, np.asarray(X, dtype=np.float64)[None])
    return out[..., 0], np.asarray(softplus(out[..., 1]))


# -- training ----------------------------------------------------------------

def one_cycle_lr(step: int, total_steps: int, peak_lr: float) -> float:
    """Warm up from peak/10 to peak over 45% of steps, back over 45%, then anneal to peak/100."""
    if not 0 <= step < total_steps:
        raise ValueError("step must lie in [0, total_steps)")
    frac = step / total_steps
    lo, floor = peak_lr / 10.0, peak_lr / 100.0
    if frac <= 0.45:
        return lo + (peak_lr - lo) * frac / 0.45
    if frac <= 0.9:
        return peak_lr - (peak_lr - lo) * (frac - 0.45) / 0.45
    return lo - (lo - floor) * (frac - 0.9) / 0.1


def _canonical_order(X, y, c):
    # sort rows so results do not depend on the order observations arrive in
    keys = [c.astype(np.int8), y] + [X[:, j] for j in range(X.shape[1] - 1, -1, -1)]
    order = np.lexsort(keys)
    return X[order], y[order], c[order]


class _FlatStack:
    """Parameters (and gradients) of M stacked networks in one flat buffer."""

    def __init__(self, nets: Sequence[Mlp]):
        M = len(nets)
        shapes = []
        for W, b in zip(nets[0].weights, nets[0].biases):
            shapes.append((M,) + W.shape)
            shapes.append((M, 1, b.shape[0]))
        sizes = [int(np.prod(sh)) for sh in shapes]
        self.buf = np.empty(sum(sizes))
        self.grad = np.empty_like(self.buf)
        self.decay_mask = np.zeros_like(self.buf)
        self.params, self.grads = [], []
        pos = 0
        for k, (sh, size) in enumerate(zip(shapes, sizes)):
            self.params.append(self.buf[pos:pos + size].reshape(sh))
            self.grads.append(self.grad[pos:pos + size].reshape(sh))
            if k % 2 == 0:
                self.decay_mask[pos:pos + size] = 1.0
            pos += size
        Ws, bs = _stack(nets)
        for view, val in zip(self.params, [a for pair in zip(Ws, bs) for a in pair]):
            view[...] = val

    @property
    def Ws(self):
        return self.params[0::2]

    @property
    def bs(self):
        return self.params[1::2]

    def loss_and_grad(self, xb, yb, cb, kind):
        Ws, bs = self.Ws, self.bs
        acts, out = _forward_stack(Ws, bs, xb)
        loss, g_mu, g_raw = head_loss_and_grad(kind, yb, out[..., 0], out[..., 1], cb)
        d = np.stack([g_mu, g_raw], axis=-1)
        d /= xb.shape[1]
        gWs, gbs = self.grads[0::2], self.grads[1::2]
        for i in range(len(Ws) - 1, -1, -1):
            np.matmul(np.swapaxes(acts[i], 1, 2), d, out=gWs[i])
            np.sum(d, axis=1, keepdims=True, out=gbs[i])
            if i > 0:
                h = acts[i]
                d = (d @ np.swapaxes(Ws[i], 1, 2)) * (1.0 - h * h)
        return loss.mean(axis=1)


def train_many(nets: Sequence[Mlp], data, loss: str, norm: Normalizer, cfg: TrainConfig):
    """Train several networks on the same data; returns (nets, per-epoch loss traces).

    Traces have shape (M, epochs). Each member shuffles with its own seed.
    """
    if loss not in LOSS_KINDS:
        raise ValueError(f"unknown loss kind {loss!r}")
    X, y, c = as_arrays(data)
    n = len(y)
    if n == 0:
        raise ValueError("no training data")
    if X.shape[1] != nets[0].input_dim:
        raise ValueError(f"expected input dimension {nets[0].input_dim}, got {X.shape[1]}")
    X, y, c = _canonical_order(X, y, c)
    Xn = norm.apply_x(X)
    yn = norm.apply_y(y)

    stack = _FlatStack(nets)
    # variance head starts at the normalized target variance
    stack.bs[-1][:, 0, 1] = inverse_softplus(1.0)
    velocity = np.zeros_like(stack.buf)
    decay = cfg.weight_decay * stack.decay_mask
    rngs = [seeded_rng([net.seed, cfg.seed, 1]) for net in nets]

    B = cfg.batch_size
    spe = math.ceil(n / B)
    total = cfg.epochs * spe
    M = len(nets)
    trace = np.zeros((M, cfg.epochs))
    P, G = stack.buf, stack.grad
    step = 0
    for epoch in range(cfg.epochs):
        perms = np.stack([r.permutation(n) for r in rngs])
        acc = np.zeros(M)
        for s in range(spe):
            idx = perms[:, s * B:(s + 1) * B]
            lvec = stack.loss_and_grad(Xn[idx], yn[idx], c[idx], loss)
            if not np.isfinite(lvec.sum() + G.sum()):
                bad = np.flatnonzero(~np.isfinite(lvec))
                raise TrainingError(step, member=int(bad[0]) if bad.size else None)
            acc += lvec * idx.shape[1]
            _sgd_update(P, G, velocity, decay, cfg.grad_clip, cfg.momentum,
                        one_cycle_lr(step, total, cfg.peak_lr))
            step += 1
        trace[:, epoch] = acc / n
    return _unstack(stack.Ws, stack.bs, [net.seed for net in nets]), trace


def train(net: Mlp, data, loss: str, norm: Normalizer, cfg: TrainConfig):
    """Train one network; returns (trained net, per-epoch mean loss trace).

    For ``gaussian_nll`` the censored flags are ignored.
    """
    nets, trace = train_many([net], data, loss, norm, cfg)
    return nets[0], trace[0]


# -- snapshots ---------------------------------------------------------------

_MAGIC = b"TBNN"


def save_snapshot(path: str | Path, nets: Sequence[Mlp], norm: Normalizer, meta: dict | None = None) -> None:
    """Write a 4-byte magic, a little-endian uint32 header length, a JSON header
    and the flat little-endian float64 parameters of every member in order."""
    header = {
        "layer_sizes": list(nets[0].layer_sizes),
        "seeds": [n.seed for n in nets],
        "normalizer": norm.to_dict(),
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    params = np.concatenate([n.flat() for n in nets]).astype("<f8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(params.tobytes())


def load_snapshot(path: str | Path):
    """Inverse of :func:`save_snapshot`; returns (nets, normalizer, meta)."""
    raw = Path(path).read_bytes()
    if raw[:4] != _MAGIC:
        raise ValueError(f"{path} is not a model snapshot")
    (hlen,) = struct.unpack("<I", raw[4:8])
    header = json.loads(raw[8:8 + hlen].decode("utf-8"))
    params = np.frombuffer(raw[8 + hlen:], dtype="<f8").astype(np.float64)
    sizes = header["layer_sizes"]
    nets, pos = [], 0
    for seed in header["seeds"]:
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            weights.append(params[pos:pos + fan_in * fan_out].reshape(fan_in, fan_out).copy())
            pos += fan_in * fan_out
            biases.append(params[pos:pos + fan_out].copy())
            pos += fan_out
        nets.append(Mlp(weights, biases, seed))
    if pos != params.size:
        raise ValueError(f"{path}: parameter count does not match header")
    return nets, Normalizer.from_dict(header["normalizer"]), header["meta"]
