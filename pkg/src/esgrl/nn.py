"""A tiny numpy MLP with hand-written backward pass, Adam, and a diagonal
Gaussian policy head.

Inputs may be a single vector ``(fan_in,)`` or a batch ``(n, fan_in)``.
Hidden layers use tanh and the output layer is linear.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0
HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
CKPT_MAGIC = "esgrl-ckpt v1"


class NumericalError(FloatingPointError):
    """Raised when NaN/Inf shows up in parameters, gradients or losses."""


@dataclass
class MlpParams:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    # bumped on every in-place update so stale forward caches are detectable
    version: int = 0

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def arrays(self) -> list[np.ndarray]:
        return [a for pair in zip(self.weights, self.biases) for a in pair]

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases], self.version)

    def zeros_like(self) -> "MlpParams":
        return MlpParams([np.zeros_like(w) for w in self.weights], [np.zeros_like(b) for b in self.biases])

    def n_params(self) -> int:
        return sum(a.size for a in self.arrays())


def init(layer_sizes, seed) -> MlpParams:
    """Glorot-uniform weights, zero biases."""
    sizes = [int(s) for s in layer_sizes]
    if len(sizes) < 2 or any(s < 1 for s in sizes):
        raise ValueError(f"need at least two layer sizes >= 1, got {layer_sizes}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes, sizes[1:]):
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpParams(weights, biases)


@dataclass
class ForwardCache:
    params_id: int
    version: int
    single: bool
    inputs: list[np.ndarray] = field(default_factory=list)
    hidden: list[np.ndarray] = field(default_factory=list)


def forward(p: MlpParams, x) -> tuple[np.ndarray, ForwardCache]:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    h = x[None, :] if single else x
    if h.ndim != 2 or h.shape[1] != p.weights[0].shape[0]:
        raise ValueError(f"input shape {x.shape} does not match fan_in {p.weights[0].shape[0]}")
    cache = ForwardCache(id(p), p.version, single)
    last = len(p.weights) - 1
    for k, (w, b) in enumerate(zip(p.weights, p.biases)):
        cache.inputs.append(h)
        z = h @ w + b
        if k < last:
            h = np.tanh(z)
            cache.hidden.append(h)
        else:
            h = z
    return (h[0] if single else h), cache


def backward(p: MlpParams, cache: ForwardCache, grad_out) -> MlpParams:
    """Gradient of ``sum(output * grad_out)`` with respect to every parameter."""
    if cache.params_id != id(p) or cache.version != p.version:
        raise ValueError("stale forward cache: parameters changed since forward()")
    g = np.asarray(grad_out, dtype=float)
    if cache.single:
        g = g[None, :]
    grads = p.zeros_like()
    for k in range(len(p.weights) - 1, -1, -1):
        grads.weights[k] = cache.inputs[k].T @ g
        grads.biases[k] = g.sum(axis=0)
        if k > 0:
            g = (g @ p.weights[k].T) * (1.0 - cache.hidden[k - 1] ** 2)
    return grads


def global_norm(arrays) -> float:
    return math.sqrt(sum(float(np.sum(a * a)) for a in arrays))


def clip_by_global_norm(arrays: list[np.ndarray], max_norm: float | None) -> float:
    """Scale ``arrays`` in place so their joint norm is at most ``max_norm``; returns the pre-clip norm."""
    norm = global_norm(arrays)
    if max_norm is not None and norm > max_norm > 0:
        scale = max_norm / norm
        for a in arrays:
            a *= scale
    return norm


def check_finite(arrays, what: str) -> None:
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NumericalError(f"non-finite values in {what}")


@dataclass
class AdamState:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] | None = None
    v: list[np.ndarray] | None = None


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState) -> AdamState:
    """In-place bias-corrected Adam update of ``params``."""
    if len(params) != len(grads) or any(p.shape != g.shape for p, g in zip(params, grads)):
        raise ValueError("parameter and gradient shapes differ")
    check_finite(grads, "gradients")
    if state.m is None:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    check_finite(params, "parameters after Adam step")
    return state


# --------------------------------------------------------------------------
# Gaussian policy
# --------------------------------------------------------------------------

@dataclass
class GaussianPolicy:
    mean_net: MlpParams
    log_std: np.ndarray

    @classmethod
    def create(cls, sizes, seed, log_std_init: float = 0.0) -> "GaussianPolicy":
        net = init(sizes, seed)
        # small output layer keeps initial actions near the equal-weight point
        net.weights[-1] *= 0.01
        return cls(net, np.full(sizes[-1], float(log_std_init)))

    @property
    def act_dim(self) -> int:
        return self.log_std.size

    def clamped_log_std(self) -> np.ndarray:
        return np.clip(self.log_std, LOG_STD_MIN, LOG_STD_MAX)

    def std(self) -> np.ndarray:
        return np.exp(self.clamped_log_std())

    def mean(self, obs) -> np.ndarray:
        return forward(self.mean_net, obs)[0]

    def arrays(self) -> list[np.ndarray]:
        return self.mean_net.arrays() + [self.log_std]

    def copy(self) -> "GaussianPolicy":
        return GaussianPolicy(self.mean_net.copy(), self.log_std.copy())


def gaussian_log_prob(a, mu, log_std) -> np.ndarray:
    """Diagonal Gaussian log-density summed over the last axis."""
    a, mu = np.asarray(a, dtype=float), np.asarray(mu, dtype=float)
    z = (a - mu) * np.exp(-log_std)
    return np.sum(-HALF_LOG_2PI - log_std - 0.5 * z * z, axis=-1)


def policy_sample(pol: GaussianPolicy, obs, rng: np.random.Generator) -> tuple[np.ndarray, float]:
    mu = pol.mean(obs)
    log_std = pol.clamped_log_std()
    a = mu + np.exp(log_std) * rng.standard_normal(mu.shape)
    return a, float(gaussian_log_prob(a, mu, log_std))


def policy_log_prob(pol: GaussianPolicy, obs, actions) -> np.ndarray:
    return gaussian_log_prob(actions, pol.mean(obs), pol.clamped_log_std())


def policy_entropy(pol: GaussianPolicy) -> float:
    log_std = pol.clamped_log_std()
    return float(np.sum(0.5 + HALF_LOG_2PI + log_std))


# --------------------------------------------------------------------------
# checkpoints
# --------------------------------------------------------------------------

def _write_net(buf, name: str, p: MlpParams) -> None:
    buf.write(f"net {name} " + " ".join(map(str, p.sizes)) + "\n")
    for w, b in zip(p.weights, p.biases):
        for row in w:
            buf.write(" ".join(repr(float(x)) for x in row) + "\n")
        buf.write(" ".join(repr(float(x)) for x in b) + "\n")


def dumps_checkpoint(actor: GaussianPolicy, critic: MlpParams, extra: dict[str, np.ndarray] | None = None) -> str:
    """Text layout: magic line, then ``net``/``vec`` sections of repr floats
    (``repr`` round-trips doubles exactly)."""
    buf = io.StringIO()
    buf.write(CKPT_MAGIC + "\n")
    _write_net(buf, "actor", actor.mean_net)
    buf.write(f"vec log_std {actor.log_std.size}\n")
    buf.write(" ".join(repr(float(x)) for x in actor.log_std) + "\n")
    _write_net(buf, "critic", critic)
    for key, arr in sorted((extra or {}).items()):
        arr = np.asarray(arr, dtype=float).ravel()
        buf.write(f"vec {key} {arr.size}\n")
        buf.write(" ".join(repr(float(x)) for x in arr) + "\n")
    return buf.getvalue()


def loads_checkpoint(text: str) -> tuple[GaussianPolicy, MlpParams, dict[str, np.ndarray]]:
    lines = iter(text.splitlines())
    if next(lines, "").strip() != CKPT_MAGIC:
        raise ValueError(f"not an {CKPT_MAGIC} checkpoint")
    nets: dict[str, MlpParams] = {}
    vecs: dict[str, np.ndarray] = {}
    floats = lambda line: np.array([float(x) for x in line.split()]) if line.strip() else np.zeros(0)
    for head in lines:
        parts = head.split()
        if not parts:
            continue
        if parts[0] == "net":
            sizes = [int(s) for s in parts[2:]]
            ws, bs = [], []
            for fi, fo in zip(sizes, sizes[1:]):
                ws.append(np.array([floats(next(lines)) for _ in range(fi)]).reshape(fi, fo))
                bs.append(floats(next(lines)))
            nets[parts[1]] = MlpParams(ws, bs)
        elif parts[0] == "vec":
            vecs[parts[1]] = floats(next(lines))
        else:
            raise ValueError(f"unexpected checkpoint line {head!r}")
    actor = GaussianPolicy(nets["actor"], vecs.pop("log_std"))
    return actor, nets["critic"], vecs


def save_checkpoint(path, actor, critic, extra=None) -> None:
    Path(path).write_text(dumps_checkpoint(actor, critic, extra), encoding="utf-8")


def load_checkpoint(path):
    return loads_checkpoint(Path(path).read_text(encoding="utf-8"))
