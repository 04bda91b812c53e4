"""Parameter storage, Adam, seeded RNG and small numeric helpers.

Everything runs in float64. The RNG is numpy's PCG64 bit generator; only
``random()`` doubles and ``standard_normal`` are consumed from it, and
categorical and permutation draws are derived from those uniforms here so
their results do not depend on numpy's higher-level sampling routines.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np


class ParamStore:
    """Named float64 tensors with a stable flattening order (insertion order)."""

    def __init__(self, tensors: dict[str, np.ndarray] | None = None):
        self._t: dict[str, np.ndarray] = {}
        for name, value in (tensors or {}).items():
            self[name] = value

    def __getitem__(self, name: str) -> np.ndarray:
        return self._t[name]

    def __setitem__(self, name: str, value) -> None:
        self._t[name] = np.array(value, dtype=np.float64)

    def __contains__(self, name: str) -> bool:
        return name in self._t

    def __iter__(self) -> Iterator[str]:
        return iter(self._t)

    def __len__(self) -> int:
        return len(self._t)

    def items(self):
        return self._t.items()

    def names(self) -> list[str]:
        return list(self._t)

    @property
    def size(self) -> int:
        return sum(v.size for v in self._t.values())

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {k: v.shape for k, v in self._t.items()}

    def flatten(self) -> np.ndarray:
        if not self._t:
            return np.zeros(0)
        return np.concatenate([v.ravel() for v in self._t.values()])

    def unflatten(self, flat: np.ndarray) -> ParamStore:
        """A new store with this store's layout and values taken from ``flat``."""
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.size:
            raise ValueError(f"flat vector has {flat.size} entries, store has {self.size}")
        out, pos = ParamStore(), 0
        for name, v in self._t.items():
            out[name] = flat[pos:pos + v.size].reshape(v.shape)
            pos += v.size
        return out

    def zeros_like(self) -> ParamStore:
        return ParamStore({k: np.zeros_like(v) for k, v in self._t.items()})

    def copy(self) -> ParamStore:
        return ParamStore({k: v.copy() for k, v in self._t.items()})

    def add_(self, other: ParamStore, scale: float = 1.0) -> ParamStore:
        for k, v in other.items():
            self._t[k] += scale * v
        return self

    def scaled(self, scale: float) -> ParamStore:
        return ParamStore({k: scale * v for k, v in self._t.items()})

    def save(self, path) -> None:
        np.savez(path, **self._t)

    @classmethod
    def load(cls, path) -> ParamStore:
        with np.load(path) as data:
            return cls({k: data[k] for k in data.files})


@dataclass
class AdamState:
    m: ParamStore
    v: ParamStore
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, params: ParamStore, **kw) -> AdamState:
        return cls(params.zeros_like(), params.zeros_like(), **kw)


def adam_step(params: ParamStore, grads: ParamStore, state: AdamState, lr: float) -> tuple[ParamStore, AdamState]:
    """One Adam step in the *ascent* direction, applied in place."""
    for name in params:
        g = grads[name]
        if g.shape != params[name].shape:
            raise ValueError(f"gradient for {name!r} has shape {g.shape}, expected {params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in {name!r}")
    state.t += 1
    c1 = 1.0 - state.beta1**state.t
    c2 = 1.0 - state.beta2**state.t
    for name in params:
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        params[name] += lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


def central_finite_difference(f: Callable[[ParamStore], float], params: ParamStore, h: float = 1e-5) -> ParamStore:
    """Per-coordinate (f(x+h) - f(x-h)) / 2h. ``params`` is restored afterwards."""
    if h <= 0:
        raise ValueError("step must be positive")
    out = params.zeros_like()
    for name in params:
        x = params[name].reshape(-1)
        g = out[name].reshape(-1)
        for j in range(x.size):
            orig = x[j]
            x[j] = orig + h
            fp = f(params)
            x[j] = orig - h
            fm = f(params)
            x[j] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise FloatingPointError(f"non-finite objective probing {name}[{j}]")
            g[j] = (fp - fm) / (2 * h)
    return out


def log_softmax(v, axis: int = -1) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise ValueError("log_softmax of an empty vector")
    shifted = v - np.max(v, axis=axis, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


def logsumexp(v, axis: int = -1) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    mx = np.max(v, axis=axis, keepdims=True)
    mx = np.where(np.isfinite(mx), mx, 0.0)
    return np.squeeze(mx, axis) + np.log(np.sum(np.exp(v - mx), axis=axis))


@dataclass
class Rng:
    """Deterministic stream over numpy's PCG64 generator."""

    seed: int
    _gen: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def uniform(self, size=None):
        return self._gen.random(size)

    def normal(self, scale: float = 1.0, size=None):
        return scale * self._gen.standard_normal(size)

    def integer(self, high: int) -> int:
        """Uniform integer in [0, high)."""
        return min(int(self.uniform() * high), high - 1)

    def categorical(self, probs) -> int:
        c = np.cumsum(probs)
        idx = int(np.searchsorted(c, self.uniform() * c[-1], side="right"))
        return min(idx, len(c) - 1)

    def permutation(self, n: int) -> np.ndarray:
        # Fisher-Yates on uniforms
        out = np.arange(n)
        for i in range(n - 1, 0, -1):
            j = self.integer(i + 1)
            out[i], out[j] = out[j], out[i]
        return out


def seeded_rng(seed: int) -> Rng:
    return Rng(int(seed))
