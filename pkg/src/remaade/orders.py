"""Ensembles of autoregressive factorization orders sharing one policy."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .numerics import Rng
from .policy import Policy

_ENUMERATE_BELOW = 50_000


@dataclass(frozen=True)
class OrderSet:
    perms: tuple[tuple[int, ...], ...]
    seed: int | None = None

    @property
    def size(self) -> int:
        return len(self.perms)

    def index(self, z) -> int:
        z = tuple(int(x) for x in z)
        try:
            return self.perms.index(z)
        except ValueError:
            raise ValueError(f"order {z} is not in the set") from None

    def as_array(self) -> np.ndarray:
        return np.array(self.perms, dtype=np.int64)


def build_order_set(n: int, size: int, rng: Rng) -> OrderSet:
    """Identity first, then size-1 further permutations drawn without replacement."""
    total = math.factorial(n)
    if not 1 <= size <= total:
        raise ValueError(f"order set size must be in 1..{total}, got {size}")
    ident = tuple(range(n))
    perms = [ident]
    if total <= _ENUMERATE_BELOW:
        others = [p for p in itertools.permutations(range(n)) if p != ident]
        for _ in range(size - 1):
            perms.append(others.pop(rng.integer(len(others))))
    else:
        seen = {ident}
        while len(perms) < size:
            p = tuple(int(x) for x in rng.permutation(n))
            if p not in seen:
                seen.add(p)
                perms.append(p)
    return OrderSet(tuple(perms), rng.seed)


def joint_log_prob(policy: Policy, orders: OrderSet, z, s) -> float:
    orders.index(z)
    return policy.log_prob(s, np.asarray(z)) - math.log(orders.size)


def sample_orders(orders: OrderSet, n: int, rng: Rng) -> np.ndarray:
    """n orders drawn uniformly from the set, one per row."""
    arr = orders.as_array()
    if orders.size == 1:
        return np.repeat(arr, n, axis=0)
    return arr[[rng.integer(orders.size) for _ in range(n)]]


def sample_joint(policy: Policy, orders: OrderSet, rng: Rng, max_attempts: int = 1000):
    """Draw (order, valid string, joint log-prob)."""
    z = sample_orders(orders, 1, rng)
    A, lp = policy.sample_valid(rng, z, max_attempts)
    return tuple(int(x) for x in z[0]), tuple(int(x) for x in A[0]), float(lp[0]) - math.log(orders.size)
