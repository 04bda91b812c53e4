"""Policy-gradient search loop: sampling, advantages, REINFORCE/PPO updates."""
from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .env import Environment, EnvError
from .numerics import AdamState, ParamStore, Rng, adam_step, seeded_rng
from .orders import OrderSet, build_order_set, sample_orders
from .policy import Policy, SamplerExhausted, init_policy
from .space import SearchSpace

ALGORITHMS = ("random", "reinforce-iid", "remaade", "reacts")
BASELINES = ("batch-mean", "ema", "none")


@dataclass
class RunConfig:
    algorithm: str = "remaade"
    budget: int = 150
    batch: int = 30
    alpha: float = 1e-2
    eps: float = 0.1
    ppo: bool = False
    ppo_epochs: int = 1
    entropy: float = 0.0
    baseline: str = "batch-mean"
    ema_gamma: float = 0.9
    d: int = 36
    d_ff: int | None = None
    m: int = 1
    S: int = 1
    L: int = 8
    seed: int = 0
    max_attempts: int = 1000
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    critic: str = "learned"
    critic_hidden: int = 64
    critic_alpha: float = 1e-3
    critic_epochs: int = 200
    w_max: float = 10.0
    value_mode: str = "auto"

    def __post_init__(self):
        if self.d_ff is None:
            self.d_ff = self.d
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.baseline not in BASELINES:
            raise ValueError(f"unknown baseline {self.baseline!r}")
        if self.batch < 1 or self.budget < 1:
            raise ValueError("budget and batch must be positive")
        # random search evaluates one string at a time and ignores the batch size
        if self.algorithm != "random" and self.budget < self.batch:
            raise ValueError("need budget >= batch")
        if self.ppo and self.eps <= 0:
            raise ValueError("PPO needs a positive clip coefficient")
        if self.critic not in ("learned", "exact"):
            raise ValueError(f"unknown critic {self.critic!r}")

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class RunResult:
    best_string: tuple[int, ...] | None
    best_reward: float
    trajectory: list[float]
    config: dict
    seconds: float = 0.0
    metadata: dict = field(default_factory=dict)
    policy: Policy | None = field(default=None, repr=False)

    @property
    def explorations(self) -> int:
        return len(self.trajectory)


@dataclass
class Batch:
    strings: np.ndarray
    rewards: np.ndarray
    logp_old: np.ndarray
    orders: np.ndarray
    advantages: np.ndarray | None = None

    @property
    def size(self) -> int:
        return len(self.rewards)


class _Best:
    """Best-so-far bookkeeping over individual evaluations."""

    def __init__(self):
        self.reward = -math.inf
        self.string = None
        self.trajectory: list[float] = []

    def update(self, strings, rewards):
        for s, r in zip(strings, rewards):
            if r > self.reward:
                self.reward, self.string = float(r), tuple(int(x) for x in s)
            self.trajectory.append(self.reward)


def compute_advantages(rewards, baseline: str = "batch-mean", state: float = 0.0, gamma: float = 0.9):
    """Advantages and the updated baseline state (only ``ema`` keeps state)."""
    r = np.asarray(rewards, dtype=np.float64)
    if r.size == 0:
        raise ValueError("no rewards")
    if not np.all(np.isfinite(r)):
        raise ValueError("non-finite reward")
    if baseline == "batch-mean":
        return r - r.mean(), state
    if baseline == "ema":
        return r - state, gamma * state + (1.0 - gamma) * r.mean()
    if baseline == "none":
        return r.copy(), state
    raise ValueError(f"unknown baseline {baseline!r}")


def reinforce_gradient(policy: Policy, batch: Batch) -> ParamStore:
    """(1/B) sum_k A_k grad log P(a^k)."""
    tr = policy.forward(batch.strings, batch.orders)
    w = np.repeat((batch.advantages / batch.size)[:, None], policy.n, axis=1)
    return policy.step_weight_grad(tr, w)


def ppo_weights(logp_new, logp_old, advantages, eps):
    """Per-sample multiplier of grad log P in the clipped-surrogate gradient.

    A sample whose minimum picks the clipped (constant) branch gets zero.
    """
    r = np.exp(logp_new - logp_old)
    unclipped = r * advantages <= np.clip(r, 1 - eps, 1 + eps) * advantages
    return np.where(unclipped, advantages * r, 0.0)


def ppo_gradient(policy: Policy, batch: Batch, eps: float) -> ParamStore:
    tr = policy.forward(batch.strings, batch.orders)
    logp_new = tr.step_logp.sum(axis=1)
    w = ppo_weights(logp_new, batch.logp_old, batch.advantages, eps) / batch.size
    return policy.step_weight_grad(tr, np.repeat(w[:, None], policy.n, axis=1))


def entropy_gradient(policy: Policy, batch: Batch) -> ParamStore:
    """Gradient of the batch mean of summed per-step conditional entropies."""
    tr = policy.forward(batch.strings, batch.orders)
    dlogp = [-np.exp(lp) * (lp + 1.0) / batch.size for lp in tr.logp]
    return policy.backward(tr, dlogp)


def sample_uniform_valid(space: SearchSpace, rng: Rng, max_attempts: int) -> tuple[int, ...]:
    for _ in range(max_attempts):
        s = tuple(rng.integer(dim) for dim in space.dims)
        if space.predicate(space, s):
            return s
    raise SamplerExhausted(f"no valid uniform string after {max_attempts} attempts")


def sample_batch(policy: Policy, orders: OrderSet, n: int, rng: Rng, max_attempts: int):
    Z = sample_orders(orders, n, rng)
    A, lp = policy.sample_valid(rng, Z, max_attempts)
    return A, lp, Z


def evaluate_batch(env: Environment, strings, round_index: int) -> np.ndarray:
    out = np.empty(len(strings))
    for k, s in enumerate(strings):
        try:
            out[k] = env.evaluate(s)
        except EnvError as e:
            raise EnvError(f"round {round_index}, sample {k}: {e}") from e
    if not np.all(np.isfinite(out)):
        raise EnvError(f"round {round_index}: environment returned a non-finite reward")
    return out


def _metadata(config: RunConfig, orders: OrderSet | None) -> dict:
    meta = {
        "rng": "numpy PCG64",
        "init": "normal(0, 1/sqrt(d)) weights, zero biases",
        "adam": (config.adam_beta1, config.adam_beta2, config.adam_eps),
    }
    if orders is not None:
        meta["orders"] = [list(p) for p in orders.perms]
    return meta


def make_policy(config: RunConfig, space: SearchSpace, rng: Rng) -> Policy:
    kind = "iid" if config.algorithm == "reinforce-iid" else "maade"
    return init_policy(space, kind, config.d, config.d_ff, config.m, rng)


def policy_step(policy, batch, config, adam):
    """ppo_epochs Adam ascent steps on one batch."""
    for _ in range(config.ppo_epochs):
        if config.ppo:
            g = ppo_gradient(policy, batch, config.eps)
        else:
            g = reinforce_gradient(policy, batch)
        if config.entropy:
            g.add_(entropy_gradient(policy, batch), config.entropy)
        adam_step(policy.params, g, adam, config.alpha)


def run_remaade(config: RunConfig, space: SearchSpace, env: Environment, rng: Rng | None = None) -> RunResult:
    if config.algorithm not in ("remaade", "reinforce-iid"):
        raise ValueError(f"run_remaade cannot run {config.algorithm!r}")
    rng = seeded_rng(config.seed) if rng is None else rng
    start = time.perf_counter()
    policy = make_policy(config, space, rng)
    orders = build_order_set(space.n, config.S, rng)
    adam = AdamState.fresh(policy.params, beta1=config.adam_beta1, beta2=config.adam_beta2, eps=config.adam_eps)
    best = _Best()
    ema_state = 0.0
    e, rnd = 0, 0
    while e < config.budget:
        n = min(config.batch, config.budget - e)
        A, lp, Z = sample_batch(policy, orders, n, rng, config.max_attempts)
        rewards = evaluate_batch(env, A, rnd)
        best.update(A, rewards)
        adv, ema_state = compute_advantages(rewards, config.baseline, ema_state, config.ema_gamma)
        policy_step(policy, Batch(A, rewards, lp, Z, adv), config, adam)
        e += n
        rnd += 1
    meta = _metadata(config, orders)
    meta["rounds"] = rnd
    return RunResult(best.string, best.reward, best.trajectory, config.as_dict(),
                     time.perf_counter() - start, meta, policy)


def run_random_search(config: RunConfig, space: SearchSpace, env: Environment, rng: Rng | None = None) -> RunResult:
    rng = seeded_rng(config.seed) if rng is None else rng
    start = time.perf_counter()
    best = _Best()
    for e in range(config.budget):
        s = sample_uniform_valid(space, rng, config.max_attempts)
        best.update([s], evaluate_batch(env, [s], e))
    return RunResult(best.string, best.reward, best.trajectory, config.as_dict(),
                     time.perf_counter() - start, _metadata(config, None))


def run(config: RunConfig, space: SearchSpace, env: Environment, rng: Rng | None = None) -> RunResult:
    """Dispatch on ``config.algorithm``."""
    if config.algorithm == "random":
        return run_random_search(config, space, env, rng)
    if config.algorithm == "reacts":
        from .reacts import run_reacts

        return run_reacts(config, space, env, rng)
    return run_remaade(config, space, env, rng)
