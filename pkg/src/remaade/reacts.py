"""Actor-critic search: a learned reward simulator supplies per-step baselines.

Each round the critic is refit on every string evaluated so far, with
importance weights that re-target the historical mixture of policies onto
the current one. The policy gradient then uses, at each order position,
the advantage ``f(a) - V(prefix)`` where ``V`` averages critic predictions
over policy completions of the prefix.
"""
from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass

import numpy as np

from .env import Environment, MemoizedEnv, TabularEnv
from .numerics import AdamState, ParamStore, Rng, adam_step, seeded_rng
from .orders import build_order_set
from .policy import Policy
from .space import ENUMERATION_LIMIT, SearchSpace
from .trainer import (Batch, RunConfig, RunResult, _Best, _metadata, entropy_gradient, evaluate_batch,
                      make_policy, sample_batch)

EXHAUSTIVE_LIMIT = 1024


def encode_for_critic(space: SearchSpace, strings) -> np.ndarray:
    """Concatenated one-hot blocks, one per hyperparameter in index order."""
    A = np.atleast_2d(np.asarray(strings, dtype=np.int64))
    if A.shape[1] != space.n:
        raise ValueError(f"expected strings of width {space.n}, got {A.shape[1]}")
    if np.any(A < 0) or np.any(A >= np.array(space.dims)):
        raise ValueError("string value out of range")
    offsets = np.concatenate([[0], np.cumsum(space.dims)[:-1]])
    X = np.zeros((A.shape[0], sum(space.dims)))
    X[np.arange(A.shape[0])[:, None], offsets + A] = 1.0
    return X


def decode_from_critic(space: SearchSpace, X) -> np.ndarray:
    X = np.atleast_2d(X)
    bounds = np.cumsum([0, *space.dims])
    return np.stack([X[:, lo:hi].argmax(axis=1) for lo, hi in zip(bounds[:-1], bounds[1:])], axis=1)


@dataclass
class CriticConfig:
    hidden: int = 64
    alpha: float = 1e-3
    epochs: int = 200


class MLPCritic:
    """One tanh hidden layer over the one-hot encoding, scalar linear output."""

    def __init__(self, space: SearchSpace, params: ParamStore):
        self.space = space
        self.params = params

    @classmethod
    def init(cls, space, hidden, rng: Rng) -> MLPCritic:
        n_in = sum(space.dims)
        p = ParamStore()
        p["W1"] = rng.normal(1.0 / math.sqrt(n_in), (hidden, n_in))
        p["b1"] = np.zeros(hidden)
        p["w2"] = rng.normal(1.0 / math.sqrt(hidden), hidden)
        p["b2"] = np.zeros(1)
        return cls(space, p)

    def _forward(self, X):
        s = np.tanh(X @ self.params["W1"].T + self.params["b1"])
        return s @ self.params["w2"] + self.params["b2"][0], s

    def predict(self, strings) -> np.ndarray:
        return self._forward(encode_for_critic(self.space, strings))[0]

    def loss_and_grad(self, X, y, w):
        """Weighted MSE sum w (pred - y)^2 / sum w and its gradient."""
        pred, s = self._forward(X)
        r = pred - y
        wsum = w.sum()
        loss = float(np.sum(w * r * r) / wsum)
        dpred = 2.0 * w * r / wsum
        g = ParamStore()
        ds = np.outer(dpred, self.params["w2"]) * (1.0 - s * s)
        g["W1"] = ds.T @ X
        g["b1"] = ds.sum(axis=0)
        g["w2"] = s.T @ dpred
        g["b2"] = np.array([dpred.sum()])
        return loss, g


class ExactCritic:
    """Predicts the true reward of a tabular environment."""

    def __init__(self, env: TabularEnv):
        self.env = env

    def predict(self, strings) -> np.ndarray:
        return np.array([self.env.evaluate(s) for s in np.atleast_2d(strings)])


class ConstantCritic:
    def __init__(self, value: float):
        self.value = float(value)

    def predict(self, strings) -> np.ndarray:
        return np.full(len(np.atleast_2d(strings)), self.value)


def exact_critic(env: Environment) -> ExactCritic:
    inner = env.inner if isinstance(env, MemoizedEnv) else env
    if not isinstance(inner, TabularEnv):
        raise TypeError("the exact critic needs a tabular environment")
    return ExactCritic(inner)


class EvalHistory:
    """Evaluated batches with the policy parameters that produced each one.

    Log-probabilities of every stored string under every stored parameter
    snapshot are computed on demand and cached.
    """

    def __init__(self):
        self.rounds: list[Batch] = []
        self.snapshots: list[ParamStore] = []
        self._logp: dict[tuple[int, int], np.ndarray] = {}

    def add_round(self, batch: Batch, params: ParamStore) -> None:
        t = len(self.rounds)
        self.rounds.append(batch)
        self.snapshots.append(params.copy())
        self._logp[(t, t)] = np.asarray(batch.logp_old, dtype=np.float64)

    @property
    def strings(self) -> np.ndarray:
        return np.concatenate([b.strings for b in self.rounds])

    @property
    def rewards(self) -> np.ndarray:
        return np.concatenate([b.rewards for b in self.rounds])

    def log_prob_matrix(self, policy: Policy, t: int | None = None) -> np.ndarray:
        """(samples in rounds 0..t) x (snapshots 0..t) log-probabilities."""
        t = len(self.rounds) - 1 if t is None else t
        cols = []
        for tau in range(t + 1):
            pol = policy.with_params(self.snapshots[tau])
            col = []
            for r in range(t + 1):
                if (r, tau) not in self._logp:
                    b = self.rounds[r]
                    self._logp[(r, tau)] = pol.log_probs(b.strings, b.orders)
                col.append(self._logp[(r, tau)])
            cols.append(np.concatenate(col))
        return np.stack(cols, axis=1)


def mixture_weights(logp: np.ndarray, w_max: float = 10.0) -> np.ndarray:
    """(t+1) P_t(a) / sum_tau P_tau(a), the last column being the current policy.

    Evaluated as (t+1) / sum_tau exp(logp_tau - logp_t), so identical
    policies give weights of exactly one.
    """
    logp = np.atleast_2d(logp)
    if not np.all(np.isfinite(logp)):
        raise FloatingPointError("non-finite log-probability in importance weights")
    n_pol = logp.shape[1]
    with np.errstate(over="ignore"):
        denom = np.exp(logp - logp[:, -1:]).sum(axis=1)
    return np.clip(n_pol / denom, 0.0, w_max)


def mixture_importance_weights(history: EvalHistory, policy: Policy, t: int | None = None,
                               w_max: float = 10.0) -> np.ndarray:
    return mixture_weights(history.log_prob_matrix(policy, t), w_max)


def fit_critic(history: EvalHistory, weights, config: CriticConfig, rng: Rng,
               init: MLPCritic | None = None, space: SearchSpace | None = None) -> MLPCritic:
    """Minimize the weighted MSE with full-batch Adam for ``config.epochs`` steps."""
    strings, y = history.strings, history.rewards
    return fit_critic_arrays(strings, y, weights, config, rng, init, space)


def fit_critic_arrays(strings, rewards, weights, config: CriticConfig, rng: Rng,
                      init: MLPCritic | None = None, space: SearchSpace | None = None) -> MLPCritic:
    space = init.space if space is None else space
    X = encode_for_critic(space, strings)
    y = np.asarray(rewards, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if len(y) == 0:
        raise ValueError("cannot fit a critic without samples")
    if w.sum() <= 0:
        raise ValueError("importance weights sum to zero")
    critic = MLPCritic.init(space, config.hidden, rng) if init is None else MLPCritic(space, init.params.copy())
    adam = AdamState.fresh(critic.params)
    for epoch in range(config.epochs):
        loss, g = critic.loss_and_grad(X, y, w)
        if not math.isfinite(loss):
            raise FloatingPointError(f"critic loss diverged at epoch {epoch}")
        adam_step(critic.params, g.scaled(-1.0), adam, config.alpha)
    return critic


def _completions(policy: Policy, order, prefix):
    dims = [policy.space.dims[i] for i in order[len(prefix):]]
    count = math.prod(dims)
    if count > ENUMERATION_LIMIT:
        raise ValueError(f"{count} completions exceed the enumeration limit")
    A = np.zeros((count, policy.n), dtype=np.int64)
    for u, v in enumerate(prefix):
        A[:, order[u]] = v
    suffix = np.array(list(itertools.product(*(range(x) for x in dims))), dtype=np.int64).reshape(count, -1)
    A[:, order[len(prefix):]] = suffix
    return A


def estimate_value(policy: Policy, critic, order, prefix, L: int = 8, rng: Rng | None = None,
                   mode: str = "auto") -> float:
    """Expected critic value when the prefix is fixed and the rest is drawn from the policy.

    ``prefix[u]`` is the value at order position u. ``exhaustive`` sums over
    all completions weighted by their conditional probability; ``sampled``
    averages L policy completions; ``auto`` picks exhaustive when there are
    at most 1024 completions.
    """
    order = np.asarray(order, dtype=np.int64)
    prefix = [int(v) for v in prefix]
    t = len(prefix)
    if t == policy.n:
        s = np.zeros(policy.n, dtype=np.int64)
        s[order] = prefix
        return float(critic.predict(s[None])[0])
    if mode == "auto":
        mode = "exhaustive" if math.prod(policy.space.dims[i] for i in order[t:]) <= EXHAUSTIVE_LIMIT else "sampled"
    if mode == "exhaustive":
        A = _completions(policy, order, prefix)
        lp = policy.forward(A, order).step_logp[:, t:].sum(axis=1)
        return float(np.dot(np.exp(lp), critic.predict(A)))
    if mode != "sampled":
        raise ValueError(f"unknown value mode {mode!r}")
    if L < 1:
        raise ValueError("need at least one rollout")
    start = np.zeros((L, policy.n), dtype=np.int64)
    start[:, order[:t]] = prefix
    A, _ = policy.sample(rng, np.tile(order, (L, 1)), prefix=start, prefix_len=t)
    return float(critic.predict(A).mean())


def step_advantages(policy: Policy, batch: Batch, critic, L: int = 8, rng: Rng | None = None,
                    mode: str = "auto") -> np.ndarray:
    """f(a^k) - V(prefix before order position t) for every (k, t)."""
    B, N = batch.strings.shape
    out = np.empty((B, N))
    memo: dict[tuple, float] = {}
    for k in range(B):
        z = batch.orders[k]
        vals = batch.strings[k][z]
        for t in range(N):
            key = (tuple(z), tuple(vals[:t]))
            if key not in memo:
                memo[key] = estimate_value(policy, critic, z, vals[:t], L, rng, mode)
            out[k, t] = batch.rewards[k] - memo[key]
    return out


def actor_critic_gradient(policy: Policy, batch: Batch, critic, L: int = 8, rng: Rng | None = None,
                          mode: str = "auto") -> ParamStore:
    """(1/B) sum_k sum_t grad log P(a_{z_t} | prefix) [f(a^k) - V(prefix)]."""
    adv = step_advantages(policy, batch, critic, L, rng, mode)
    tr = policy.forward(batch.strings, batch.orders)
    return policy.step_weight_grad(tr, adv / batch.size)


def run_reacts(config: RunConfig, space: SearchSpace, env: Environment, rng: Rng | None = None) -> RunResult:
    if config.algorithm != "reacts":
        raise ValueError(f"run_reacts cannot run {config.algorithm!r}")
    rng = seeded_rng(config.seed) if rng is None else rng
    start = time.perf_counter()
    policy = make_policy(config, space, rng)
    orders = build_order_set(space.n, config.S, rng)
    adam = AdamState.fresh(policy.params, beta1=config.adam_beta1, beta2=config.adam_beta2, eps=config.adam_eps)
    ccfg = CriticConfig(config.critic_hidden, config.critic_alpha, config.critic_epochs)
    fixed_critic = exact_critic(env) if config.critic == "exact" else None
    critic = None
    history = EvalHistory()
    best = _Best()
    e, rnd = 0, 0
    while e < config.budget:
        n = min(config.batch, config.budget - e)
        A, lp, Z = sample_batch(policy, orders, n, rng, config.max_attempts)
        rewards = evaluate_batch(env, A, rnd)
        best.update(A, rewards)
        batch = Batch(A, rewards, lp, Z)
        if fixed_critic is None:
            history.add_round(batch, policy.params)
            w = mixture_importance_weights(history, policy, w_max=config.w_max)
            critic = fit_critic(history, w, ccfg, rng, init=critic, space=space)
        g = actor_critic_gradient(policy, batch, fixed_critic or critic, config.L, rng, config.value_mode)
        if config.entropy:
            g.add_(entropy_gradient(policy, batch), config.entropy)
        adam_step(policy.params, g, adam, config.alpha)
        e += n
        rnd += 1
    meta = _metadata(config, orders)
    meta["rounds"] = rnd
    meta["critic"] = "exact" if fixed_critic is not None else (
        f"mlp hidden={ccfg.hidden} tanh adam alpha={ccfg.alpha} epochs={ccfg.epochs} w_max={config.w_max}")
    return RunResult(best.string, best.reward, best.trajectory, config.as_dict(),
                     time.perf_counter() - start, meta, policy)
