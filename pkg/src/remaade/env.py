"""Reward environments: synthetic objectives, tabular lookups, external processes.

Rewards are always "higher is better".
"""
from __future__ import annotations

import csv
import math
import selectors
import shlex
import subprocess
import time
from typing import Sequence

import numpy as np

from .numerics import seeded_rng
from .space import SearchSpace, enumerate_strings


class EnvError(RuntimeError):
    pass


class Environment:
    deterministic = True
    concurrent_safe = True

    def __init__(self, space: SearchSpace):
        self.space = space

    def evaluate(self, s: Sequence[int]) -> float:
        return float(self._reward(self.space.check(s)))

    def _reward(self, s: tuple[int, ...]) -> float:
        raise NotImplementedError

    def close(self) -> None:
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def evaluate(env: Environment, s: Sequence[int]) -> float:
    return env.evaluate(s)


class SeparableEnv(Environment):
    """f(a) = sum_i w_i [a_i == t_i] + N(0, noise_sd)."""

    def __init__(self, space, weights, targets, noise_sd=0.0, seed=0):
        super().__init__(space)
        self.weights = np.asarray(weights, dtype=np.float64)
        self.targets = np.asarray(targets, dtype=np.int64)
        if self.weights.shape != (space.n,) or self.targets.shape != (space.n,):
            raise ValueError(f"weights and targets need length {space.n}")
        if np.any(self.weights < 0):
            raise ValueError("weights must be non-negative")
        self.noise_sd = float(noise_sd)
        self.deterministic = self.noise_sd == 0.0
        self.concurrent_safe = self.deterministic
        self._rng = seeded_rng(seed)

    @property
    def optimum(self) -> float:
        return float(self.weights.sum())

    def _reward(self, s):
        r = float(np.dot(self.weights, np.asarray(s) == self.targets))
        if self.noise_sd:
            r += float(self._rng.normal(self.noise_sd))
        return r


def make_separable(space, weights, targets, noise_sd=0.0, seed=0) -> SeparableEnv:
    return SeparableEnv(space, weights, targets, noise_sd, seed)


class XorEnv(Environment):
    """bonus for every listed pair whose two bits differ."""

    def __init__(self, space, pairs, bonus=1.0):
        super().__init__(space)
        if any(x != 2 for x in space.dims):
            raise ValueError("xor environment needs a binary space")
        flat = [i for pair in pairs for i in pair]
        if len(set(flat)) != len(flat):
            raise ValueError("xor pairs must be disjoint")
        if any(not 0 <= i < space.n for i in flat):
            raise ValueError("xor pair index out of range")
        self.pairs = [tuple(p) for p in pairs]
        self.bonus = float(bonus)

    @property
    def optimum(self) -> float:
        return self.bonus * len(self.pairs)

    def _reward(self, s):
        return self.bonus * sum(s[p] ^ s[q] for p, q in self.pairs)


def make_xor(space, pairs, bonus=1.0) -> XorEnv:
    return XorEnv(space, pairs, bonus)


class TabularEnv(Environment):
    def __init__(self, space, rewards: dict, metrics: dict | None = None):
        super().__init__(space)
        self.rewards = {tuple(int(x) for x in k): float(v) for k, v in rewards.items()}
        self.metrics = dict(metrics or {})

    def _reward(self, s):
        try:
            return self.rewards[s]
        except KeyError:
            raise EnvError(f"string {s} is not in the table") from None


def tabulate(env: Environment, include_invalid: bool = True) -> TabularEnv:
    """Freeze a deterministic environment into a lookup table over its space."""
    if not env.deterministic:
        raise ValueError("only deterministic environments can be tabulated")
    return TabularEnv(env.space, {s: env.evaluate(s) for s in enumerate_strings(env.space, include_invalid)})


def load_tabular(path, space: SearchSpace, minimize: bool = False) -> TabularEnv:
    """Read ``a_0,...,a_{N-1},reward[,metric]`` rows (0-based indices).

    With ``minimize`` the reward column is an error metric and is negated.
    """
    rewards, metrics = {}, {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EnvError(f"{path}: empty file") from None
        expected = [f"a_{i}" for i in range(space.n)] + ["reward"]
        if header[: space.n + 1] != expected or len(header) > space.n + 2:
            raise EnvError(f"{path}:1: header does not match a {space.n}-dimensional space")
        has_metric = len(header) == space.n + 2
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise EnvError(f"{path}:{line}: expected {len(header)} fields, got {len(row)}")
            try:
                s = space.check(int(x) for x in row[: space.n])
                r = float(row[space.n])
                m = float(row[space.n + 1]) if has_metric else None
            except ValueError as e:
                raise EnvError(f"{path}:{line}: {e}") from None
            if not math.isfinite(r):
                raise EnvError(f"{path}:{line}: non-finite reward")
            if s in rewards:
                raise EnvError(f"{path}:{line}: duplicate string {s}")
            rewards[s] = -r if minimize else r
            if m is not None:
                metrics[s] = m
    return TabularEnv(space, rewards, metrics)


def dump_tabular(env: TabularEnv, path, minimize: bool = False) -> None:
    """Write rows in canonical lexicographic order."""
    n = env.space.n
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"a_{i}" for i in range(n)] + ["reward"] + (["metric2"] if env.metrics else []))
        for s in sorted(env.rewards):
            r = -env.rewards[s] if minimize else env.rewards[s]
            row = list(s) + [repr(r)]
            if env.metrics:
                row.append(repr(env.metrics[s]))
            w.writerow(row)


class ExternalEnv(Environment):
    """Child process speaking a line protocol on stdin/stdout.

    The child first prints ``READY <N>``. For each evaluation it receives
    ``EVAL i0,i1,...`` and answers ``REWARD <float>`` or ``ERROR <message>``.
    """

    concurrent_safe = False

    def __init__(self, command, space, timeout=60.0, deterministic=False):
        super().__init__(space)
        self.timeout = float(timeout)
        self.deterministic = deterministic
        argv = shlex.split(command) if isinstance(command, str) else list(command)
        try:
            self.proc = subprocess.Popen(argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True, bufsize=1)
        except OSError as e:
            raise EnvError(f"cannot launch {argv!r}: {e}") from None
        self._sel = selectors.DefaultSelector()
        self._sel.register(self.proc.stdout, selectors.EVENT_READ)
        try:
            line = self._readline()
            parts = line.split()
            if len(parts) != 2 or parts[0] != "READY" or parts[1] != str(space.n):
                raise EnvError(f"bad handshake {line!r}, expected 'READY {space.n}'")
        except EnvError:
            self.close()
            raise

    def _readline(self) -> str:
        deadline = time.monotonic() + self.timeout
        remaining = self.timeout
        while remaining > 0:
            if self._sel.select(remaining):
                line = self.proc.stdout.readline()
                if not line:
                    raise EnvError(f"child exited (code {self.proc.poll()})")
                return line.rstrip("\n")
            remaining = deadline - time.monotonic()
        raise EnvError(f"no reply within {self.timeout}s")

    def _reward(self, s):
        if self.proc.poll() is not None:
            raise EnvError(f"child exited (code {self.proc.returncode})")
        try:
            self.proc.stdin.write("EVAL " + ",".join(map(str, s)) + "\n")
            self.proc.stdin.flush()
        except BrokenPipeError:
            raise EnvError("child closed its input") from None
        line = self._readline()
        if line.startswith("REWARD "):
            try:
                return float(line[7:])
            except ValueError:
                raise EnvError(f"malformed reply {line!r}") from None
        if line.startswith("ERROR"):
            raise EnvError(line[6:])
        raise EnvError(f"malformed reply {line!r}")

    def close(self):
        if self.proc.poll() is None:
            try:
                self.proc.stdin.close()
            except OSError:
                pass
            try:
                self.proc.wait(timeout=2)
            except subprocess.TimeoutExpired:
                self.proc.kill()
                self.proc.wait()
        self._sel.close()


def spawn_external(command, space, timeout=60.0) -> ExternalEnv:
    return ExternalEnv(command, space, timeout)


class MemoizedEnv(Environment):
    """Cache rewards of a deterministic environment; ``calls`` counts cache misses."""

    def __init__(self, env: Environment):
        if not env.deterministic:
            raise ValueError("memoizing a stochastic environment would change its rewards")
        super().__init__(env.space)
        self.inner = env
        self.concurrent_safe = env.concurrent_safe
        self.calls = 0
        self._cache: dict[tuple[int, ...], float] = {}

    def _reward(self, s):
        if s not in self._cache:
            self.calls += 1
            self._cache[s] = self.inner.evaluate(s)
        return self._cache[s]

    def close(self):
        self.inner.close()


def parse_pairs(text: str) -> list[tuple[int, int]]:
    return [tuple(int(x) for x in p.split("-")) for p in text.split(",") if p]


def parse_env(text: str, space: SearchSpace, minimize: bool = False, timeout: float = 60.0) -> Environment:
    """Build an environment from a spec string.

    ``separable[:w=1,1][:t=0,0][:noise=0.1][:seed=3]``,
    ``xor[:pairs=0-1,2-3][:bonus=1]``, ``tabular:<path>``, ``external:<command>``.
    Missing separable weights default to 1, targets to 0; missing xor pairs
    default to consecutive pairs (0-1, 2-3, ...).
    """
    kind, _, rest = text.partition(":")
    if kind == "tabular":
        return load_tabular(rest, space, minimize)
    if kind == "external":
        return ExternalEnv(rest, space, timeout)
    opts = dict(p.split("=", 1) for p in rest.split(":") if p)
    if kind == "separable":
        w = [float(x) for x in opts["w"].split(",")] if "w" in opts else [1.0] * space.n
        t = [int(x) for x in opts["t"].split(",")] if "t" in opts else [0] * space.n
        return SeparableEnv(space, w, t, float(opts.get("noise", 0.0)), int(opts.get("seed", 0)))
    if kind == "xor":
        pairs = parse_pairs(opts["pairs"]) if "pairs" in opts else [(i, i + 1) for i in range(0, space.n - 1, 2)]
        return XorEnv(space, pairs, float(opts.get("bonus", 1.0)))
    raise ValueError(f"unknown environment {text!r}")

