"""Masked-attention autoregressive policy and its independent (iid) ablation.

The context layer is a two-stream stack of simplified transformer blocks.
For a factorization order ``z`` the query stream at order position ``t``
starts at ``Q[z_t]`` and attends to the key stream at positions ``< t``; the
key stream starts at ``Q[z_u] + V[:, a_{z_u}]`` and attends to positions
``<= u``. Each block is ``PosFF(x + attend(x, keys))`` with additive
attention and ``PosFF(x) = W2 tanh(W1 x + b1) + b2``; there are no
positional encodings, residuals around PosFF or normalization layers.

All strings of a batch go through the network at once; gradients are
hand-written reverse mode over the same batched computation.
"""
from __future__ import annotations

from dataclasses import dataclass
from types import SimpleNamespace
from typing import Sequence

import numpy as np

from .numerics import ParamStore, Rng, log_softmax
from .space import SearchSpace


class SamplerExhausted(RuntimeError):
    pass


def _attend(X, K, mask, Wq, Wk, ba, wa):
    """Additive attention of every row of X over the rows of K allowed by mask.

    X, K: (B, N, d); mask: (N, N) with mask[t, j] True when query t sees key j.
    Rows with no visible key produce a zero output.
    """
    a = X @ Wq.T
    c = K @ Wk.T
    T = np.tanh(a[:, :, None, :] + c[:, None, :, :] + ba)
    e = np.where(mask, T @ wa, -np.inf)
    mx = np.max(e, axis=-1, keepdims=True)
    ex = np.exp(e - np.where(np.isfinite(mx), mx, 0.0))
    s = ex.sum(-1, keepdims=True)
    alpha = ex / np.where(s > 0, s, 1.0)
    return alpha @ K, (X, K, T, alpha)


def _attend_back(g, cache, Wq, Wk, wa, grads, prefix):
    X, K, T, alpha = cache
    dalpha = g @ K.transpose(0, 2, 1)
    dK = alpha.transpose(0, 2, 1) @ g
    de = alpha * (dalpha - np.sum(alpha * dalpha, axis=-1, keepdims=True))
    grads[prefix + "wa"] += np.einsum("bijd,bij->d", T, de)
    dpre = de[..., None] * wa * (1.0 - T * T)
    grads[prefix + "ba"] += dpre.sum(axis=(0, 1, 2))
    da = dpre.sum(axis=2)
    dc = dpre.sum(axis=1)
    grads[prefix + "Wq"] += np.einsum("bnd,bne->de", da, X)
    grads[prefix + "Wk"] += np.einsum("bnd,bne->de", dc, K)
    return da @ Wq, dK + dc @ Wk


def _posff(X, W1, b1, W2, b2):
    s = np.tanh(X @ W1.T + b1)
    return s @ W2.T + b2, (X, s)


def _posff_back(g, cache, W1, W2, grads, prefix):
    X, s = cache
    grads[prefix + "W2"] += np.einsum("bnd,bnf->df", g, s)
    grads[prefix + "b2"] += g.sum(axis=(0, 1))
    du = (g @ W2) * (1.0 - s * s)
    grads[prefix + "W1"] += np.einsum("bnf,bnd->fd", du, X)
    grads[prefix + "b1"] += du.sum(axis=(0, 1))
    return du @ W1


def _block_names(m: int) -> list[str]:
    return [f"block{m}.{k}" for k in ("Wq", "Wk", "ba", "wa", "W1", "b1", "W2", "b2")]


@dataclass
class Policy:
    """Parameters plus architecture of a policy over one search space."""

    space: SearchSpace
    params: ParamStore
    kind: str = "maade"
    d: int = 36
    d_ff: int = 36
    n_blocks: int = 1

    def __post_init__(self):
        fams = self.space.family_names
        self._fam_index = np.array([fams.index(f) for f in self.space.families])
        self._strict = np.tril(np.ones((self.space.n, self.space.n), dtype=bool), k=-1)
        self._inclusive = np.tril(np.ones((self.space.n, self.space.n), dtype=bool))

    @property
    def n(self) -> int:
        return self.space.n

    def identity_order(self) -> np.ndarray:
        return np.arange(self.n)

    def copy(self) -> Policy:
        return Policy(self.space, self.params.copy(), self.kind, self.d, self.d_ff, self.n_blocks)

    def with_params(self, params: ParamStore) -> Policy:
        return Policy(self.space, params, self.kind, self.d, self.d_ff, self.n_blocks)

    def context_param_count(self) -> int:
        return sum(self.params[k].size for k in self.params if k.startswith("block"))

    # forward / backward -------------------------------------------------

    def _prep(self, strings, orders):
        A = np.atleast_2d(np.asarray(strings, dtype=np.int64))
        B = A.shape[0]
        if orders is None:
            Z = np.broadcast_to(self.identity_order(), (B, self.n))
        else:
            Z = np.asarray(orders, dtype=np.int64)
            if Z.ndim == 1:
                Z = np.broadcast_to(Z, (B, self.n))
        if A.shape[1] != self.n or Z.shape != A.shape:
            raise ValueError(f"expected strings/orders of width {self.n}, got {A.shape} and {Z.shape}")
        return A, np.ascontiguousarray(Z)

    def forward(self, strings, orders=None) -> SimpleNamespace:
        """Run the network on a batch of complete strings.

        ``orders[b, t]`` is the hyperparameter predicted at order position t.
        Returns a trace holding per-hyperparameter log-probability vectors
        (``logp[i]``, shape (B, D_i)), the log-probability of the chosen value
        at each order position (``step_logp``, shape (B, N)) and the
        activations needed by :meth:`backward`.
        """
        A, Z = self._prep(strings, orders)
        B, N = A.shape
        p = self.params
        rows = np.arange(B)
        inv = np.argsort(Z, axis=1)
        tr = SimpleNamespace(A=A, Z=Z, inv=inv, blocks=[])
        if self.kind == "maade":
            Az = np.take_along_axis(A, Z, axis=1)
            Vz = np.empty((B, N, self.d))
            famz = self._fam_index[Z]
            for f, fam in enumerate(self.space.family_names):
                sel = famz == f
                Vz[sel] = p[f"V.{fam}"][:, Az[sel]].T
            q = p["Q"][Z]
            k = q + Vz
            tr.Az, tr.famz = Az, famz
            for m in range(self.n_blocks):
                Wq, Wk, ba, wa, W1, b1, W2, b2 = (p[x] for x in _block_names(m))
                blk = SimpleNamespace()
                qa, blk.qa = _attend(q, k, self._strict, Wq, Wk, ba, wa)
                q_next, blk.qf = _posff(q + qa, W1, b1, W2, b2)
                if m < self.n_blocks - 1:
                    ka, blk.ka = _attend(k, k, self._inclusive, Wq, Wk, ba, wa)
                    k, blk.kf = _posff(k + ka, W1, b1, W2, b2)
                q = q_next
                tr.blocks.append(blk)
            tr.h = q
        tr.logp = []
        step_logp = np.empty((B, N))
        for i in range(N):
            pos = inv[:, i]
            if self.kind == "maade":
                logits = tr.h[rows, pos] @ p[f"head{i}.W"] + p[f"head{i}.b"]
            else:
                logits = np.broadcast_to(p[f"head{i}.b"], (B, self.space.dims[i]))
            lp = log_softmax(logits)
            tr.logp.append(lp)
            step_logp[rows, pos] = lp[rows, A[:, i]]
        tr.step_logp = step_logp
        return tr

    def backward(self, tr, dlogp: Sequence[np.ndarray]) -> ParamStore:
        """Gradient of sum_i <dlogp[i], logp[i]> with respect to all parameters."""
        p = self.params
        grads = p.zeros_like()
        B, N = tr.A.shape
        rows = np.arange(B)
        dh = np.zeros((B, N, self.d)) if self.kind == "maade" else None
        for i in range(N):
            lp = tr.logp[i]
            g = dlogp[i]
            dlogits = g - np.exp(lp) * g.sum(axis=1, keepdims=True)
            grads[f"head{i}.b"] += dlogits.sum(axis=0)
            if self.kind == "maade":
                pos = tr.inv[:, i]
                grads[f"head{i}.W"] += tr.h[rows, pos].T @ dlogits
                dh[rows, pos] += dlogits @ p[f"head{i}.W"].T
        if self.kind != "maade":
            return grads
        dq, dk = dh, np.zeros_like(dh)
        for m in reversed(range(self.n_blocks)):
            names = _block_names(m)
            Wq, Wk, ba, wa, W1, b1, W2, b2 = (p[x] for x in names)
            pre = f"block{m}."
            blk = tr.blocks[m]
            dq_in = _posff_back(dq, blk.qf, W1, W2, grads, pre)
            dX, dK = _attend_back(dq_in, blk.qa, Wq, Wk, wa, grads, pre)
            new_dq, new_dk = dq_in + dX, dK
            if m < self.n_blocks - 1:
                dk_in = _posff_back(dk, blk.kf, W1, W2, grads, pre)
                dX, dK = _attend_back(dk_in, blk.ka, Wq, Wk, wa, grads, pre)
                new_dk = new_dk + dk_in + dX + dK
            dq, dk = new_dq, new_dk
        np.add.at(grads["Q"], tr.Z, dq + dk)
        for f, fam in enumerate(self.space.family_names):
            sel = tr.famz == f
            np.add.at(grads[f"V.{fam}"].T, tr.Az[sel], dk[sel])
        return grads

    def step_weight_grad(self, tr, weights) -> ParamStore:
        """Gradient of sum_{b,t} weights[b, t] * step_logp[b, t]."""
        weights = np.asarray(weights, dtype=np.float64)
        B = tr.A.shape[0]
        rows = np.arange(B)
        dlogp = []
        for i in range(self.n):
            g = np.zeros_like(tr.logp[i])
            g[rows, tr.A[:, i]] = weights[rows, tr.inv[:, i]]
            dlogp.append(g)
        return self.backward(tr, dlogp)

    # public API ---------------------------------------------------------

    def log_probs(self, strings, orders=None) -> np.ndarray:
        return self.forward(strings, orders).step_logp.sum(axis=1)

    def log_prob(self, s, order=None) -> float:
        return float(self.log_probs([self.space.check(s)], order)[0])

    def grad_log_prob(self, s, order=None) -> ParamStore:
        tr = self.forward([self.space.check(s)], order)
        return self.step_weight_grad(tr, np.ones((1, self.n)))

    def forward_context(self, order, prefix_values: Sequence[int], t: int):
        """Context vector for the target at 1-based order position ``t``.

        ``prefix_values[u]`` is the value of hyperparameter ``order[u]``.
        Values at positions >= t do not influence the result.
        """
        if self.kind != "maade":
            raise ValueError("iid policies have no context layer")
        order = np.asarray(order, dtype=np.int64)
        if not 1 <= t <= self.n:
            raise ValueError(f"target position {t} outside 1..{self.n}")
        if len(prefix_values) != t - 1:
            raise ValueError(f"expected {t - 1} prefix values, got {len(prefix_values)}")
        s = np.zeros(self.n, dtype=np.int64)
        for u, v in enumerate(prefix_values):
            if not 0 <= v < self.space.dims[order[u]]:
                raise ValueError(f"prefix value {v} invalid for hyperparameter {order[u]}")
            s[order[u]] = v
        tr = self.forward(s[None], order)
        return tr.h[0, t - 1].copy(), tr

    def conditional_log_probs(self, h, i: int) -> np.ndarray:
        if not 0 <= i < self.n:
            raise IndexError(f"no hyperparameter {i}")
        if self.kind != "maade":
            return log_softmax(self.params[f"head{i}.b"])
        return log_softmax(np.asarray(h) @ self.params[f"head{i}.W"] + self.params[f"head{i}.b"])

    def sample(self, rng: Rng, orders, prefix=None, prefix_len=0) -> tuple[np.ndarray, np.ndarray]:
        """Draw one string per row of ``orders``; returns (strings, log-probs).

        Rows may carry fixed values at their first ``prefix_len`` order
        positions (``prefix`` holds full-width strings); only later positions
        are sampled. Returned log-probs cover the whole string.
        """
        Z = np.atleast_2d(np.asarray(orders, dtype=np.int64))
        B = Z.shape[0]
        A = np.zeros((B, self.n), dtype=np.int64) if prefix is None else np.array(prefix, dtype=np.int64)
        A = np.atleast_2d(A)
        for t in range(prefix_len, self.n):
            tr = self.forward(A, Z) if (self.kind == "maade" or t == prefix_len) else tr
            u = rng.uniform(B)
            for b in range(B):
                i = Z[b, t]
                c = np.cumsum(np.exp(tr.logp[i][b]))
                A[b, i] = min(int(np.searchsorted(c, u[b] * c[-1], side="right")), len(c) - 1)
        return A, self.log_probs(A, Z)

    def sample_string(self, rng: Rng, order=None) -> tuple[tuple[int, ...], float]:
        order = self.identity_order() if order is None else np.asarray(order)
        A, lp = self.sample(rng, order[None])
        return tuple(int(x) for x in A[0]), float(lp[0])

    def sample_valid(self, rng: Rng, orders, max_attempts: int = 1000) -> tuple[np.ndarray, np.ndarray]:
        """Rejection-sample one valid string per row of ``orders``."""
        if max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")
        Z = np.atleast_2d(np.asarray(orders, dtype=np.int64))
        out = np.zeros((Z.shape[0], self.n), dtype=np.int64)
        lps = np.zeros(Z.shape[0])
        todo = np.arange(Z.shape[0])
        for _ in range(max_attempts):
            A, lp = self.sample(rng, Z[todo])
            ok = np.array([self.space.predicate(self.space, tuple(int(x) for x in a)) for a in A], dtype=bool)
            out[todo[ok]] = A[ok]
            lps[todo[ok]] = lp[ok]
            todo = todo[~ok]
            if todo.size == 0:
                return out, lps
        raise SamplerExhausted(f"no valid string after {max_attempts} attempts ({todo.size} slots unfilled)")

    def sample_valid_string(self, rng: Rng, order=None, max_attempts: int = 1000) -> tuple[tuple[int, ...], float]:
        order = self.identity_order() if order is None else np.asarray(order)
        A, lp = self.sample_valid(rng, order[None], max_attempts)
        return tuple(int(x) for x in A[0]), float(lp[0])

    def step_entropies(self, tr) -> np.ndarray:
        """Conditional entropy at every (sample, hyperparameter), shape (B, N)."""
        return np.stack([-(np.exp(lp) * lp).sum(axis=1) for lp in tr.logp], axis=1)


def init_policy(
    space: SearchSpace,
    kind: str = "maade",
    d: int = 36,
    d_ff: int | None = None,
    n_blocks: int = 1,
    rng: Rng | None = None,
) -> Policy:
    """Weights ~ N(0, 1/sqrt(d)) (standard deviation), biases zero.

    The iid kind keeps only the head biases, so it starts uniform.
    """
    if kind not in ("maade", "iid"):
        raise ValueError(f"unknown policy kind {kind!r}")
    d_ff = d if d_ff is None else d_ff
    if d < 1 or n_blocks < 1 or d_ff < 1:
        raise ValueError("d, d_ff and the block count must be positive")
    p = ParamStore()
    if kind == "iid":
        for i, dim in enumerate(space.dims):
            p[f"head{i}.b"] = np.zeros(dim)
        return Policy(space, p, kind, d, d_ff, n_blocks)
    if rng is None:
        raise ValueError("maade initialization needs an rng")
    std = 1.0 / np.sqrt(d)
    p["Q"] = rng.normal(std, (space.n, d))
    for fam in space.family_names:
        p[f"V.{fam}"] = rng.normal(std, (d, space.family_dim(fam)))
    for m in range(n_blocks):
        p[f"block{m}.Wq"] = rng.normal(std, (d, d))
        p[f"block{m}.Wk"] = rng.normal(std, (d, d))
        p[f"block{m}.ba"] = np.zeros(d)
        p[f"block{m}.wa"] = rng.normal(std, d)
        p[f"block{m}.W1"] = rng.normal(std, (d_ff, d))
        p[f"block{m}.b1"] = np.zeros(d_ff)
        p[f"block{m}.W2"] = rng.normal(std, (d, d_ff))
        p[f"block{m}.b2"] = np.zeros(d)
    for i, dim in enumerate(space.dims):
        p[f"head{i}.W"] = rng.normal(std, (d, dim))
        p[f"head{i}.b"] = np.zeros(dim)
    return Policy(space, p, kind, d, d_ff, n_blocks)
