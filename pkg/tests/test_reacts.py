import math

import numpy as np
import pytest

from remaade.env import MemoizedEnv, TabularEnv, make_separable, make_xor
from remaade.numerics import central_finite_difference, seeded_rng
from remaade.policy import init_policy
from remaade.reacts import (ConstantCritic, actor_critic_gradient, CriticConfig, EvalHistory, ExactCritic, MLPCritic, decode_from_critic,
                            encode_for_critic, estimate_value, exact_critic, fit_critic_arrays,
                            mixture_importance_weights, mixture_weights, run_reacts, step_advantages)
from remaade.space import build_space, enumerate_strings
from remaade.trainer import Batch, RunConfig, compute_advantages, reinforce_gradient, run

from conftest import randomized_policy


def test_encoding_example_and_round_trip():
    sp = build_space([2, 3])
    assert encode_for_critic(sp, [(1, 0)]).tolist() == [[0, 1, 1, 0, 0]]
    A = np.array(list(enumerate_strings(sp)))
    assert np.array_equal(decode_from_critic(sp, encode_for_critic(sp, A)), A)
    with pytest.raises(ValueError):
        encode_for_critic(sp, [(0, 3)])


def test_mixture_weights_examples():
    assert mixture_weights(np.array([[-1.7], [-0.2]])).tolist() == [1.0, 1.0]
    same = np.full((5, 4), -2.345678)
    assert np.all(mixture_weights(same) == 1.0)
    w = mixture_weights(np.log(np.array([[0.25, 0.5]])))
    assert w[0] == pytest.approx(4 / 3, rel=1e-14)
    assert mixture_weights(np.log(np.array([[1e-9, 0.5]])), w_max=10.0)[0] == pytest.approx(2.0, rel=1e-6)
    assert mixture_weights(np.log(np.array([[1e-9, 1e-9, 0.9]])), w_max=2.5)[0] == 2.5
    with pytest.raises(FloatingPointError):
        mixture_weights(np.array([[np.nan, 0.0]]))


def test_history_weights_are_one_for_a_frozen_policy(small_policy):
    hist = EvalHistory()
    rng = seeded_rng(0)
    Z = np.tile(small_policy.identity_order(), (5, 1))
    for _ in range(3):
        A, lp = small_policy.sample(rng, Z)
        hist.add_round(Batch(A, np.zeros(5), lp, Z), small_policy.params)
    assert np.all(mixture_importance_weights(hist, small_policy) == 1.0)


def test_history_weights_oracle():
    sp = build_space([2, 2])
    pol = init_policy(sp, "iid")
    hist = EvalHistory()
    Z = np.tile(pol.identity_order(), (4, 1))
    A = np.array(list(enumerate_strings(sp)))
    snaps = []
    for b in ([0.0, 0.0], [1.0, -1.0]):
        pol.params["head0.b"] = b
        snaps.append(pol.params.copy())
        hist.add_round(Batch(A, np.zeros(4), pol.log_probs(A, Z), Z), pol.params)
    w = mixture_importance_weights(hist, pol, w_max=100)
    strings = np.concatenate([A, A])
    p = [np.exp(pol.with_params(s).log_probs(strings, np.tile([0, 1], (8, 1)))) for s in snaps]
    assert np.allclose(w, 2 * p[1] / (p[0] + p[1]), rtol=1e-13)


def test_critic_gradient_finite_difference():
    sp = build_space([2, 3, 2])
    c = MLPCritic.init(sp, 5, seeded_rng(1))
    rng = np.random.default_rng(0)
    A = np.array(list(enumerate_strings(sp)))
    X, y, w = encode_for_critic(sp, A), rng.normal(size=len(A)), rng.uniform(0.1, 2, size=len(A))
    _, g = c.loss_and_grad(X, y, w)
    fd = central_finite_difference(lambda p: MLPCritic(sp, p).loss_and_grad(X, y, w)[0], c.params, 1e-6)
    assert np.max(np.abs(g.flatten() - fd.flatten())) <= 1e-8


def test_critic_fits_single_sample():
    sp = build_space([2, 3])
    c = fit_critic_arrays([(1, 2)], [3.7], [1.0], CriticConfig(hidden=16, alpha=1e-2, epochs=500), seeded_rng(0),
                          space=sp)
    assert c.predict([(1, 2)])[0] == pytest.approx(3.7, abs=1e-3)


def test_critic_fits_linear_target():
    sp = build_space([3, 3, 2])
    A = np.array(list(enumerate_strings(sp)))
    y = encode_for_critic(sp, A) @ np.array([0.1, -0.4, 0.3, 0.2, 0.0, -0.1, 0.5, -0.2])
    c = fit_critic_arrays(A, y, np.ones(len(A)), CriticConfig(64, 1e-2, 2000), seeded_rng(0), space=sp)
    assert np.mean((c.predict(A) - y) ** 2) <= 1e-4


def test_zero_weight_samples_are_ignored():
    sp = build_space([2, 2])
    A = np.array(list(enumerate_strings(sp)))
    y = np.array([1.0, 2.0, 3.0, 4.0])
    cfg = CriticConfig(8, 1e-2, 50)
    a = fit_critic_arrays(A, y, [1, 0, 1, 0], cfg, seeded_rng(0), space=sp)
    y2 = np.array([1.0, -50.0, 3.0, 99.0])
    b = fit_critic_arrays(A, y2, [1, 0, 1, 0], cfg, seeded_rng(0), space=sp)
    assert np.array_equal(a.params.flatten(), b.params.flatten())
    with pytest.raises(ValueError):
        fit_critic_arrays(A, y, [0, 0, 0, 0], cfg, seeded_rng(0), space=sp)


def uniform_policy(space, d=4):
    pol = init_policy(space, d=d, rng=seeded_rng(0))
    for k in pol.params:
        if k.startswith("head"):
            pol.params[k][...] = 0.0
    return pol


def test_value_examples():
    sp = build_space([2, 2])
    table = TabularEnv(sp, {(0, 0): 1.0, (0, 1): 2.0, (1, 0): 3.0, (1, 1): 4.0})
    pol, critic = uniform_policy(sp), ExactCritic(table)
    z = np.array([0, 1])
    assert estimate_value(pol, critic, z, [], mode="exhaustive") == pytest.approx(2.5, abs=1e-14)
    assert estimate_value(pol, critic, z, [1], mode="exhaustive") == pytest.approx(3.5, abs=1e-14)
    assert estimate_value(pol, critic, z, [1, 0]) == 3.0
    assert estimate_value(pol, critic, np.array([1, 0]), [0]) == pytest.approx(2.0, abs=1e-14)


def test_value_matches_brute_force(small_policy):
    pol = small_policy
    sp = pol.space
    critic = ExactCritic(TabularEnv(sp, {s: math.sin(1 + 3 * s[0] + s[1] * s[3] + 0.5 * s[2])
                                         for s in enumerate_strings(sp)}))
    z = np.array([2, 0, 3, 1])
    for prefix in ([], [1], [1, 0], [1, 0, 2]):
        total = norm = 0.0
        for s in enumerate_strings(sp):
            if list(np.array(s)[z[: len(prefix)]]) != prefix:
                continue
            p = math.exp(sum(pol.forward([s], z).step_logp[0, len(prefix):]))
            total += p * critic.predict([s])[0]
            norm += p
        assert norm == pytest.approx(1.0, abs=1e-12)
        assert estimate_value(pol, critic, z, prefix, mode="exhaustive") == pytest.approx(total, abs=1e-12)


def test_sampled_value_agrees_with_exhaustive(small_policy):
    sp = small_policy.space
    critic = ExactCritic(TabularEnv(sp, {s: float(s[0] + s[1] * s[2] - s[3]) for s in enumerate_strings(sp)}))
    z, prefix = np.array([1, 3, 0, 2]), [2]
    exact = estimate_value(small_policy, critic, z, prefix, mode="exhaustive")
    L = 4000
    mc = estimate_value(small_policy, critic, z, prefix, L=L, rng=seeded_rng(0), mode="sampled")
    sd = math.sqrt(sum(math.exp(small_policy.forward([s], z).step_logp[0, 1:].sum()) *
                       (critic.predict([s])[0] - exact) ** 2
                       for s in enumerate_strings(sp) if s[1] == 2))
    assert abs(mc - exact) <= 3 * sd / math.sqrt(L)


def test_constant_critic_reduces_to_reinforce(small_policy):
    pol = small_policy
    Z = np.tile(np.array([3, 0, 2, 1]), (8, 1))
    A, lp = pol.sample(seeded_rng(4), Z)
    r = np.arange(8.0)
    c = 2.5
    adv = step_advantages(pol, Batch(A, r, lp, Z), ConstantCritic(c))
    assert np.allclose(adv, np.repeat((r - c)[:, None], 4, axis=1), rtol=0, atol=1e-13)
    g = actor_critic_gradient(pol, Batch(A, r, lp, Z), ConstantCritic(c))
    ref = reinforce_gradient(pol, Batch(A, r, lp, Z, compute_advantages(r - c, "none")[0]))
    assert np.allclose(g.flatten(), ref.flatten(), atol=1e-13)


def test_deterministic_policy_has_zero_gradient():
    sp = build_space([2, 3])
    pol = init_policy(sp, "iid")
    pol.params["head0.b"] = [0.0, 800.0]
    pol.params["head1.b"] = [0.0, 0.0, 800.0]
    env = TabularEnv(sp, {s: float(s[0] + s[1]) for s in enumerate_strings(sp)})
    A = np.array([[1, 2]] * 3)
    Z = np.tile([0, 1], (3, 1))
    g = actor_critic_gradient(pol, Batch(A, np.full(3, 3.0), pol.log_probs(A, Z), Z), ExactCritic(env))
    assert not np.any(g.flatten())


def test_actor_critic_gradient_unbiased(small_policy):
    """Probability-weighted sum over all strings equals the exact gradient of expected reward."""
    pol = small_policy
    sp = pol.space
    f = lambda s: float(s[0] ^ (s[2] == 1)) + 0.25 * s[1] * s[3]
    # a deliberately wrong critic: the estimator is unbiased for any prefix baseline
    critic = MLPCritic.init(sp, 6, seeded_rng(7))
    A = np.array(list(enumerate_strings(sp)))
    z = np.array([1, 3, 0, 2])
    Z = np.tile(z, (len(A), 1))
    p = np.exp(pol.log_probs(A, Z))
    r = np.array([f(s) for s in A])
    adv = step_advantages(pol, Batch(A, r, np.log(p), Z), critic, mode="exhaustive")
    g = pol.step_weight_grad(pol.forward(A, Z), adv * p[:, None])
    fd = central_finite_difference(
        lambda prm: float(np.dot(np.exp(pol.with_params(prm).log_probs(A, Z)), r)), pol.params, 1e-5)
    assert np.max(np.abs(g.flatten() - fd.flatten())) <= 1e-8


def test_exact_critic_requires_table():
    sp = build_space([2, 2])
    with pytest.raises(TypeError):
        exact_critic(make_xor(sp, [(0, 1)]))
    table = TabularEnv(sp, {s: 1.0 for s in enumerate_strings(sp)})
    assert isinstance(exact_critic(MemoizedEnv(table)), ExactCritic)


def test_run_reacts_shapes():
    sp = build_space([2, 2, 2])
    env = TabularEnv(sp, {s: float(sum(s)) for s in enumerate_strings(sp)})
    one = run(RunConfig(algorithm="reacts", budget=10, batch=10, d=4, critic_epochs=20), sp, env)
    assert one.metadata["rounds"] == 1 and one.explorations == 10
    ex = run(RunConfig(algorithm="reacts", budget=40, batch=10, d=4, critic="exact"), sp, env)
    assert ex.metadata["critic"] == "exact" and ex.metadata["rounds"] == 4
    with pytest.raises(ValueError):
        run_reacts(RunConfig(algorithm="remaade"), sp, env)


def test_reacts_learns_single_optimum():
    sp = build_space([2, 2])
    env = TabularEnv(sp, {s: float(s == (1, 1)) for s in enumerate_strings(sp)})
    hits = {}
    for algo in ("reacts", "remaade"):
        hits[algo] = sum(
            math.exp(run(RunConfig(algorithm=algo, budget=600, batch=30, d=8, seed=seed,
                                   critic_epochs=100), sp, env).policy.log_prob((1, 1))) >= 0.9
            for seed in range(10))
    assert hits["reacts"] >= 9
    assert hits["reacts"] >= hits["remaade"] - 1
