import numpy as np
import pytest

from remaade.numerics import (AdamState, ParamStore, adam_step, central_finite_difference, log_softmax,
                              seeded_rng)


def store(**kw):
    return ParamStore({k: np.asarray(v, dtype=float) for k, v in kw.items()})


def test_flatten_round_trip():
    p = store(a=np.arange(6.0).reshape(2, 3), b=[7.0, 8.0], c=[[9.0]])
    flat = p.flatten()
    assert flat.tolist() == [0, 1, 2, 3, 4, 5, 7, 8, 9]
    q = p.unflatten(flat)
    assert q.names() == ["a", "b", "c"]
    for k in p:
        assert np.array_equal(p[k], q[k])
    with pytest.raises(ValueError):
        p.unflatten(np.zeros(3))


def test_save_load(tmp_path):
    p = store(a=np.random.default_rng(0).normal(size=(3, 2)), b=[1.5])
    p.save(tmp_path / "ck.npz")
    q = ParamStore.load(tmp_path / "ck.npz")
    assert q.names() == p.names()
    assert np.array_equal(q.flatten(), p.flatten())


def test_adam_zero_gradient_is_identity():
    p = store(x=[1.0, -2.0])
    st = AdamState.fresh(p)
    for _ in range(5):
        adam_step(p, p.zeros_like(), st, 0.1)
    assert p["x"].tolist() == [1.0, -2.0]
    assert st.t == 5


def test_adam_first_step():
    p = store(x=[0.0])
    st = AdamState.fresh(p)
    adam_step(p, store(x=[1.0]), st, 0.1)
    # m_hat = v_hat = 1 at t=1
    assert p["x"][0] == pytest.approx(0.1 / (1 + 1e-8), abs=1e-15)
    assert st.t == 1


def test_adam_two_steps_moments():
    p = store(x=[0.0])
    st = AdamState.fresh(p)
    g = store(x=[1.0])
    adam_step(p, g, st, 0.1)
    adam_step(p, g, st, 0.1)
    assert st.t == 2
    assert st.m["x"][0] == pytest.approx(0.9 * 0.1 + 0.1, abs=1e-15)
    assert st.v["x"][0] == pytest.approx(0.999 * 0.001 + 0.001, abs=1e-15)
    m_hat = 0.19 / (1 - 0.81)
    v_hat = 0.001999 / (1 - 0.999**2)
    assert p["x"][0] == pytest.approx(0.1 / (1 + 1e-8) + 0.1 * m_hat / (np.sqrt(v_hat) + 1e-8), abs=1e-12)


def test_adam_errors():
    p = store(x=[0.0, 0.0])
    with pytest.raises(ValueError):
        adam_step(p, store(x=[1.0]), AdamState.fresh(p), 0.1)
    with pytest.raises(FloatingPointError, match="'x'"):
        adam_step(p, store(x=[1.0, np.nan]), AdamState.fresh(p), 0.1)


def test_finite_difference_examples():
    p = store(x=[1.0, 2.0])
    g = central_finite_difference(lambda q: float(np.sum(q["x"] ** 2)), p, 1e-5)
    assert np.allclose(g["x"], [2.0, 4.0], atol=1e-8)
    assert p["x"].tolist() == [1.0, 2.0]
    assert np.all(central_finite_difference(lambda q: 3.0, p)["x"] == 0.0)
    with pytest.raises(FloatingPointError):
        central_finite_difference(lambda q: np.inf, p)


def test_finite_difference_log_softmax_jacobian():
    v = np.array([0.3, -1.2, 2.0])
    sm = np.exp(v) / np.exp(v).sum()
    for i in range(3):
        g = central_finite_difference(lambda q: float(log_softmax(q["v"])[i]), store(v=v), 1e-5)
        analytic = np.eye(3)[i] - sm
        assert np.allclose(g["v"], analytic, atol=1e-7)


def test_log_softmax():
    assert np.allclose(log_softmax([0.0, 0.0]), [-np.log(2)] * 2, atol=0)
    out = log_softmax([1000.0, 0.0])
    assert np.all(np.isfinite(out))
    assert out[0] == pytest.approx(0.0, abs=1e-300) and out[1] == pytest.approx(-1000.0)
    assert abs(np.exp(log_softmax([1.0, 2.0, 3.0])).sum() - 1) <= 1e-12
    rng = np.random.default_rng(0)
    for _ in range(100):
        v = rng.normal(scale=20, size=rng.integers(1, 10))
        assert abs(np.exp(log_softmax(v)).sum() - 1) <= 1e-12
    with pytest.raises(ValueError):
        log_softmax([])


def test_rng_determinism():
    a, b = seeded_rng(42), seeded_rng(42)
    assert np.array_equal(a.uniform(100), b.uniform(100))
    assert a.permutation(10).tolist() == b.permutation(10).tolist()
    assert not np.array_equal(seeded_rng(1).uniform(10), seeded_rng(2).uniform(10))


def test_rng_degenerate_categorical():
    r = seeded_rng(0)
    assert all(r.categorical([1.0, 0.0]) == 0 for _ in range(1000))
    assert all(r.categorical([0.0, 1.0]) == 1 for _ in range(1000))


def test_rng_permutation_frequencies():
    r = seeded_rng(7)
    counts = {}
    n = 60_000
    for _ in range(n):
        p = tuple(r.permutation(3))
        counts[p] = counts.get(p, 0) + 1
    assert len(counts) == 6
    for c in counts.values():
        assert abs(c / n - 1 / 6) <= 0.01
