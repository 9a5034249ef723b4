import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.stats import chisquare

from secretprot import lp as lpmod
from secretprot import trainer as tr
from secretprot.pipeline import SamplingPlan


def _plan(n, probs, B, T, sigma, C=1.0):
    w = np.ones(n)
    return SamplingPlan(lpmod.WeightVector(w, float(n)), np.asarray(probs, dtype=float), B, T, sigma, C)


def test_clip_inside_ball():
    v = np.array([0.3, 0.4])
    np.testing.assert_array_equal(tr.clip(v, 1.0), v)


def test_clip_scales_down():
    v = np.array([1.2, 1.6])
    np.testing.assert_allclose(tr.clip(v, 1.0), v / 2, rtol=1e-15)


def test_clip_zero_vector():
    np.testing.assert_array_equal(tr.clip(np.zeros(3), 1.0), np.zeros(3))


def test_clip_norm_bound_many(rng):
    v = rng.standard_cauchy(size=(100_000, 5))
    norms = np.linalg.norm(tr.clip(v, 0.7), axis=1)
    assert norms.max() <= 0.7 + 1e-12


@settings(max_examples=200)
@given(arrays(np.float64, st.integers(1, 8), elements=st.floats(-1e6, 1e6)), st.floats(1e-3, 1e3))
def test_clip_preserves_direction(v, C):
    out = tr.clip(v, C)
    assert np.linalg.norm(out) <= C * (1 + 1e-12)
    n = np.linalg.norm(v)
    if n > 0:
        assert np.dot(out, v) >= 0
        np.testing.assert_allclose(out * n, v * np.linalg.norm(out), rtol=1e-9, atol=1e-9 * n * C)


def test_rows_match_single_vectors(rng):
    V = rng.normal(size=(50, 7)) * 3
    rows = tr.clip(V, 1.0)
    for i in range(50):
        np.testing.assert_array_equal(rows[i], tr.clip(V[i], 1.0))


def _reference_gd(X, theta, rounds, C, B, lr, model):
    # plain full-batch loop: per-example gradient, clip, sum in order, step
    for _ in range(rounds):
        acc = np.zeros_like(theta)
        for x in X:
            acc = acc + tr.clip(model.loss_grad(theta, x), C)
        theta = theta - lr * (acc / B)
    return theta


@pytest.mark.parametrize("kind", ["linear", "logistic"])
def test_noiseless_full_batch_reduction(kind):
    smap = tr.make_synthetic(60, 5, 1.0, 4, seed=3)
    n = smap.n
    plan = _plan(n, np.ones(n), float(n), 40, 0.0, C=0.5)
    model = tr.MODELS[kind](4)
    if kind == "logistic":
        X = smap.payload_matrix()
        X[:, -1] = (X[:, -1] > 0).astype(float)
        smap_payload = X
    else:
        smap_payload = smap.payload_matrix()
    trace = tr.train(_with_payloads(smap, smap_payload), plan, model, rng_seed=11, lr=0.1)
    expected = _reference_gd(smap_payload, np.zeros(4), 40, 0.5, float(n), 0.1, model)
    np.testing.assert_array_equal(trace.theta, expected)
    assert trace.batch_sizes == [n] * 40


def _with_payloads(smap, X):
    from secretprot.domain import ExampleRecord, SecretMap
    ex = [ExampleRecord(e.id, e.secret_ids, tuple(row)) for e, row in zip(smap.examples, X)]
    return SecretMap.build(ex, smap.secrets)


def test_minibatch_sgd_reduction():
    # equal rho and sigma = 0: each step uses exactly the drawn Poisson batch
    smap = tr.make_synthetic(80, 4, 1.0, 3, seed=8)
    X = smap.payload_matrix()
    plan = _plan(smap.n, np.full(smap.n, 0.25), 20.0, 30, 0.0)
    model = tr.LinearRegression(3)
    trace = tr.train(smap, plan, model, rng_seed=5, lr=0.05)
    sample_rng, _ = tr.rng_streams(5)
    theta = np.zeros(3)
    for _ in range(30):
        idx = np.flatnonzero(sample_rng.random(smap.n) < 0.25)
        acc = np.zeros(3)
        for i in idx:
            acc = acc + tr.clip(model.loss_grad(theta, X[i]), 1.0)
        theta = theta - 0.05 * (acc / 20.0)
    np.testing.assert_array_equal(trace.theta, theta)


def test_batch_size_concentration():
    smap = tr.make_synthetic(500, 5, 1.0, 2, seed=1)
    B = 25.0
    probs = np.random.default_rng(0).dirichlet(np.ones(smap.n)) * B
    probs = np.minimum(probs, 1.0)
    plan = _plan(smap.n, probs, probs.sum(), 2000, 1.0)
    trace = tr.train(smap, plan, tr.LinearRegression(2), rng_seed=2, record_losses=False)
    assert abs(np.mean(trace.batch_sizes) - probs.sum()) <= 4 * math.sqrt(probs.sum())


def test_noise_variance():
    smap = tr.make_synthetic(100, 5, 1.0, 10, seed=1)
    B, sigma, C = 10.0, 2.5, 0.8
    plan = _plan(smap.n, np.full(smap.n, 0.1), B, 2000, sigma, C)
    trace = tr.train(smap, plan, tr.LinearRegression(10), rng_seed=4, lr=1e-4, record_losses=False)
    var = np.sum(np.square(trace.noise_norms)) / (2000 * 10)
    assert var == pytest.approx((C * sigma / B) ** 2, rel=0.05)


def test_bit_reproducible():
    smap = tr.make_synthetic(200, 8, 1.5, 5, seed=6)
    plan = _plan(smap.n, np.full(smap.n, 0.05), 10.0, 50, 1.3)
    a = tr.train(smap, plan, tr.LinearRegression(5), rng_seed=9)
    b = tr.train(smap, plan, tr.LinearRegression(5), rng_seed=9)
    assert a.to_dict() == b.to_dict()
    c = tr.train(smap, plan, tr.LinearRegression(5), rng_seed=10)
    assert c.to_dict() != a.to_dict()


def test_sampling_stream_independent_of_noise():
    smap = tr.make_synthetic(200, 8, 1.5, 5, seed=6)
    quiet = _plan(smap.n, np.full(smap.n, 0.05), 10.0, 50, 0.0)
    loud = _plan(smap.n, np.full(smap.n, 0.05), 10.0, 50, 5.0)
    a = tr.train(smap, quiet, tr.LinearRegression(5), rng_seed=1, record_losses=False)
    b = tr.train(smap, loud, tr.LinearRegression(5), rng_seed=1, record_losses=False)
    assert a.batch_sizes == b.batch_sizes


def test_plan_mismatch():
    smap = tr.make_synthetic(20, 3, 1.0, 2, seed=0)
    with pytest.raises(ValueError):
        tr.train(smap, _plan(19, np.ones(19), 1.0, 1, 0.0), tr.LinearRegression(2))


def test_synthetic_reproducible():
    a = tr.make_synthetic(1000, 50, 1.5, 10, seed=7)
    b = tr.make_synthetic(1000, 50, 1.5, 10, seed=7)
    assert a == b and a.n == 1000 and a.m == 50
    assert all(0.0002 <= s.posterior_r <= 0.001 and s.prior_p == 1e-10 for s in a.secrets)
    assert a.payload_matrix().shape == (1000, 11)


def test_synthetic_zero_skew_is_near_uniform():
    smap = tr.make_synthetic(5000, 10, 1e-9, 2, seed=1, overlap=0.0)
    sizes = np.array([len(smap.incidence[s.id]) for s in smap.secrets])
    assert sizes.min() > 0.8 * 500 and sizes.max() < 1.2 * 500


@pytest.mark.parametrize("skew", [0.8, 1.5])
def test_synthetic_follows_power_law(skew):
    n, m = 20000, 30
    smap = tr.make_synthetic(n, m, skew, 1, seed=11)
    sizes = np.array([len(smap.incidence[s.id]) for s in smap.secrets], dtype=float)
    expected = tr.expected_incidence(n, m, skew, 0.1)
    assert chisquare(sizes, expected * sizes.sum() / expected.sum()).pvalue > 1e-3
