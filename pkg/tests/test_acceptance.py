"""Acceptance criteria 1-11, each at its stated tolerance and time budget.

Every test records one PASS/FAIL line, collected in the terminal summary.
"""

import math
import time

import numpy as np
import pytest

from oracles import brute_poisson_binomial, lp_vertex_optimum, mc_round_kl, quad_round_kl, sigma_grid_scan
from secretprot import accountant as acct
from secretprot import attack
from secretprot import lp as lpmod
from secretprot import pipeline as pl
from secretprot import trainer as tr
from secretprot.cli import DEFAULT_C_VALUES, sweep_rows
from secretprot.divergence import bern_kl, budget_from_targets, invert_posterior
from secretprot.domain import ExampleRecord, RunConfig, SecretMap, SecretSpec


def test_criterion_01_fano_round_trip(acceptance):
    rng = np.random.default_rng(1)
    p = np.exp(rng.uniform(math.log(1e-10), math.log(0.5), size=1000))
    r = p + rng.uniform(0, 1, size=1000) * (1 - p)
    start = time.perf_counter()
    err = max(abs(invert_posterior(pi, bern_kl(ri, pi)) - ri) for pi, ri in zip(p, r))
    elapsed = time.perf_counter() - start
    ok = err <= 1e-9 and elapsed < 1.0
    assert acceptance(1, ok, f"max |r_hat - r| = {err:.2e} (<= 1e-9), {elapsed:.2f}s (< 1s)")


def test_criterion_02_gaussian_identity(acceptance):
    start = time.perf_counter()
    worst = 0.0
    for sigma in (0.5, 1.0, 2.0, 10.0):
        kl = acct.round_kl(acct.RoundMechanism(acct.poisson_binomial([1.0]), sigma))
        worst = max(worst, abs(kl * 2 * sigma**2 - 1.0))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-6 and elapsed < 1.0
    assert acceptance(2, ok, f"max rel err = {worst:.2e} (<= 1e-6), {elapsed:.2f}s (< 1s)")


@pytest.mark.slow
def test_criterion_03_mixture_kl_monte_carlo(acceptance):
    rng = np.random.default_rng(3)
    start = time.perf_counter()
    worst_z, misses, checks = 0.0, 0, 0
    for _ in range(20):
        k = int(rng.integers(1, 11))
        pmf = rng.dirichlet(np.ones(k + 1))
        for sigma in (0.5, 1.0, 4.0):
            kl = acct.round_kl(acct.RoundMechanism(acct.DiscretePMF(pmf), sigma))
            est, se = mc_round_kl(pmf, sigma, 10_000_000, rng)
            z = abs(kl - est) / se
            worst_z = max(worst_z, z)
            misses += z > 3
            checks += 1
    elapsed = time.perf_counter() - start
    ok = misses == 0 and elapsed < 300
    assert acceptance(3, ok, f"{checks} comparisons, {misses} beyond 3 SE, max |z| = {worst_z:.2f}, "
                             f"{elapsed:.0f}s (< 300s)")


def test_criterion_04_poisson_binomial(acceptance):
    rng = np.random.default_rng(4)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        probs = rng.uniform(0, 1, size=int(rng.integers(0, 13)))
        got = acct.poisson_binomial(probs).probs
        worst = max(worst, float(np.max(np.abs(got - brute_poisson_binomial(probs)))))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-12 and elapsed < 10
    assert acceptance(4, ok, f"max entry err = {worst:.2e} (<= 1e-12), {elapsed:.2f}s (< 10s)")


def test_criterion_05_lp_vertex_enumeration(acceptance):
    rng = np.random.default_rng(5)
    start = time.perf_counter()
    gap = viol = 0.0
    for _ in range(200):
        n, m = int(rng.integers(1, 9)), int(rng.integers(1, 5))
        A = (rng.random((m, n)) < 0.5).astype(float)
        caps = rng.uniform(0, 3, size=m)
        caps[rng.random(m) < 0.15] = 0.0
        lp = lpmod.WeightLP(n, tuple(tuple(np.flatnonzero(row)) for row in A), caps)
        sol = lpmod.solve(lp)
        gap = max(gap, abs(sol.objective - lp_vertex_optimum(A, caps)))
        viol = max(viol, lpmod.max_violation(lp, sol.w))
    elapsed = time.perf_counter() - start
    ok = gap <= 1e-9 and viol <= 1e-9 and elapsed < 60
    assert acceptance(5, ok, f"max objective gap = {gap:.2e}, max violation = {viol:.2e} (<= 1e-9), "
                             f"{elapsed:.1f}s (< 60s)")


def test_criterion_06_extreme_c(acceptance):
    rng = np.random.default_rng(6)
    n, m = 50, 6
    examples = []
    for i in range(n):
        tags = {f"s{j}" for j in rng.choice(m, size=int(rng.integers(1, 3)), replace=False)}
        examples.append(ExampleRecord(f"x{i}", tags))
    secrets = [SecretSpec(f"s{j}", 1e-10, float(rng.uniform(2e-4, 1e-3))) for j in range(m)]
    smap = SecretMap.build(examples, secrets)
    budgets = {s.id: budget_from_targets(s) for s in secrets}
    # every cap c * mu_j above the largest group size
    c_loose = 2 * n / min(b.mu for b in budgets.values())
    loose = lpmod.solve(lpmod.build_lp(smap, budgets, c_loose)).w
    tight = lpmod.solve(lpmod.build_lp(smap, budgets, 1e-3)).w
    all_ones = bool(np.all(loose == 1.0))
    positive = int(np.sum(tight > 0))
    ok = all_ones and positive <= m
    assert acceptance(6, ok, f"(a) loose caps all w = 1: {all_ones}; "
                             f"(b) binding caps: {positive} positive weights (<= m = {m})")


def test_criterion_07_sigma_search(acceptance):
    rng = np.random.default_rng(7)
    rel_tol = pl.DEFAULT_REL_TOL
    start = time.perf_counter()
    worst = 0.0
    for _ in range(10):
        group = rng.uniform(0.01, 0.05, size=int(rng.integers(10, 61)))
        T = int(rng.integers(1000, 3001))
        mu = bern_kl(float(rng.uniform(2e-4, 1e-3)), 1e-10)
        pmf = acct.poisson_binomial(group)
        sigma = pl.calibrate_secret_sigma(group, T, mu, rel_tol)
        lo = math.sqrt(T * pmf.mean() ** 2 / (2 * mu))
        hi = math.sqrt(T * pmf.second_moment() / (2 * mu))
        grid = sigma_grid_scan(lambda s: T * quad_round_kl(pmf.probs, s), mu, lo, hi, 1e-3)
        worst = max(worst, abs(sigma - grid) / max(sigma, grid))
    closed = 0.0
    for T, mu in ((1, 0.5), (2000, 10.0), (500, 0.0072), (3, 2e-3)):
        exact = math.sqrt(T / (2 * mu))
        closed = max(closed, abs(pl.calibrate_secret_sigma([1.0], T, mu, rel_tol) - exact) / exact)
    elapsed = time.perf_counter() - start
    ok = worst <= rel_tol and closed <= rel_tol and elapsed < 120
    assert acceptance(7, ok, f"grid-scan rel diff = {worst:.2e}, closed-form rel err = {closed:.2e} "
                             f"(<= {rel_tol:g}), {elapsed:.0f}s (< 120s)")


def test_criterion_08_c_sweep_trend(acceptance):
    start = time.perf_counter()
    smap = tr.make_synthetic(n=2000, m=60, skew=1.5, dim=10, seed=7)
    config = RunConfig(batch_target=32, rounds=500, clip_norm=1.0, lp_constant=1.0, cap_scale=2e4)
    rows = sweep_rows(smap, config, DEFAULT_C_VALUES)
    frac = [r["fraction_retained"] for r in rows]
    sig = [r["sigma"] for r in rows]
    elapsed = time.perf_counter() - start
    mono_f = all(a <= b for a, b in zip(frac, frac[1:]))
    mono_s = all(a <= b for a, b in zip(sig, sig[1:]))
    ratio = sig[-1] / sig[0]
    ok = mono_f and mono_s and ratio >= 2 and elapsed < 600
    assert acceptance(8, ok, f"fraction nondecreasing: {mono_f}, sigma nondecreasing: {mono_s}, "
                             f"sigma(2^4)/sigma(2^-6) = {ratio:.1f} (>= 2), fraction at 2^4 = {frac[-1]:.3f}, "
                             f"{elapsed:.0f}s (< 600s)")


CONFIGS_9 = [
    ([1.0], 1, 0.05),
    ([0.5, 0.5], 2, 0.1),
    ([0.3], 4, 0.2),
    ([1.0, 0.2], 3, 0.3),
    ([0.7], 2, 0.05),
]


@pytest.mark.slow
def test_criterion_09_reconstruction_bound(acceptance):
    p, k, trials = 1e-2, 100, 1_000_000
    start = time.perf_counter()
    details, ok = [], True
    for i, (group, T, r) in enumerate(CONFIGS_9):
        sigma = pl.calibrate_secret_sigma(group, T, bern_kl(r, p))
        res = attack.simulate_game(attack.ReconstructionGame.uniform(k, group, sigma, T, trials), seed=900 + i)
        ok &= res.empirical_success <= res.certified_bound + 3 * res.stderr
        details.append(f"{res.empirical_success:.4f}<={res.certified_bound:.4f}")
    elapsed = time.perf_counter() - start
    ok &= elapsed < 600
    assert acceptance(9, ok, f"success vs bound: {', '.join(details)}, {elapsed:.0f}s (< 600s)")


def test_criterion_10_trainer_reductions(acceptance):
    smap = tr.make_synthetic(80, 5, 1.0, 4, seed=10)
    X = smap.payload_matrix()
    n = smap.n
    ones = lpmod.WeightVector(np.ones(n), float(n))
    C, lr, T = 0.5, 0.1, 30
    plan = pl.SamplingPlan(ones, np.ones(n), float(n), T, 0.0, C)
    model = tr.LinearRegression(4)
    got = tr.train(smap, plan, model, rng_seed=1, lr=lr).theta
    theta = np.zeros(4)
    for _ in range(T):
        acc = np.zeros(4)
        for x in X:
            acc = acc + tr.clip(model.loss_grad(theta, x), C)
        theta = theta - lr * (acc / n)
    exact = bool(np.array_equal(got, theta))

    B, sigma = 20.0, 3.0
    probs = np.full(n, B / n)
    noisy = pl.SamplingPlan(ones, probs, B, 2000, sigma, C)
    trace = tr.train(smap, noisy, tr.LinearRegression(4), rng_seed=2, lr=1e-4, record_losses=False)
    mean_batch = float(np.mean(trace.batch_sizes))
    batch_ok = abs(mean_batch - B) <= 4 * math.sqrt(B)
    var = float(np.sum(np.square(trace.noise_norms)) / (2000 * 4))
    target = (C * sigma / B) ** 2
    var_ok = abs(var / target - 1) <= 0.05
    ok = exact and batch_ok and var_ok
    assert acceptance(10, ok, f"bit-exact: {exact}; mean batch {mean_batch:.2f} vs B={B:g} (tol {4 * math.sqrt(B):.1f}); "
                              f"noise var ratio {var / target:.4f} (within 5%)")


def test_criterion_11_pld_blowup(acceptance):
    sigma = 1.0
    single = acct.pld_blowup_diagnostic(acct.RoundMechanism(acct.poisson_binomial([0.01]), sigma), 1e-3)
    group = acct.pld_blowup_diagnostic(acct.RoundMechanism(acct.poisson_binomial([0.01] * 100), sigma), 1e-3)
    ok = abs(single.total_blowup_mass - 1) <= 0.01 and group.total_blowup_mass > 10
    assert acceptance(11, ok, f"single mass = {single.total_blowup_mass:.6f} (within 1% of 1), "
                              f"group-of-100 mass = {group.total_blowup_mass:.3g} (> 10)")
