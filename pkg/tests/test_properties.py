"""Property tests for the invariants of every module."""

import os
import tempfile

import numpy as np
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ocpbandit.config import RunConfig, parse_config, serialize_config
from ocpbandit.environments import EnvSpec, MemoryEnv, ReplayReader, StepTruth, count_set_sizes, write_replay
from ocpbandit.grid_loss import (LossParams, ThresholdGrid, d_term, gain_tables, loss, loss_row, miscoverage_row,
                                 normalized_gain, pseudo_gain)
from ocpbandit.harness import (best_arm, inefficiency, lemma1_check, miscoverage_rate, regret, run,
                               theorem_bound_rhs)
from ocpbandit.learners import (Feedback, HyperParams, Learner, estimator_bandit, estimator_unlock,
                                estimator_unlock_plus, strategy)
from ocpbandit.oracle import TinyInstance

alphas = st.floats(0.001, 0.499)
cs = st.floats(0.01, 200.0)
scales = st.floats(1e-6, 1.0)
units = st.floats(0.0, 1.0)
Ks = st.integers(2, 60)
hypers = st.builds(HyperParams, eta=st.floats(1e-4, 2.0), gamma=st.floats(1e-3, 0.999),
                   beta=st.floats(1e-4, 1.0))
FAST = settings(max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])


@st.composite
def loss_setups(draw):
    return (ThresholdGrid.uniform(draw(Ks)), LossParams(draw(alphas), draw(cs), draw(scales)), draw(units))


@st.composite
def probs(draw, K=None):
    K = draw(Ks) if K is None else K
    G = draw(arrays(float, K, elements=st.floats(-50, 50)))
    return strategy(G, draw(hypers))


# --------------------------------------------------------------------------
# grid and loss

@given(loss_setups())
def test_miscoverage_monotone(setup):
    grid, _, f = setup
    assert np.all(np.diff(miscoverage_row(f, grid)) >= 0)


@given(loss_setups())
def test_loss_ordering(setup):
    grid, params, f = setup
    m = miscoverage_row(f, grid)
    row = loss_row(f, grid, params)
    cov, mis = row[m == 0], row[m == 1]
    if mis.size:
        assert cov.max() <= mis.min()
    assert np.all(np.diff(cov) <= 0)
    assert np.all(np.diff(mis) >= 0)


@given(loss_setups())
def test_gains_in_unit_interval(setup):
    grid, params, _ = setup
    g_cov, g_mis = gain_tables(grid, params)
    q = pseudo_gain(grid.values, params)
    for g in (g_cov, g_mis, q):
        assert np.all((g >= 0) & (g <= 1))


@given(alphas, cs, scales, units, units)
def test_pseudo_gain_dominance(a, c, s, x, y):
    p = LossParams(a, c, s)
    lo, hi = min(x, y), max(x, y)
    assert pseudo_gain(lo, p) >= normalized_gain(loss(hi, 1, p), p)


@given(alphas)
def test_d_gap(a):
    p = LossParams(a)
    assert abs(d_term(1, p) - d_term(0, p) - (1 - a) * (1 - 2 * a)) <= 1e-12


# --------------------------------------------------------------------------
# learners

@given(arrays(float, st.integers(2, 80), elements=st.floats(-1e6, 1e6)), hypers)
def test_strategy_valid(G, hyper):
    p = strategy(G, hyper)
    assert abs(p.sum() - 1.0) <= 1e-12
    assert p.min() >= hyper.gamma / G.size - 1e-15


@given(arrays(float, st.integers(2, 40), elements=st.floats(-100, 100)), hypers, st.floats(-1e3, 1e3))
def test_strategy_shift_invariant(G, hyper, shift):
    assert np.max(np.abs(strategy(G, hyper) - strategy(G + shift, hyper))) <= 1e-12


@given(probs(), st.data(), units, st.floats(1e-4, 1.0))
def test_bandit_identity(p, data, g, beta):
    arm = data.draw(st.integers(0, p.size - 1))
    est = estimator_bandit(arm, g, p, beta)
    assert abs(float(p @ est) - (g + beta * p.size)) <= 1e-12 * max(1.0, g + beta * p.size)


@st.composite
def estimator_cases(draw):
    p = draw(probs())
    K = p.size
    grid = ThresholdGrid.uniform(K)
    params = LossParams(draw(alphas), draw(cs), draw(scales))
    f = draw(units)
    n_cov = grid.covered_count(f)
    m = draw(st.integers(0, 1)) if n_cov < K else 0
    arm = draw(st.integers(0, n_cov - 1)) if m == 0 else draw(st.integers(n_cov, K - 1))
    g_cov, g_mis = gain_tables(grid, params)
    gains = np.where(miscoverage_row(f, grid) == 1, g_mis, g_cov)
    return p, grid, params, f, arm, m, gains, g_mis, draw(st.floats(1e-4, 1.0))


@given(estimator_cases())
def test_estimators_nonnegative(case):
    p, grid, params, f, arm, m, gains, g_mis, beta = case
    cov = miscoverage_row(f, grid) == 0
    for est in (estimator_bandit(arm, gains[arm], p, beta),
                estimator_unlock(arm, m, gains, p, beta, covered=cov),
                estimator_unlock_plus(arm, m, gains, g_mis, p, beta, covered=cov)):
        assert np.all(np.isfinite(est)) and np.all(est >= 0)


@given(estimator_cases())
def test_unlock_plus_offsets(case):
    # with m = 0 every covered arm carries a larger exploration offset than any uncovered one
    p, grid, params, f, arm, m, gains, g_mis, beta = case
    if m:
        return
    cov = miscoverage_row(f, grid) == 0
    n = int(cov.sum())
    zero = np.zeros_like(gains)
    offsets = estimator_unlock_plus(arm, 0, zero, zero, p, beta, covered=cov)
    if n < p.size:
        assert offsets[:n].min() > offsets[n:].max()


@FAST
@given(st.integers(2, 12), st.integers(0, 2**32 - 1), hypers, alphas)
def test_singleton_unlock_is_bandit(K, seed, hyper, a):
    grid = ThresholdGrid.uniform(K)
    params = LossParams(a, 40, 0.05)
    la = run(EnvSpec("iid"), "bandit", grid, params, hyper, 60, seed=seed, keep_strategies=True)
    lb = run(EnvSpec("iid"), "unlock", grid, params, hyper, 60, seed=seed, keep_strategies=True, force_singleton=True)
    assert np.array_equal(la.arm, lb.arm) and np.array_equal(la.strategies, lb.strategies)


@given(probs(), st.data())
def test_learner_observe_finite(p, data):
    K = p.size
    grid = ThresholdGrid.uniform(K)
    lr = Learner("unlock-plus", grid, LossParams(0.1, 40, 0.01), HyperParams(0.1, 0.2, 0.05))
    arm = data.draw(st.integers(0, K - 1))
    f = data.draw(units)
    fb = Feedback(0, f) if grid.values[arm] <= f else Feedback(1)
    lr.strategy()
    assert np.all(np.isfinite(lr.observe(arm, fb)))


# --------------------------------------------------------------------------
# environments and replay

@st.composite
def truths(draw):
    K = draw(st.integers(2, 10))
    grid = ThresholdGrid.uniform(K)
    n = draw(st.integers(1, 20))
    out = []
    for t in range(1, n + 1):
        scores = draw(arrays(float, draw(st.integers(1, 12)), elements=units))
        f = float(np.round(scores[0], 9))
        out.append(StepTruth(t, f, count_set_sizes(np.r_[f, scores[1:]], grid)))
    return grid, out


@given(truths())
def test_steptruth_invariants(case):
    grid, seq = case
    for tr in seq:
        tr.validate()
        cov = miscoverage_row(tr.f_star, grid) == 0
        assert np.all(tr.set_sizes[cov] >= 1)


@given(truths())
def test_replay_round_trip(case):
    grid, seq = case
    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "r.csv")
        write_replay(path, seq)
        back = list(ReplayReader(path, grid.K))
    assert len(back) == len(seq)
    for a, b in zip(seq, back):
        assert a.t == b.t and a.f_star == b.f_star and np.array_equal(a.set_sizes, b.set_sizes)


# --------------------------------------------------------------------------
# harness metrics against recounts

@FAST
@given(st.integers(0, 2**32 - 1), st.sampled_from(["bandit", "unlock", "unlock-plus"]))
def test_metrics_recount(seed, variant):
    inst = TinyInstance.random(np.random.default_rng(seed))
    log = run(MemoryEnv(inst.grid, inst.truths()), variant, inst.grid, inst.params,
              HyperParams(0.2, 0.3, 0.05), inst.T, seed=seed)
    m = [int(inst.f_star[t] < inst.grid.values[a]) for t, a in enumerate(log.arm)]
    played = [inst.losses[t, a] for t, a in enumerate(log.arm)]
    sizes = [inst.set_sizes[t, a] for t, a in enumerate(log.arm)]
    totals = inst.losses.sum(axis=0)
    assert abs(miscoverage_rate(log) - sum(m) / inst.T) <= 1e-12
    assert abs(inefficiency(log) - sum(sizes) / inst.T) <= 1e-12
    assert abs(regret(log) - (sum(played) - totals.min())) <= 1e-12
    assert best_arm(log)[0] == int(np.argmin(totals))
    # the min comparator dominates the pi = 0 comparator
    assert regret(log) >= sum(played) - totals[0] - 1e-12
    assert lemma1_check(log, inst.params).passed
    assert np.all(log.barrier)


@FAST
@given(st.integers(0, 2**32 - 1), st.sampled_from(["bandit", "unlock", "unlock-plus"]),
       st.sampled_from(["iid", "exponent", "shift", "adaptive"]), st.floats(0.05, 0.45))
def test_lemma_and_bound_on_runs(seed, variant, env, a):
    grid = ThresholdGrid.uniform(8)
    params = LossParams.for_horizon(a, 40, 300)
    log = run(EnvSpec(env), variant, grid, params, HyperParams(0.05, 0.3, 0.02), 300, seed=seed)
    assert lemma1_check(log, params).passed
    rep = theorem_bound_rhs(variant, 8, 300, 0.05, params, log)
    assert rep.rhs >= miscoverage_rate(log) - a


# --------------------------------------------------------------------------
# config

@given(st.sampled_from(["bandit", "exp3p", "unlock", "unlock-plus"]), st.integers(2, 500),
       st.integers(1, 10**6), alphas, st.floats(0.1, 100), st.floats(0.1, 2), st.floats(0.001, 0.999),
       st.integers(0, 10**6), st.integers(1, 100), st.none() | st.floats(0, 0.999))
def test_config_round_trip(alg, K, T, a, c, rho, delta, seed, seeds, gamma):
    cfg = RunConfig(algorithm=alg, K=K, T=T, alpha=a, c=c, rho=rho, delta=delta, seed=seed, seeds=seeds,
                    gamma_override=gamma)
    assert parse_config(serialize_config(cfg)) == cfg
