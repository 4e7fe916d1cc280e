import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from locdep.exact import build_table, exact_fisher_info, exact_log_normalizer, exact_mean_value, exact_mle
from locdep.graph import BlockPartition, LocalGraph, SubgraphRef
from locdep.mcmle import (FitConfig, FitStatus, UnusableInformationWarning, effective_sample_size,
                          fit, importance_weights, independent_edge_init, is_gradient,
                          is_information, is_log_ratio, is_standard_error)
from locdep.model import (BetweenEdgesPerPair, BetweenEdgesTotal, ModelSpec, ParamVector,
                          WithinEdgesPerBlock, WithinEdgesTotal, WithinTransitiveEdgesTotal,
                          compute_statistics)
from locdep.rng import stream_key
from locdep.sampler import McmcConfig, run_chain, sample_graph

from conftest import random_graph

B0 = SubgraphRef(0, 0)
EDGES_TRI = [WithinEdgesTotal(), WithinTransitiveEdgesTotal()]


def test_gradient_at_theta0_is_observed_minus_mean():
    rng = np.random.default_rng(0)
    S = rng.integers(0, 10, (50, 3)).astype(float)
    obs = np.array([4.0, 5.0, 6.0])
    th = np.array([0.3, -0.2, 0.1])
    assert np.allclose(is_gradient(th, th, obs, S), obs - S.mean(axis=0), atol=1e-12)
    assert np.allclose(is_information(th, th, S), np.cov(S, rowvar=False, ddof=0), atol=1e-10)


def test_degenerate_sample_gradient():
    S = np.tile([2.0, 3.0], (20, 1))
    for th in ([0, 0], [3, -7], [-40, 40]):
        assert is_gradient(np.array(th, float), np.zeros(2), [5, 5], S).tolist() == [3, 2]


def test_empty_sample_errors():
    with pytest.raises(ValueError):
        is_gradient([0.0], [0.0], [1.0], np.zeros((0, 1)))
    with pytest.raises(ValueError):
        is_information([0.0], [0.0], np.zeros((0, 1)))


def test_single_sample_information_unusable():
    with pytest.warns(UnusableInformationWarning):
        info = is_information([0.5], [0.0], [[3.0]])
    assert info.tolist() == [[0.0]]


def test_ess_examples():
    assert effective_sample_size(np.full(100, 0.01)) == pytest.approx(100)
    assert effective_sample_size([1.0] + [0.0] * 9) == pytest.approx(1)
    assert effective_sample_size([0.5, 0.5] + [0.0] * 8) == pytest.approx(2)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10**6), scale=st.floats(0.01, 50))
def test_weights_normalized_and_ess_in_range(seed, scale):
    rng = np.random.default_rng(seed)
    S = rng.normal(size=(40, 2)) * scale
    w = importance_weights(rng.normal(size=2), np.zeros(2), S)
    assert abs(w.sum() - 1) <= 1e-12
    assert 1 - 1e-9 <= effective_sample_size(w) <= 40 + 1e-9
    info = is_information(rng.normal(size=2), np.zeros(2), S)
    assert np.allclose(info, info.T) and np.linalg.eigvalsh(info).min() >= -1e-9 * max(1, np.abs(info).max())


def _block4_samples(theta0, n, seed=0):
    spec = ModelSpec(BlockPartition([range(4)]), EDGES_TRI)
    res = run_chain(spec, np.asarray(theta0, float), B0, n, 60, 6, stream_key(seed, 77))
    return spec, build_table(spec, B0), res.stats.astype(float)


def test_gradient_matches_exact_away_from_theta0():
    theta0 = np.array([-0.5, 0.5])
    spec, table, S = _block4_samples(theta0, 200_000)
    obs = np.array([3.0, 3.0])
    rng = np.random.default_rng(1)
    for _ in range(5):
        th = theta0 + rng.uniform(-0.5, 0.5, 2)
        g = is_gradient(th, theta0, obs, S)
        exact = obs - exact_mean_value(table, th)
        se = is_standard_error(th, theta0, S)
        assert np.all(np.abs(g - exact) <= 3 * se), (g, exact, se)


def test_information_matches_exact():
    theta0 = np.array([-0.5, 0.5])
    _, table, S = _block4_samples(theta0, 200_000, seed=3)
    th = theta0 + np.array([0.2, -0.3])
    info = is_information(th, theta0, S)
    assert np.allclose(info, exact_fisher_info(table, th), rtol=0.05, atol=0.02)


def test_importance_identity_converges():
    theta0 = np.array([-0.5, 0.5])
    th = np.array([-0.2, 0.2])
    _, table, S = _block4_samples(theta0, 100_000, seed=4)
    target = exact_log_normalizer(table, th) - exact_log_normalizer(table, theta0)
    errs = []
    for n in (1_000, 10_000, 100_000):
        errs.append(abs(is_log_ratio(th, theta0, S[:n]) - target))
    assert errs[2] < errs[0] and errs[2] < 0.01


def test_independent_init_is_closed_form():
    p = BlockPartition([range(4), range(4, 8)])
    spec = ModelSpec(p, [WithinEdgesPerBlock(0), WithinEdgesPerBlock(1)])
    g = LocalGraph.from_edges(p, [(0, 1), (4, 5), (5, 6), (6, 7)])
    init = independent_edge_init(g, spec, "within")
    assert init == pytest.approx([math.log(1 / 5), math.log(3 / 3)], abs=1e-9)


def test_fit_independent_sbm_closed_form():
    p = BlockPartition.equal_blocks(3, 6)
    spec = ModelSpec(p, [WithinEdgesPerBlock(k) for k in range(3)],
                     [BetweenEdgesPerPair(0, 1), BetweenEdgesPerPair(0, 2), BetweenEdgesPerPair(1, 2)])
    truth = ParamVector(np.array([-1.0, 0.0, 0.5]), np.array([-2.0, -1.5, -2.5]))
    g = sample_graph(spec, truth, McmcConfig(seed=8)).graphs[0]
    res = fit(g, spec, FitConfig(n_mcmc=50_000, seed=1))
    assert res.status is FitStatus.CONVERGED
    s = compute_statistics(g, spec)
    D = np.array([15, 15, 15, 36, 36, 36])
    closed = np.log(s / (D - s))
    assert np.max(np.abs(res.theta_hat.full - closed)) <= 0.02


def test_fit_matches_exact_mle():
    p = BlockPartition.equal_blocks(20, 4)
    spec = ModelSpec(p, EDGES_TRI)
    g = sample_graph(spec, np.array([-0.5, 0.5]), McmcConfig(seed=21)).graphs[0]
    ex = exact_mle(g, spec)
    res = fit(g, spec, FitConfig(n_mcmc=50_000, seed=2))
    assert res.status is FitStatus.CONVERGED
    assert np.linalg.norm(res.theta_hat.theta_w - ex.theta.theta_w) <= 0.05
    assert all(0 < e <= 50_000 + 1e-6 for e in res.ess_trace)
    for info in (res.info_w,):
        assert np.allclose(info, info.T) and np.linalg.eigvalsh(info).min() >= 0


def test_fit_nonexistence_complete_block():
    p = BlockPartition.equal_blocks(2, 4)
    spec = ModelSpec(p, [WithinEdgesPerBlock(0), WithinEdgesPerBlock(1)])
    edges = [(i, j) for i in range(4) for j in range(i + 1, 4)] + [(4, 5), (6, 7)]
    res = fit(LocalGraph.from_edges(p, edges), spec, FitConfig(n_mcmc=200))
    assert res.status is FitStatus.NONEXISTENCE


def test_separability_bit_identical():
    p = BlockPartition.equal_blocks(3, 5)
    g = random_graph(p, 0.4, 5)
    cfg = FitConfig(n_mcmc=2000, seed=3)
    w_only = fit(g, ModelSpec(p, EDGES_TRI), cfg)
    both = fit(g, ModelSpec(p, EDGES_TRI, [BetweenEdgesTotal()]), cfg)
    b_only = fit(g, ModelSpec(p, [], [BetweenEdgesTotal()]), cfg)
    assert np.array_equal(w_only.theta_hat.theta_w, both.theta_hat.theta_w)
    assert np.array_equal(b_only.theta_hat.theta_b, both.theta_hat.theta_b)


def test_fit_reproducible_across_threads():
    p = BlockPartition([range(5), range(5, 11), range(11, 15)])
    g = random_graph(p, 0.4, 6)
    spec = ModelSpec(p, EDGES_TRI, [BetweenEdgesTotal()])
    a = fit(g, spec, FitConfig(n_mcmc=1000, seed=4, threads=1))
    b = fit(g, spec, FitConfig(n_mcmc=1000, seed=4, threads=3))
    assert np.array_equal(a.theta_hat.full, b.theta_hat.full)
    assert np.array_equal(a.info_hat, b.info_hat)
