import itertools
import math

import numpy as np
import pytest

from locdep.errors import EnumerationCapError
from locdep.exact import (ExactModel, ExactStatus, build_table, exact_fisher_info,
                          exact_log_normalizer, exact_mean_value, exact_mle, exact_probabilities)
from locdep.graph import BlockPartition, LocalGraph, SubgraphRef
from locdep.model import (BetweenEdgesTotal, ModelSpec, WithinEdgesByNodeGroup,
                          WithinEdgesPerBlock, WithinEdgesTotal, WithinTransitiveEdgesTotal,
                          BetweenEdgesPerPair, compute_statistics)
from locdep.sampler import McmcConfig, sample_graph

from conftest import random_graph

EDGES_TRI = [WithinEdgesTotal(), WithinTransitiveEdgesTotal()]
B0 = SubgraphRef(0, 0)

# Brute-force value of log sum_x exp(-1 * edges + 0.5 * transitive) over the 8
# graphs on 3 nodes, frozen from an independent loop (see test below).
PSI_TRI3 = 1.005317332505872


def brute_psi(a, theta):
    """Independent enumeration with plain loops over all graphs on a nodes."""
    pairs = list(itertools.combinations(range(a), 2))
    terms = []
    for bits in itertools.product((0, 1), repeat=len(pairs)):
        e = {p for p, b in zip(pairs, bits) if b}
        adj = lambda i, j: (min(i, j), max(i, j)) in e
        tri = sum(1 for (i, j) in e if any(adj(i, h) and adj(j, h) for h in range(a) if h not in (i, j)))
        terms.append(theta[0] * len(e) + theta[1] * tri)
    return math.log(sum(math.exp(t) for t in terms))


def tri_table(a=3):
    p = BlockPartition([range(a)])
    spec = ModelSpec(p, EDGES_TRI)
    return spec, build_table(spec, B0)


def test_frozen_psi_matches_brute_force():
    assert brute_psi(3, (-1.0, 0.5)) == pytest.approx(PSI_TRI3, abs=1e-13)
    closed = math.log(1 + 3 * math.exp(-1) + 3 * math.exp(-2) + math.exp(-3 + 1.5))
    assert closed == pytest.approx(PSI_TRI3, abs=1e-13)


def test_psi_edges_only():
    spec = ModelSpec(BlockPartition([range(3)]), [WithinEdgesTotal()])
    t = build_table(spec, B0)
    assert exact_log_normalizer(t, [0.0]) == pytest.approx(3 * math.log(2), abs=1e-12)
    assert exact_log_normalizer(t, [0.5]) == pytest.approx(3 * math.log1p(math.exp(0.5)), abs=1e-12)
    assert exact_log_normalizer(t, [0.5]) == pytest.approx(2.9223, abs=1e-4)


def test_psi_transitive_block_of_three():
    _, t = tri_table()
    assert exact_log_normalizer(t, [-1.0, 0.5]) == pytest.approx(PSI_TRI3, abs=1e-12)


@pytest.mark.parametrize("a", [4, 5])
def test_psi_against_brute_force(a):
    spec, t = tri_table(a)
    rng = np.random.default_rng(a)
    for _ in range(3):
        th = rng.uniform(-2, 2, 2)
        assert exact_log_normalizer(t, th) == pytest.approx(brute_psi(a, th), abs=1e-10)


def test_mean_value_examples():
    spec = ModelSpec(BlockPartition([range(3)]), [WithinEdgesTotal()])
    t = build_table(spec, B0)
    assert exact_mean_value(t, [0.0])[0] == pytest.approx(1.5)
    assert exact_mean_value(t, [math.log(0.25 / 0.75)])[0] == pytest.approx(0.75)
    # (edges, transitive) at 0: only the full triangle (prob 1/8) has
    # transitive edges, three of them
    _, t = tri_table()
    assert exact_mean_value(t, [0.0, 0.0]) == pytest.approx([1.5, 0.375], abs=1e-12)


def test_fisher_examples():
    spec = ModelSpec(BlockPartition([range(3)]), [WithinEdgesTotal()])
    t = build_table(spec, B0)
    assert exact_fisher_info(t, [0.0])[0, 0] == pytest.approx(0.75)
    # node group 2 absent from the block: constant statistic
    p = BlockPartition([range(3)], node_groups=[0, 0, 0], n_node_groups=2)
    with pytest.warns(UserWarning, match="not minimal"):
        spec = ModelSpec(p, [WithinEdgesByNodeGroup(0), WithinEdgesByNodeGroup(1)])
    info = exact_fisher_info(build_table(spec, B0), [0.3, 0.1])
    assert info[1].tolist() == [0, 0] and info[:, 1].tolist() == [0, 0]


def test_probabilities_sum_to_one():
    _, t = tri_table(4)
    assert exact_probabilities(t, [0.2, -0.4]).sum() == pytest.approx(1, abs=1e-12)
    assert t.stats.shape == (64, 2)


def _fd_grad(f, x, h=1e-5):
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def test_gradient_and_hessian_by_finite_differences():
    p = BlockPartition([range(4)], node_groups=[0, 1, 0, 1])
    spec = ModelSpec(p, [WithinEdgesByNodeGroup(0), WithinEdgesByNodeGroup(1), WithinTransitiveEdgesTotal()])
    t = build_table(spec, B0)
    rng = np.random.default_rng(0)
    for _ in range(20):
        th = rng.uniform(-2, 2, 3)
        g = _fd_grad(lambda x: exact_log_normalizer(t, x), th)
        assert np.max(np.abs(g - exact_mean_value(t, th))) <= 1e-6
        H = np.array([_fd_grad(lambda x: exact_mean_value(t, x)[i], th) for i in range(3)])
        assert np.max(np.abs(H - exact_fisher_info(t, th))) <= 1e-6


def test_between_closed_form():
    p = BlockPartition([range(3), range(3, 7)])
    spec = ModelSpec(p, [WithinEdgesTotal()], [BetweenEdgesTotal()])
    t = build_table(spec, SubgraphRef(0, 1))
    for th in (-1.3, 0.0, 0.7):
        assert exact_log_normalizer(t, [th]) == pytest.approx(12 * math.log1p(math.exp(th)), abs=1e-12)


def test_cap_error():
    spec = ModelSpec(BlockPartition([range(7)]), EDGES_TRI)
    with pytest.raises(EnumerationCapError, match="21 edge variables"):
        build_table(spec, B0)


def test_mle_independent_sbm_closed_form():
    p = BlockPartition([range(4), range(4, 8)])
    spec = ModelSpec(p, [WithinEdgesPerBlock(0), WithinEdgesPerBlock(1)], [BetweenEdgesPerPair(0, 1)])
    g = LocalGraph.from_edges(p, [(0, 1), (1, 2), (4, 5), (4, 6), (5, 6), (6, 7), (0, 4), (1, 5), (2, 7)])
    res = exact_mle(g, spec)
    logit = lambda d: math.log(d / (1 - d))
    assert res.status is ExactStatus.CONVERGED
    assert res.theta.full == pytest.approx([logit(2 / 6), logit(4 / 6), logit(3 / 16)], abs=1e-8)


def test_mle_complete_block_boundary():
    p = BlockPartition([range(4), range(4, 8)])
    spec = ModelSpec(p, [WithinEdgesPerBlock(0), WithinEdgesPerBlock(1)])
    edges = list(itertools.combinations(range(4), 2)) + [(4, 5)]
    res = exact_mle(LocalGraph.from_edges(p, edges), spec)
    assert res.status is ExactStatus.SUSPECTED_NONEXISTENCE


def test_mle_stationarity():
    p = BlockPartition.equal_blocks(10, 4)
    spec = ModelSpec(p, EDGES_TRI)
    g = random_graph(p, 0.45, 2)
    res = exact_mle(g, spec)
    assert res.status is ExactStatus.CONVERGED
    model = ExactModel(spec)
    s = compute_statistics(g, spec)
    assert np.max(np.abs(s - model.mean_value("within", res.theta.theta_w))) <= 1e-6


def test_mle_consistency_monte_carlo():
    # block size 4, K = 50: the average of exact MLEs over simulated graphs
    # sits near the truth
    p = BlockPartition.equal_blocks(50, 4)
    spec = ModelSpec(p, EDGES_TRI)
    truth = np.array([-0.5, 0.5])
    model = ExactModel(spec)
    ests = []
    for r in range(40):
        g = sample_graph(spec, truth, McmcConfig(seed=11), replication=r, empty_between=True).graphs[0]
        res = exact_mle(g, spec, model=model)
        if res.status is ExactStatus.CONVERGED:
            ests.append(res.theta.theta_w)
    ests = np.array(ests)
    assert len(ests) >= 35
    se = ests.std(axis=0, ddof=1) / math.sqrt(len(ests))
    assert np.all(np.abs(ests.mean(axis=0) - truth) <= 4 * se + 0.05)
