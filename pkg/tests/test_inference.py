import math

import numpy as np
import pytest
from scipy import stats as sps

from locdep.errors import ModelError, NumericalError
from locdep.graph import BlockPartition, LocalGraph
from locdep.inference import (average_outer_deviation, fisher_hat, matrix_inv_sqrt,
                              normal_quantile, qq_max_deviation, qq_points, wald_ci)
from locdep.model import BetweenEdgesTotal, ModelSpec, ParamVector, WithinEdgesTotal
from locdep.sampler import McmcConfig, sample_graph

from conftest import random_graph


def test_fisher_hat_identical_blocks_is_zero():
    p = BlockPartition.equal_blocks(3, 3)
    g = LocalGraph.from_edges(p, [(0, 1), (3, 4), (6, 7)])
    est = fisher_hat(g, ModelSpec(p, [WithinEdgesTotal()]))
    assert est.i_w_avg.tolist() == [[0.0]]


def test_fisher_hat_two_blocks_arithmetic():
    p = BlockPartition.equal_blocks(2, 4)
    g = LocalGraph.from_edges(p, [(0, 1), (1, 2), (4, 5), (5, 6), (6, 7), (4, 7)])
    est = fisher_hat(g, ModelSpec(p, [WithinEdgesTotal()], [BetweenEdgesTotal()]))
    assert est.i_w_avg[0, 0] == pytest.approx(1.0)
    assert est.full_w[0, 0] == pytest.approx(2.0)
    assert est.i_b_avg.tolist() == [[0.0]]


def test_fisher_hat_needs_two_blocks():
    p = BlockPartition([range(4)])
    with pytest.raises(ModelError):
        fisher_hat(LocalGraph(p), ModelSpec(p, [WithinEdgesTotal()]))


def test_fisher_hat_invariant_to_block_order():
    p = BlockPartition([range(3), range(3, 7), range(7, 12)])
    g = random_graph(p, 0.5, 3)
    spec = ModelSpec(p, [WithinEdgesTotal()], [BetweenEdgesTotal()])
    est = fisher_hat(g, spec)
    p2 = p.relabel_blocks([2, 0, 1])
    g2 = LocalGraph.from_edges(p2, g.edges())
    est2 = fisher_hat(g2, ModelSpec(p2, [WithinEdgesTotal()], [BetweenEdgesTotal()]))
    assert np.allclose(est.i_w_avg, est2.i_w_avg) and np.allclose(est.i_b_avg, est2.i_b_avg)


def test_fisher_hat_independent_edges_mean():
    # block size a, edge probability pi: E[I_W] = (K-1)/K * C(a,2) pi (1-pi)
    a, K, pi = 5, 10, 0.3
    p = BlockPartition.equal_blocks(K, a)
    spec = ModelSpec(p, [WithinEdgesTotal()])
    theta = ParamVector(np.array([math.log(pi / (1 - pi))]), np.zeros(0))
    draws = sample_graph(spec, theta, McmcConfig(n_samples=2000, seed=5, interval_multiplier=3),
                         keep_graphs=False)
    per_block = np.stack([draws.subgraph_stats[r][:, 0] for r in p.within_refs()], axis=1)
    vals = np.array([average_outer_deviation(row[:, None])[0, 0] for row in per_block])
    target = 10 * pi * (1 - pi) * (K - 1) / K
    assert abs(vals.mean() - target) <= 3 * vals.std(ddof=1) / math.sqrt(vals.size)


def test_matrix_roots_examples():
    r = matrix_inv_sqrt(np.eye(3))
    assert np.allclose(r.sqrt, np.eye(3)) and np.allclose(r.inv_sqrt, np.eye(3))
    r = matrix_inv_sqrt(np.diag([4.0, 9.0]))
    assert np.allclose(r.sqrt, np.diag([2, 3])) and np.allclose(r.inv_sqrt, np.diag([0.5, 1 / 3]))
    with pytest.raises(NumericalError):
        matrix_inv_sqrt(np.diag([1.0, -1e-6]))


def test_matrix_roots_reconstruct():
    rng = np.random.default_rng(0)
    for d in (1, 2, 5, 17, 40):
        A = rng.normal(size=(d, d))
        S = A @ A.T + 0.1 * np.eye(d)
        r = matrix_inv_sqrt(S)
        assert np.linalg.norm(r.sqrt @ r.sqrt - S) <= 1e-8 * np.linalg.norm(S)
        assert np.allclose(r.sqrt @ r.inv_sqrt, np.eye(d), atol=1e-8)


def test_wald_examples():
    assert normal_quantile(0.05) == pytest.approx(1.959964, abs=5e-7)
    ci = wald_ci(np.zeros(2), np.eye(2), 0.05)
    assert ci[0] == pytest.approx([-1.959964, 1.959964], abs=1e-6)
    ci = wald_ci(ParamVector(np.array([1.0]), np.zeros(0)), [[4.0]], 0.05)
    assert ci[0] == pytest.approx([1 - 1.959964 / 2, 1 + 1.959964 / 2], abs=1e-6)


def test_wald_singular_names_coordinate():
    S = np.array([[1.0, 0.0], [0.0, 0.0]])
    with pytest.raises(NumericalError, match="transitive"):
        wald_ci(np.zeros(2), S, 0.05, names=["edges", "transitive"])
    with pytest.raises(ValueError):
        wald_ci(np.zeros(1), np.eye(1), 1.5)


def test_qq_examples():
    n = 50
    theo = sps.norm.ppf((np.arange(1, n + 1) - 0.5) / n)
    pts = qq_points(theo[::-1])
    assert np.max(np.abs(pts[:, 1] - pts[:, 0])) <= 1e-12
    pts = qq_points(np.full(7, 2.5))
    assert np.all(pts[:, 1] == 2.5)
    assert qq_max_deviation(qq_points([0.0])) == 0.0
    with pytest.raises(ValueError):
        qq_points([])
