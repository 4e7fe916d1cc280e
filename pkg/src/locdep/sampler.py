"""Edge-toggle Metropolis sampling of block-based subgraphs.

Subgraphs are independent under the model, so each one runs its own chain
on its own counter-based stream keyed by (seed, purpose, replication,
subgraph index).  Output never depends on the number of worker threads.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ._kernels import pack_rows, toggle_chain
from .errors import ModelError
from .graph import LocalGraph, SubgraphRef
from .model import BETWEEN, WITHIN, ModelSpec, ParamVector, count_transitive_edges
from .rng import TAG_SIMULATE, stream_key


@dataclass(frozen=True)
class McmcConfig:
    """Chain lengths are multiples of D, the subgraph's edge-variable count."""

    n_samples: int = 1
    burnin_multiplier: float = 10.0
    interval_multiplier: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.burnin_multiplier <= 0 or self.interval_multiplier <= 0:
            raise ValueError("chain multipliers must be positive")
        if self.n_samples < 1:
            raise ValueError("n_samples must be at least 1")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")

    def burnin(self, D: int) -> int:
        return int(math.ceil(self.burnin_multiplier * D))

    def interval(self, D: int) -> int:
        return max(1, int(math.ceil(self.interval_multiplier * D)))


@dataclass
class SubgraphSample:
    """Retained draws of one subgraph chain.

    ``stats`` holds the statistic slice (within or between part) of each
    draw.  ``states`` and ``codes`` are filled only on request.
    """

    ref: SubgraphRef
    stats: np.ndarray
    final: np.ndarray
    states: np.ndarray | None = None
    codes: np.ndarray | None = None


def _part_theta(spec: ModelSpec, theta, ref: SubgraphRef) -> np.ndarray:
    kind = WITHIN if ref.within else BETWEEN
    if isinstance(theta, ParamVector):
        t = theta.part(kind)
    else:
        t = np.asarray(theta, dtype=float).reshape(-1)
    d = spec.p if ref.within else spec.q
    if t.size != d:
        raise ModelError(f"expected {d} {kind} parameters, got {t.size}")
    if not np.all(np.isfinite(t)):
        raise ModelError("natural parameters must be finite")
    return t


def run_chain(spec: ModelSpec, theta_part: np.ndarray, ref: SubgraphRef, n_samples: int,
              n_burn: int, n_interval: int, key, start=None,
              states: bool = False, codes: bool = False) -> SubgraphSample:
    """Low-level chain driver for one subgraph (parameters already sliced)."""
    sm = spec.compiled(ref)
    D, d = sm.n_vars, sm.dim
    x = np.zeros(D, dtype=np.uint8) if start is None else np.asarray(start, dtype=np.uint8).copy()
    if x.shape != (D,):
        raise ModelError(f"start state for {ref} must have {D} entries")
    stats = x.astype(np.int64) @ sm.weights if D else np.zeros(d, dtype=np.int64)
    use_tri = ref.within and sm.has_transitive
    if use_tri:
        a = sm.size
        adj = np.zeros((a, a), dtype=np.uint8)
        adj[sm.u, sm.v] = x
        adj[sm.v, sm.u] = x
        sp = adj.astype(np.int64) @ adj.astype(np.int64)
        np.fill_diagonal(sp, 0)
        stats = stats + count_transitive_edges(adj) * sm.tvec
        rows = pack_rows(adj)
    else:
        rows = np.zeros((0, 1), dtype=np.uint64)
        sp = np.zeros((0, 0), dtype=np.int64)
    out = np.zeros((n_samples, d), dtype=np.int64)
    if codes and D > 62:
        raise ModelError("state codes need at most 62 edge variables")
    out_codes = np.zeros(n_samples if codes else 0, dtype=np.int64)
    out_states = np.zeros((n_samples, D) if states else (0, 0), dtype=np.uint8)
    if D == 0:
        out[:] = stats
        return SubgraphSample(ref, out, x.astype(bool),
                              out_states.astype(bool) if states else None,
                              out_codes if codes else None)
    eta, tri = sm.log_odds(theta_part)
    toggle_chain(x, rows, sp, sm.u, sm.v, eta, tri, sm.weights, sm.tvec, use_tri,
                 stats, np.uint64(key), n_burn, n_interval, n_samples, out,
                 codes, out_codes, states, out_states)
    return SubgraphSample(ref, out, x.astype(bool),
                          out_states.astype(bool) if states else None,
                          out_codes if codes else None)


def sample_subgraph(spec: ModelSpec, theta, ref: SubgraphRef, cfg: McmcConfig, *,
                    replication: int = 0, start=None, states: bool = False,
                    codes: bool = False) -> SubgraphSample:
    """Draw ``cfg.n_samples`` states of subgraph ``ref`` under theta.

    Proposals pick one edge variable uniformly and toggle it with
    probability min(1, exp<theta, change statistic>).  Burn-in and spacing
    are ``burnin_multiplier * D`` and ``interval_multiplier * D`` proposals.
    A subgraph without edge variables yields its unique empty state.
    """
    spec.partition.check_ref(ref)
    t = _part_theta(spec, theta, ref)
    D = spec.partition.n_pairs(ref)
    key = stream_key(cfg.seed, TAG_SIMULATE, replication, spec.partition.subgraph_index(ref))
    return run_chain(spec, t, ref, cfg.n_samples, cfg.burnin(D), cfg.interval(D), key,
                     start=start, states=states, codes=codes)


@dataclass
class GraphSample:
    """Joint draws: ``stats`` is n x (p+q); ``graphs`` holds LocalGraphs
    when they were requested."""

    stats: np.ndarray
    graphs: list[LocalGraph] | None
    subgraph_stats: dict[SubgraphRef, np.ndarray]


def sample_graph(spec: ModelSpec, theta: ParamVector, cfg: McmcConfig, *,
                 replication: int = 0, threads: int = 1, empty_between: bool = False,
                 keep_graphs: bool = True) -> GraphSample:
    """Sample every block-based subgraph independently and assemble.

    With ``empty_between`` the between-block subgraphs are not sampled and
    stay empty, as in a design where cross-block edges have probability 0.
    Chains run on up to ``threads`` workers; results are collected in
    (k, l) order.
    """
    if not isinstance(theta, ParamVector):
        theta = ParamVector.from_full(spec, theta)
    part = spec.partition
    refs = part.within_refs() + ([] if empty_between else part.between_refs())
    refs.sort()

    def job(ref):
        return sample_subgraph(spec, theta, ref, cfg, replication=replication, states=keep_graphs)

    if threads > 1 and len(refs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(job, refs))
    else:
        results = [job(ref) for ref in refs]

    n = cfg.n_samples
    stats = np.zeros((n, spec.dim), dtype=np.int64)
    per_ref = {}
    for res in results:
        sl = spec.part_slice(WITHIN if res.ref.within else BETWEEN)
        stats[:, sl] += res.stats
        per_ref[res.ref] = res.stats
    graphs = None
    if keep_graphs:
        graphs = []
        for r in range(n):
            g = LocalGraph(part)
            for res in results:
                g.set_subgraph(res.ref, res.states[r])
            graphs.append(g)
    return GraphSample(stats, graphs, per_ref)
