"""Brute-force enumeration of small subgraph state spaces.

A table lists the statistic of every one of the 2^D states of a subgraph,
computed from the definitions (edge weights plus a direct transitive-edge
count) rather than from change statistics, so it can serve as an
independent oracle for the sampler and the Monte-Carlo estimators.  State
number ``c`` has edge variable ``e`` present iff bit ``e`` of ``c`` is set.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import EnumerationCapError
from .graph import LocalGraph, SubgraphRef
from .model import BETWEEN, WITHIN, ModelSpec, ParamVector, compute_statistics

ENUMERATION_CAP = 20


@dataclass(frozen=True)
class ExactSubgraphTable:
    ref: SubgraphRef
    dim: int
    stats: np.ndarray  # 2^D x d, int64

    @property
    def kind(self) -> str:
        return WITHIN if self.ref.within else BETWEEN


def _state_bits(D: int) -> np.ndarray:
    codes = np.arange(1 << D, dtype=np.int64)
    return ((codes[:, None] >> np.arange(D)) & 1).astype(np.uint8)


def _transitive_counts(bits: np.ndarray, u: np.ndarray, v: np.ndarray, a: int) -> np.ndarray:
    """Transitive-edge count of every state, batched over states."""
    S = bits.shape[0]
    out = np.zeros(S, dtype=np.int64)
    chunk = 1 << 14
    for lo in range(0, S, chunk):
        b = bits[lo:lo + chunk].astype(np.int64)
        adj = np.zeros((b.shape[0], a, a), dtype=np.int64)
        adj[:, u, v] = b
        adj[:, v, u] = b
        sp = adj @ adj
        out[lo:lo + chunk] = np.count_nonzero((b > 0) & (sp[:, u, v] > 0), axis=1)
    return out


def build_table(spec: ModelSpec, ref: SubgraphRef, cap: int = ENUMERATION_CAP) -> ExactSubgraphTable:
    """Enumerate all states of one subgraph."""
    sm = spec.compiled(ref)
    D = sm.n_vars
    if D > cap:
        raise EnumerationCapError(
            f"subgraph {ref} has {D} edge variables; exact enumeration is capped at {cap}"
        )
    bits = _state_bits(D)
    stats = bits.astype(np.int64) @ sm.weights
    if ref.within and np.any(sm.tvec) and sm.size >= 3:
        stats = stats + np.outer(_transitive_counts(bits, sm.u, sm.v, sm.size), sm.tvec)
    stats.flags.writeable = False
    return ExactSubgraphTable(ref, D, stats)


def _theta_for(table: ExactSubgraphTable, theta) -> np.ndarray:
    if isinstance(theta, ParamVector):
        theta = theta.part(table.kind)
    theta = np.asarray(theta, dtype=float).reshape(-1)
    if theta.size != table.stats.shape[1]:
        raise ValueError(f"expected {table.stats.shape[1]} parameters, got {theta.size}")
    return theta


def _log_weights(table, theta):
    eta = table.stats @ _theta_for(table, theta)
    psi = logsumexp(eta)
    return eta, psi


def exact_log_normalizer(table: ExactSubgraphTable, theta) -> float:
    """psi(theta) = log sum_v exp<theta, s(v)> (max-shifted)."""
    return float(_log_weights(table, theta)[1])


def exact_probabilities(table: ExactSubgraphTable, theta) -> np.ndarray:
    """Probability of every state, indexed by state code."""
    eta, psi = _log_weights(table, theta)
    return np.exp(eta - psi)


def exact_mean_value(table: ExactSubgraphTable, theta) -> np.ndarray:
    """Mean of the subgraph statistic under theta."""
    return exact_probabilities(table, theta) @ table.stats


def exact_fisher_info(table: ExactSubgraphTable, theta) -> np.ndarray:
    """Covariance matrix of the subgraph statistic under theta."""
    w = exact_probabilities(table, theta)
    centered = table.stats - w @ table.stats
    info = (centered * w[:, None]).T @ centered
    return (info + info.T) / 2


class ExactStatus(str, enum.Enum):
    CONVERGED = "Converged"
    SUSPECTED_NONEXISTENCE = "SuspectedNonexistence"
    MAX_ITER = "MaxIter"


_SEVERITY = {ExactStatus.CONVERGED: 0, ExactStatus.MAX_ITER: 1, ExactStatus.SUSPECTED_NONEXISTENCE: 2}


@dataclass
class ExactMLEResult:
    theta: ParamVector
    status: ExactStatus
    iterations: int
    grad_norm: float
    loglik: float
    info_w: np.ndarray
    info_b: np.ndarray


class ExactModel:
    """Exact log-likelihood of a model whose subgraphs are all enumerable.

    Subgraphs with the same signature share one table.
    """

    def __init__(self, spec: ModelSpec, cap: int = ENUMERATION_CAP):
        self.spec = spec
        self.classes: dict[str, list[tuple[ExactSubgraphTable, int]]] = {WITHIN: [], BETWEEN: []}
        for kind in (WITHIN, BETWEEN):
            if not (spec.p if kind == WITHIN else spec.q):
                continue
            counts: dict[tuple, list] = {}
            for ref in spec.refs_of(kind):
                key = spec.signature(ref)
                if key in counts:
                    counts[key][1] += 1
                else:
                    counts[key] = [build_table(spec, ref, cap), 1]
            self.classes[kind] = [(t, n) for t, n in counts.values()]

    def log_normalizer(self, kind: str, theta_part) -> float:
        return sum(n * exact_log_normalizer(t, theta_part) for t, n in self.classes[kind])

    def mean_value(self, kind: str, theta_part) -> np.ndarray:
        d = self.spec.p if kind == WITHIN else self.spec.q
        out = np.zeros(d)
        for t, n in self.classes[kind]:
            out += n * exact_mean_value(t, theta_part)
        return out

    def fisher_info(self, kind: str, theta_part) -> np.ndarray:
        d = self.spec.p if kind == WITHIN else self.spec.q
        out = np.zeros((d, d))
        for t, n in self.classes[kind]:
            out += n * exact_fisher_info(t, theta_part)
        return out

    def bounds(self, kind: str) -> tuple[np.ndarray, np.ndarray]:
        d = self.spec.p if kind == WITHIN else self.spec.q
        lo, hi = np.zeros(d, dtype=np.int64), np.zeros(d, dtype=np.int64)
        for t, n in self.classes[kind]:
            lo += n * t.stats.min(axis=0)
            hi += n * t.stats.max(axis=0)
        return lo, hi

    def loglik(self, kind: str, theta_part, obs) -> float:
        return float(np.dot(theta_part, obs) - self.log_normalizer(kind, theta_part))


def _newton(model: ExactModel, kind: str, obs: np.ndarray, theta0: np.ndarray,
            max_iter: int, tol: float, max_halvings: int = 30, diverge: float = 30.0):
    theta = theta0.astype(float).copy()
    lo, hi = model.bounds(kind)
    if np.any(obs <= lo) or np.any(obs >= hi):
        return theta, ExactStatus.SUSPECTED_NONEXISTENCE, 0, np.inf
    ll = model.loglik(kind, theta, obs)
    gnorm = np.inf
    for it in range(1, max_iter + 1):
        grad = obs - model.mean_value(kind, theta)
        gnorm = float(np.max(np.abs(grad)))
        if gnorm < tol:
            return theta, ExactStatus.CONVERGED, it - 1, gnorm
        info = model.fisher_info(kind, theta)
        info[np.diag_indices_from(info)] += 1e-10 * max(np.trace(info), 1e-300) / len(info)
        step = np.linalg.solve(info, grad)
        for _ in range(max_halvings):
            cand = theta + step
            ll_new = model.loglik(kind, cand, obs)
            if ll_new >= ll:
                break
            step = step / 2
        theta, ll = cand, ll_new
        if np.max(np.abs(theta)) > diverge:
            return theta, ExactStatus.SUSPECTED_NONEXISTENCE, it, gnorm
    grad = obs - model.mean_value(kind, theta)
    gnorm = float(np.max(np.abs(grad)))
    status = ExactStatus.CONVERGED if gnorm < tol else ExactStatus.MAX_ITER
    return theta, status, max_iter, gnorm


def exact_mle(g: LocalGraph, spec: ModelSpec, *, max_iter: int = 100, tol: float = 1e-8,
              cap: int = ENUMERATION_CAP, model: ExactModel | None = None) -> ExactMLEResult:
    """Maximum likelihood by damped Newton on the exact log-likelihood.

    Within and between parts are solved independently.  The status is
    SuspectedNonexistence when an observed coordinate sits at its
    enumerated minimum or maximum, or when |theta| exceeds 30 during the
    iteration.
    """
    model = model or ExactModel(spec, cap)
    s = compute_statistics(g, spec).astype(float)
    parts = {}
    status = ExactStatus.CONVERGED
    iters = 0
    gnorm = 0.0
    loglik = 0.0
    for kind in (WITHIN, BETWEEN):
        sl = spec.part_slice(kind)
        obs = s[sl]
        if obs.size == 0:
            parts[kind] = np.zeros(0)
            continue
        theta, st, it, gn = _newton(model, kind, obs, np.zeros(obs.size), max_iter, tol)
        parts[kind] = theta
        if _SEVERITY[st] > _SEVERITY[status]:
            status = st
        iters = max(iters, it)
        gnorm = max(gnorm, gn)
        loglik += model.loglik(kind, theta, obs)
    theta = ParamVector(parts[WITHIN], parts[BETWEEN])
    info_w = model.fisher_info(WITHIN, theta.theta_w) if spec.p else np.zeros((0, 0))
    info_b = model.fisher_info(BETWEEN, theta.theta_b) if spec.q else np.zeros((0, 0))
    return ExactMLEResult(theta, status, iters, gnorm, loglik, info_w, info_b)
