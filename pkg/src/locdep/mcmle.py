"""Monte-Carlo maximum likelihood with importance sampling.

The log-likelihood ratio against a reference theta0 is approximated by

    <theta - theta0, s(x)> - log mean_i exp<theta - theta0, s(x_i)>

with x_i drawn by MCMC at theta0.  Because subgraphs are independent, the
normalizing-constant ratio factorizes over subgraphs; subgraphs with equal
signatures share one chain, and a class of n_c subgraphs contributes n_c
times its log-mean-exp term.  Within and between parameters are fitted by
separate scoring loops.
"""
from __future__ import annotations

import enum
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sps
from scipy.special import logsumexp

from .errors import NumericalError
from .graph import LocalGraph, SubgraphRef
from .model import BETWEEN, WITHIN, ModelSpec, ParamVector, compute_statistics
from .rng import TAG_MCMLE, stream_key
from .sampler import run_chain


class UnusableInformationWarning(RuntimeWarning):
    pass


def _as_2d(sample_stats) -> np.ndarray:
    S = np.asarray(sample_stats, dtype=float)
    if S.ndim == 1:
        S = S[:, None]
    if S.shape[0] == 0:
        raise ValueError("importance sampling needs at least one sample")
    return S


def importance_weights(theta, theta0, sample_stats) -> np.ndarray:
    """Self-normalized weights exp<theta - theta0, s_i> / sum_j (...)."""
    S = _as_2d(sample_stats)
    eta = S @ (np.asarray(theta, dtype=float) - np.asarray(theta0, dtype=float))
    eta -= eta.max()
    w = np.exp(eta)
    return w / w.sum()


def is_log_ratio(theta, theta0, sample_stats) -> float:
    """log mean_i exp<theta - theta0, s_i>, the estimate of
    psi(theta) - psi(theta0)."""
    S = _as_2d(sample_stats)
    eta = S @ (np.asarray(theta, dtype=float) - np.asarray(theta0, dtype=float))
    return float(logsumexp(eta) - np.log(S.shape[0]))


def is_gradient(theta, theta0, obs_stats, sample_stats) -> np.ndarray:
    """Importance-sampled gradient s(x) - sum_i w_i(theta) s(x_i)."""
    S = _as_2d(sample_stats)
    w = importance_weights(theta, theta0, S)
    return np.asarray(obs_stats, dtype=float) - w @ S


def is_information(theta, theta0, sample_stats) -> np.ndarray:
    """Importance-weighted covariance of the sampled statistics.

    A single sample carries no curvature information: the zero matrix is
    returned with an ``UnusableInformationWarning``.
    """
    S = _as_2d(sample_stats)
    if S.shape[0] == 1:
        warnings.warn("one sample point: information estimate unusable",
                      UnusableInformationWarning, stacklevel=2)
        return np.zeros((S.shape[1], S.shape[1]))
    w = importance_weights(theta, theta0, S)
    centered = S - w @ S
    info = (centered * w[:, None]).T @ centered
    return (info + info.T) / 2


def effective_sample_size(weights) -> float:
    """1 / sum w_i^2 for normalized weights."""
    w = np.asarray(weights, dtype=float)
    return float(w.sum() ** 2 / np.dot(w, w))


def batch_means_se(values: np.ndarray, n_batches: int = 20) -> np.ndarray:
    """Standard error of the column means of an autocorrelated series."""
    v = np.asarray(values, dtype=float)
    if v.ndim == 1:
        v = v[:, None]
    n = v.shape[0]
    b = max(1, min(n_batches, n // 2))
    size = n // b
    if size < 1:
        return np.full(v.shape[1], np.inf)
    means = v[: b * size].reshape(b, size, -1).mean(axis=1)
    return means.std(axis=0, ddof=1) / np.sqrt(b) if b > 1 else np.full(v.shape[1], np.inf)


def is_standard_error(theta, theta0, sample_stats, n_batches: int = 20) -> np.ndarray:
    """Monte-Carlo SE of the weighted mean sum_i w_i s_i.

    Uses the linearization n * w_i * (s_i - m) of the self-normalized
    estimator, with batch means to absorb chain autocorrelation.
    """
    S = _as_2d(sample_stats)
    w = importance_weights(theta, theta0, S)
    m = w @ S
    infl = (S.shape[0] * w)[:, None] * (S - m)
    return batch_means_se(infl, n_batches)


def autocorrelation_inflation(S: np.ndarray, n_batches: int = 20) -> float:
    """Ratio of batch-means variance to naive variance of the mean (>= 1)."""
    n = S.shape[0]
    naive = S.std(axis=0, ddof=1) / np.sqrt(n)
    bm = batch_means_se(S, n_batches)
    ok = naive > 0
    if not np.any(ok):
        return 1.0
    return float(max(1.0, np.max((bm[ok] / naive[ok]) ** 2)))


class FitStatus(str, enum.Enum):
    CONVERGED = "Converged"
    NONEXISTENCE = "Nonexistence"
    MAX_ITER = "MaxIter"


_SEVERITY = {FitStatus.CONVERGED: 0, FitStatus.MAX_ITER: 1, FitStatus.NONEXISTENCE: 2}


@dataclass(frozen=True)
class FitConfig:
    n_mcmc: int = 20000
    burnin_multiplier: float = 10.0
    interval_multiplier: float = 1.0
    max_outer: int = 50
    max_inner: int = 20
    ess_threshold: float = 0.1
    tol: float = 1e-3
    noise_level: float = 0.9
    diverge: float = 30.0
    seed: int = 0
    replication: int = 0
    threads: int = 1

    def __post_init__(self):
        if self.n_mcmc < 2:
            raise ValueError("n_mcmc must be at least 2")
        if not 0 < self.ess_threshold <= 1:
            raise ValueError("ess_threshold must be in (0, 1]")


@dataclass
class PartFit:
    theta: np.ndarray
    info: np.ndarray
    status: FitStatus
    outer_iterations: int
    ess_trace: list[float] = field(default_factory=list)


@dataclass
class FitResult:
    theta_hat: ParamVector
    info_w: np.ndarray
    info_b: np.ndarray
    n_mcmc: int
    ess_trace: list[float]
    status: FitStatus
    seed: int
    outer_iterations: dict[str, int]
    names: list[str]

    @property
    def info_hat(self) -> np.ndarray:
        """Block-diagonal information estimate (p+q square)."""
        p, q = self.info_w.shape[0], self.info_b.shape[0]
        out = np.zeros((p + q, p + q))
        out[:p, :p] = self.info_w
        out[p:, p:] = self.info_b
        return out

    def standard_errors(self) -> np.ndarray:
        """sqrt of the diagonal of the inverse information, part by part."""
        out = []
        for info in (self.info_w, self.info_b):
            if info.size == 0:
                continue
            try:
                inv = np.linalg.inv(info)
            except np.linalg.LinAlgError:
                out.append(np.full(info.shape[0], np.nan))
                continue
            out.append(np.sqrt(np.clip(np.diag(inv), 0, None)))
        return np.concatenate(out) if out else np.zeros(0)

    def to_dict(self) -> dict:
        return {
            "status": self.status.value,
            "seed": self.seed,
            "n_mcmc": self.n_mcmc,
            "terms": self.names,
            "theta_hat": self.theta_hat.full.tolist(),
            "standard_errors": self.standard_errors().tolist(),
            "info_w": self.info_w.tolist(),
            "info_b": self.info_b.tolist(),
            "ess_trace": list(self.ess_trace),
            "outer_iterations": dict(self.outer_iterations),
        }


@dataclass
class _Class:
    rep: SubgraphRef
    count: int
    start: np.ndarray


def subgraph_classes(g: LocalGraph, spec: ModelSpec, kind: str) -> list[_Class]:
    """Group subgraphs by signature, keeping the first as representative."""
    groups: dict[tuple, _Class] = {}
    for ref in spec.refs_of(kind):
        key = spec.signature(ref)
        if key in groups:
            groups[key].count += 1
        else:
            groups[key] = _Class(ref, 1, g.subgraph_bits(ref).copy())
    return list(groups.values())


def independent_edge_init(g: LocalGraph, spec: ModelSpec, kind: str, clip: float = 10.0) -> np.ndarray:
    """Moment-matching start: the dyad-independent MLE for edge-type
    coordinates (a grouped logistic fit), 0 for transitive coordinates."""
    terms = spec.terms_of(kind)
    d = len(terms)
    theta = np.zeros(d)
    cols = [c for c, t in enumerate(terms) if not t.transitive]
    if not cols:
        return theta
    table: dict[tuple, list[int]] = {}
    for ref in spec.refs_of(kind):
        W = spec.compiled(ref).weights[:, cols]
        if W.shape[0] == 0:
            continue
        rows, inv = np.unique(W, axis=0, return_inverse=True)
        inv = inv.reshape(-1)
        n = np.bincount(inv, minlength=rows.shape[0])
        y = np.bincount(inv, weights=g.subgraph_bits(ref).astype(float), minlength=rows.shape[0])
        for r, nn, yy in zip(map(tuple, rows.tolist()), n, y):
            acc = table.setdefault(r, [0, 0])
            acc[0] += int(nn)
            acc[1] += int(yy)
    if not table:
        return theta
    X = np.array(list(table.keys()), dtype=float)
    n = np.array([v[0] for v in table.values()], dtype=float)
    y = np.array([v[1] for v in table.values()], dtype=float)
    beta = np.zeros(len(cols))
    for _ in range(100):
        prob = 1 / (1 + np.exp(-(X @ beta)))
        grad = X.T @ (y - n * prob)
        H = (X * (n * prob * (1 - prob))[:, None]).T @ X
        H[np.diag_indices_from(H)] += 1e-9 * max(np.trace(H), 1.0)
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            break
        beta = np.clip(beta + step, -clip, clip)
        if np.max(np.abs(step)) < 1e-10:
            break
    theta[cols] = beta
    return theta


class _ClassSamples:
    """Per-class sample matrices and the pooled importance objective."""

    def __init__(self, samples: list[np.ndarray], counts: list[int], theta0: np.ndarray):
        self.samples = samples
        self.counts = np.asarray(counts, dtype=float)
        self.theta0 = theta0

    def evaluate(self, theta, obs):
        """Objective, gradient, information, and min ESS at theta."""
        delta = theta - self.theta0
        obj = float(delta @ obs)
        grad = obs.astype(float).copy()
        info = np.zeros((obs.size, obs.size))
        ess = np.inf
        for S, n_c in zip(self.samples, self.counts):
            eta = S @ delta
            lse = logsumexp(eta)
            w = np.exp(eta - lse)
            obj -= n_c * (lse - np.log(S.shape[0]))
            m = w @ S
            grad -= n_c * m
            centered = S - m
            info += n_c * (centered * w[:, None]).T @ centered
            ess = min(ess, effective_sample_size(w))
        return obj, grad, (info + info.T) / 2, ess

    def objective_and_ess(self, theta, obs):
        delta = theta - self.theta0
        obj = float(delta @ obs)
        ess = np.inf
        for S, n_c in zip(self.samples, self.counts):
            eta = S @ delta
            lse = logsumexp(eta)
            obj -= n_c * (lse - np.log(S.shape[0]))
            w = np.exp(eta - lse)
            ess = min(ess, effective_sample_size(w))
        return obj, ess

    def noise_covariance(self) -> np.ndarray:
        """MC covariance of the pooled mean statistic at theta0."""
        d = self.samples[0].shape[1]
        V = np.zeros((d, d))
        for S, n_c in zip(self.samples, self.counts):
            n = S.shape[0]
            C = np.cov(S, rowvar=False).reshape(d, d)
            V += n_c ** 2 * C * autocorrelation_inflation(S) / n
        return V

    def stat_sd(self) -> np.ndarray:
        var = sum(n_c * S.var(axis=0, ddof=1) for S, n_c in zip(self.samples, self.counts))
        return np.sqrt(var)


def _regularized_solve(info: np.ndarray, grad: np.ndarray) -> np.ndarray:
    d = info.shape[0]
    A = info.copy()
    A[np.diag_indices(d)] += 1e-10 * max(np.trace(A), 1e-300) / d
    try:
        return np.linalg.solve(A, grad)
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(A, grad, rcond=None)[0]


def _inner_scoring(cs: _ClassSamples, obs: np.ndarray, cfg: FitConfig, scale: np.ndarray):
    """Fisher scoring on the importance-sampled objective from theta0.

    Steps are halved until the objective does not decrease and the
    effective sample size stays above the threshold; hitting the ESS guard
    ends the inner loop so the caller can resample.
    """
    n = min(S.shape[0] for S in cs.samples)
    theta = cs.theta0.copy()
    obj, grad, info, ess = cs.evaluate(theta, obs)
    for _ in range(cfg.max_inner):
        if np.max(np.abs(grad) / scale) <= 1e-8 or not np.trace(info) > 0:
            break
        step = _regularized_solve(info, grad)
        if not np.all(np.isfinite(step)):
            break
        limited = False
        for _ in range(30):
            cand = theta + step
            cobj, cess = cs.objective_and_ess(cand, obs)
            if cess < cfg.ess_threshold * n:
                limited = True
            elif cobj >= obj:
                break
            step = step / 2
        else:
            break
        theta = cand
        obj, grad, info, ess = cs.evaluate(theta, obs)
        if limited:
            break
    return theta, info, ess


def _fit_part(g: LocalGraph, spec: ModelSpec, kind: str, obs: np.ndarray, cfg: FitConfig) -> PartFit:
    d = obs.size
    theta0 = independent_edge_init(g, spec, kind)
    lo, hi = spec.bounds(kind)
    if np.any(obs <= lo) or np.any(obs >= hi):
        return PartFit(theta0, np.zeros((d, d)), FitStatus.NONEXISTENCE, 0)
    classes = subgraph_classes(g, spec, kind)
    part = spec.partition
    threshold = sps.chi2.ppf(cfg.noise_level, d)
    ess_trace: list[float] = []
    theta1, info1 = theta0, np.zeros((d, d))
    for outer in range(1, cfg.max_outer + 1):
        def job(c: _Class, theta0=theta0, outer=outer):
            D = part.n_pairs(c.rep)
            key = stream_key(cfg.seed, TAG_MCMLE, cfg.replication, part.subgraph_index(c.rep), outer)
            burn = int(np.ceil(cfg.burnin_multiplier * D))
            interval = max(1, int(np.ceil(cfg.interval_multiplier * D)))
            res = run_chain(spec, theta0, c.rep, cfg.n_mcmc, burn, interval, key, start=c.start)
            return res.stats.astype(float)

        if cfg.threads > 1 and len(classes) > 1:
            with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
                samples = list(pool.map(job, classes))
        else:
            samples = [job(c) for c in classes]
        cs = _ClassSamples(samples, [c.count for c in classes], theta0)
        scale = np.maximum(1.0, cs.stat_sd())
        _, g0, _, _ = cs.evaluate(theta0, obs)
        theta1, info1, ess = _inner_scoring(cs, obs, cfg, scale)
        ess_trace.append(float(ess))
        if np.max(np.abs(g0) / scale) <= cfg.tol:
            return PartFit(theta1, info1, FitStatus.CONVERGED, outer, ess_trace)
        V = cs.noise_covariance()
        stat = float(g0 @ np.linalg.pinv(V, hermitian=True) @ g0)
        if stat <= threshold:
            return PartFit(theta1, info1, FitStatus.CONVERGED, outer, ess_trace)
        if np.max(np.abs(theta1)) > cfg.diverge:
            return PartFit(theta1, info1, FitStatus.NONEXISTENCE, outer, ess_trace)
        theta0 = theta1
    return PartFit(theta1, info1, FitStatus.MAX_ITER, cfg.max_outer, ess_trace)


def fit(g: LocalGraph, spec: ModelSpec, cfg: FitConfig = FitConfig()) -> FitResult:
    """Monte-Carlo MLE of theta = (theta_W, theta_B).

    Each part starts from the dyad-independent fit and alternates
    (sample at theta0) -> (importance-sampled scoring) until the gradient
    at theta0 is within tolerance or indistinguishable from Monte-Carlo
    noise.  Observed statistics on a coordinate boundary, or parameters
    drifting past ``cfg.diverge``, give status Nonexistence.
    """
    s = compute_statistics(g, spec).astype(float)
    parts: dict[str, PartFit] = {}
    for kind in (WITHIN, BETWEEN):
        obs = s[spec.part_slice(kind)]
        if obs.size == 0:
            parts[kind] = PartFit(np.zeros(0), np.zeros((0, 0)), FitStatus.CONVERGED, 0)
        else:
            parts[kind] = _fit_part(g, spec, kind, obs, cfg)
    status = max((pf.status for pf in parts.values()), key=_SEVERITY.get)
    return FitResult(
        theta_hat=ParamVector(parts[WITHIN].theta, parts[BETWEEN].theta),
        info_w=parts[WITHIN].info,
        info_b=parts[BETWEEN].info,
        n_mcmc=cfg.n_mcmc,
        ess_trace=parts[WITHIN].ess_trace + parts[BETWEEN].ess_trace,
        status=status,
        seed=cfg.seed,
        outer_iterations={WITHIN: parts[WITHIN].outer_iterations, BETWEEN: parts[BETWEEN].outer_iterations},
        names=list(spec.names),
    )


def require_converged(result: FitResult) -> None:
    if result.status is not FitStatus.CONVERGED:
        raise NumericalError(f"fit did not converge: {result.status.value}")
