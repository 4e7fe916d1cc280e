"""Replication harness for the two simulation studies.

Every network has blocks of equal size, nodes assigned round-robin to M
groups within each block, one group edge term per group plus one
transitive-edge term, and empty between-block subgraphs.  Study 1 records
l2 errors of the fitted within parameters; study 2 records Wald intervals
and standardized estimates of the transitive-edge parameter.
"""
from __future__ import annotations

import csv
import json
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .diagnostics import predicted_error
from .errors import NumericalError
from .graph import BlockPartition
from .inference import inverse_diagonal, normal_quantile, qq_points
from .mcmle import FitConfig, FitStatus, fit
from .model import ModelSpec, ParamVector, WithinEdgesByNodeGroup, WithinTransitiveEdgesTotal
from .rng import TAG_STUDY_REP, TAG_STUDY_THETA, numpy_generator, stream_key
from .sampler import McmcConfig, sample_graph

CASES = ("Case1", "Case2", "Case3", "Study2Case1", "Study2Case2")
STUDY1_CASES = CASES[:3]
STUDY2_CASES = CASES[3:]

ERRORS_COLUMNS = ["case", "N", "replication", "p", "status", "l2_error", "outer_iterations"]
ESTIMATES_COLUMNS = ["case", "N", "replication", "p", "status", "theta_true", "theta_hat",
                     "std_error", "lower", "upper", "covered", "standardized"]
COVERAGE_COLUMNS = ["case", "N", "replications", "n_fitted", "n_failed", "alpha",
                    "coverage", "coverage_se"]
QQ_COLUMNS = ["case", "N", "theoretical", "sample"]


def _ceil_root(n: int, num: int, den: int) -> int:
    """Smallest integer M with M^den >= n^num, i.e. ceil(n^(num/den))."""
    target = n ** num
    m = max(1, int(round(n ** (num / den))) - 1)
    while m ** den < target:
        m += 1
    while m > 1 and (m - 1) ** den >= target:
        m -= 1
    return m


def group_count(case: str, n: int, block_size: int = 50) -> int:
    """Number of node groups M for a case at network size n."""
    if case == "Case1":
        return 3
    if case == "Case2":
        return _ceil_root(n, 2, 5)
    if case == "Case3":
        return _ceil_root(n, 1, 2)
    if case == "Study2Case1":
        return 4
    if case == "Study2Case2":
        return 2 * (n // block_size) - 1
    raise ValueError(f"unknown case {case!r}; expected one of {', '.join(CASES)}")


def draw_group_thetas(seed: int, case: str, n: int, rep: int, M: int, low: float, high: float) -> np.ndarray:
    """theta_1..theta_M iid uniform; depends only on (seed, case, n, rep)."""
    rng = numpy_generator(seed, TAG_STUDY_THETA, CASES.index(case), n, rep)
    return rng.uniform(low, high, size=M)


def build_case_model(case: str, n: int, *, block_size: int = 50, theta_transitive: float = 0.5,
                     theta_group_range: tuple[float, float] = (-1.5, -0.5), seed: int = 0,
                     rep: int = 0, transitive: bool = True) -> tuple[ModelSpec, ParamVector]:
    """Model and true parameter for one replication of a study case.

    With ``transitive=False`` the transitive term is left out, giving an
    independent-edge model for smoke runs.
    """
    if n % block_size:
        raise ValueError(f"N={n} is not a multiple of the block size {block_size}")
    K = n // block_size
    if K < 1:
        raise ValueError("N must be positive")
    M = group_count(case, n, block_size)
    if M > block_size:
        warnings.warn(f"{case}, N={n}: M={M} groups exceed the block size {block_size}; "
                      "some groups have no members", RuntimeWarning, stacklevel=2)
    ranks = np.tile(np.arange(block_size), K)
    part = BlockPartition.equal_blocks(K, block_size, node_groups=ranks % M, n_node_groups=M)
    terms = [WithinEdgesByNodeGroup(m) for m in range(M)]
    if transitive:
        terms.append(WithinTransitiveEdgesTotal())
    spec = ModelSpec(part, terms)
    lo, hi = theta_group_range
    theta_w = draw_group_thetas(seed, case, n, rep, M, lo, hi)
    if transitive:
        theta_w = np.append(theta_w, theta_transitive)
    return spec, ParamVector(theta_w, np.zeros(0))


@dataclass(frozen=True)
class StudyConfig:
    cases: tuple[str, ...] = ("Case1",)
    n_values: tuple[int, ...] = (50, 250, 500)
    block_size: int = 50
    replications: int = 100
    theta_transitive: float = 0.5
    theta_group_range: tuple[float, float] = (-1.5, -0.5)
    n_mcmc: int = 4000
    burnin_multiplier: float = 10.0
    interval_multiplier: float = 1.0
    max_outer: int = 50
    alpha: float = 0.05
    transitive: bool = True
    seed: int = 0

    def __post_init__(self):
        for c in self.cases:
            if c not in CASES:
                raise ValueError(f"unknown case {c!r}; expected one of {', '.join(CASES)}")
        if self.replications < 1:
            raise ValueError("replications must be at least 1")
        for n in self.n_values:
            if n <= 0 or n % self.block_size:
                raise ValueError(f"N={n} is not a positive multiple of the block size {self.block_size}")
        lo, hi = self.theta_group_range
        if not lo < hi:
            raise ValueError("theta_group_range must satisfy low < high")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must be in (0, 1)")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["cases"] = list(self.cases)
        d["n_values"] = list(self.n_values)
        d["theta_group_range"] = list(self.theta_group_range)
        return d


@dataclass
class Replication:
    case: str
    n: int
    rep: int
    p: int
    status: FitStatus
    theta_true: np.ndarray
    theta_hat: np.ndarray
    info: np.ndarray
    outer_iterations: int

    @property
    def ok(self) -> bool:
        return self.status is FitStatus.CONVERGED

    @property
    def l2_error(self) -> float:
        return float(np.linalg.norm(self.theta_hat - self.theta_true))


def run_replication(cfg: StudyConfig, case: str, n: int, rep: int) -> Replication:
    """Draw theta, simulate one network, and fit it."""
    spec, theta = build_case_model(case, n, block_size=cfg.block_size,
                                   theta_transitive=cfg.theta_transitive,
                                   theta_group_range=cfg.theta_group_range,
                                   seed=cfg.seed, rep=rep, transitive=cfg.transitive)
    rep_seed = int(stream_key(cfg.seed, TAG_STUDY_REP, CASES.index(case), n, rep) >> np.uint64(1))
    mcmc = McmcConfig(n_samples=1, burnin_multiplier=cfg.burnin_multiplier,
                      interval_multiplier=cfg.interval_multiplier, seed=rep_seed)
    g = sample_graph(spec, theta, mcmc, empty_between=True).graphs[0]
    fc = FitConfig(n_mcmc=cfg.n_mcmc, burnin_multiplier=cfg.burnin_multiplier,
                   interval_multiplier=cfg.interval_multiplier, max_outer=cfg.max_outer,
                   seed=rep_seed)
    res = fit(g, spec, fc)
    return Replication(case, n, rep, spec.p, res.status, theta.theta_w,
                       res.theta_hat.theta_w, res.info_w, res.outer_iterations["within"])


def run_replications(cfg: StudyConfig, cases, threads: int = 1) -> list[Replication]:
    """All (case, N, replication) units, collected in that sorted order."""
    units = [(c, n, r) for c in cases for n in sorted(cfg.n_values) for r in range(cfg.replications)]

    def job(u):
        return run_replication(cfg, *u)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(job, units))
    return [job(u) for u in units]


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return "nan" if not np.isfinite(x) else format(float(x), ".10g")
    return str(x)


def write_csv(path: Path, columns: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _write_json(path: Path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


@dataclass
class Study1Result:
    replications: list[Replication]
    summary: dict = field(default_factory=dict)


def summarize_study1(cfg: StudyConfig, reps: list[Replication]) -> dict:
    out = {"config": cfg.to_dict(), "cases": {}}
    for case in cfg.cases:
        q95, dims, per_n = {}, {}, {}
        for n in sorted(cfg.n_values):
            rs = [r for r in reps if r.case == case and r.n == n]
            errs = np.sort([r.l2_error for r in rs if r.ok])
            failed = {s.value: sum(1 for r in rs if r.status is s) for s in FitStatus if s is not FitStatus.CONVERGED}
            dims[n] = rs[0].p
            entry = {"p": rs[0].p, "replications": len(rs), "n_fitted": int(errs.size), "failed": failed}
            if errs.size:
                q95[n] = float(np.quantile(errs, 0.95))
                entry.update(q95=q95[n], median=float(np.median(errs)))
            per_n[str(n)] = entry
        case_out = {"by_n": per_n}
        if q95:
            pe = predicted_error(q95, {n: dims[n] for n in q95})
            case_out["c_hat"] = pe.c_hat
            for n in q95:
                per_n[str(n)]["c_hat_n"] = pe.c_hat_by_n[n]
                per_n[str(n)]["e_tilde"] = pe.e_tilde_by_n[n]
        out["cases"][case] = case_out
    return out


def run_study1(cfg: StudyConfig, out_dir=None, threads: int = 1) -> Study1Result:
    """l2 errors per (case, N, replication), 95% quantiles, and the
    fitted error curve E_N = C sqrt(p/N).

    Replications that fail to converge are kept in the table with their
    status and excluded from the quantiles.
    """
    for c in cfg.cases:
        if c not in STUDY1_CASES:
            raise ValueError(f"study 1 runs {', '.join(STUDY1_CASES)}, not {c}")
    reps = run_replications(cfg, cfg.cases, threads)
    summary = summarize_study1(cfg, reps)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(out / "errors.csv", ERRORS_COLUMNS,
                  ([r.case, r.n, r.rep + 1, r.p, r.status.value, r.l2_error, r.outer_iterations]
                   for r in reps))
        _write_json(out / "summary.json", summary)
    return Study1Result(reps, summary)


@dataclass
class IntervalRecord:
    rep: Replication
    se: float
    lower: float
    upper: float
    covered: bool
    standardized: float


def transitive_interval(r: Replication, alpha: float) -> IntervalRecord | None:
    """Wald interval for the last (transitive) coordinate, or None when the
    fit failed or its information matrix is singular."""
    if not r.ok:
        return None
    j = r.p - 1
    try:
        se = math.sqrt(inverse_diagonal(r.info)[j])
    except NumericalError:
        return None
    z = normal_quantile(alpha)
    est, truth = r.theta_hat[j], r.theta_true[j]
    lo, hi = est - z * se, est + z * se
    return IntervalRecord(r, se, lo, hi, bool(lo <= truth <= hi), (est - truth) / se)


@dataclass
class Study2Result:
    replications: list[Replication]
    intervals: dict
    coverage: list[dict]
    qq: dict


def run_study2(cfg: StudyConfig, out_dir=None, threads: int = 1) -> Study2Result:
    """Wald-interval coverage for the transitive-edge parameter and QQ data
    of its standardized estimates, per (case, N)."""
    for c in cfg.cases:
        if c not in STUDY2_CASES:
            raise ValueError(f"study 2 runs {', '.join(STUDY2_CASES)}, not {c}")
    if not cfg.transitive:
        raise ValueError("study 2 needs the transitive term")
    reps = run_replications(cfg, cfg.cases, threads)
    intervals = {(r.case, r.n, r.rep): transitive_interval(r, cfg.alpha) for r in reps}
    coverage, qq = [], {}
    for case in cfg.cases:
        for n in sorted(cfg.n_values):
            recs = [intervals[(case, n, k)] for k in range(cfg.replications)]
            ok = [x for x in recs if x is not None]
            cov = float(np.mean([x.covered for x in ok])) if ok else float("nan")
            se = math.sqrt(cfg.alpha * (1 - cfg.alpha) / len(ok)) if ok else float("nan")
            coverage.append({"case": case, "N": n, "replications": cfg.replications,
                             "n_fitted": len(ok), "n_failed": cfg.replications - len(ok),
                             "alpha": cfg.alpha, "coverage": cov, "coverage_se": se})
            if ok:
                qq[(case, n)] = qq_points([x.standardized for x in ok])
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        rows = []
        for r in reps:
            x = intervals[(r.case, r.n, r.rep)]
            j = r.p - 1
            if x is None:
                rows.append([r.case, r.n, r.rep + 1, r.p, r.status.value, r.theta_true[j],
                             r.theta_hat[j], "", "", "", "", ""])
            else:
                rows.append([r.case, r.n, r.rep + 1, r.p, r.status.value, r.theta_true[j],
                             r.theta_hat[j], x.se, x.lower, x.upper, int(x.covered), x.standardized])
        write_csv(out / "estimates.csv", ESTIMATES_COLUMNS, rows)
        write_csv(out / "coverage.csv", COVERAGE_COLUMNS,
                  ([c[k] for k in COVERAGE_COLUMNS] for c in coverage))
        write_csv(out / "qq.csv", QQ_COLUMNS,
                  ([case, n, t, s] for (case, n), pts in qq.items() for t, s in pts))
        _write_json(out / "summary.json", {"config": cfg.to_dict(), "coverage": coverage})
    return Study2Result(reps, intervals, coverage, qq)
