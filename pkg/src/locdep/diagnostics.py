"""Interpretable theory quantities and the error-bound expressions.

Eigenvalue quantities are evaluated at a single supplied theta ("at-theta
approximations"); quantities defined over a neighborhood of theta are not
computable and are not attempted.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass

import numpy as np

from .errors import EnumerationCapError, ModelError, NumericalError
from .exact import ENUMERATION_CAP, ExactModel
from .graph import BlockPartition
from .model import BETWEEN, WITHIN, ModelSpec, ParamVector
from .rng import TAG_INIT, stream_key
from .sampler import run_chain

SINGULAR_TOL = 1e-12


class SingularInformationWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class TheoryQuantities:
    a_avg: float
    a_max: int
    k: int
    n: int
    p: int
    q: int
    lam_max_w_star: float | None
    lam_min_w_star: float | None
    lam_max_b_star: float | None
    lam_min_b_star: float | None
    singular: bool = False
    approximation: str = "at-theta"

    def to_dict(self) -> dict:
        return asdict(self)


def _extreme_eigs(info, scale: int):
    if info is None or np.asarray(info).size == 0:
        return None, None, False
    vals = np.linalg.eigvalsh((np.asarray(info, dtype=float) + np.asarray(info, dtype=float).T) / 2) / scale
    hi = float(vals.max())
    lo = float(vals.min())
    singular = lo <= SINGULAR_TOL * max(hi, 1e-300)
    if singular:
        lo = 0.0
    return max(hi, 0.0), lo, singular


def theory_quantities(info_w, info_b, partition: BlockPartition) -> TheoryQuantities:
    """Block-size summaries and averaged extreme Fisher eigenvalues.

    ``info_w`` (p x p) and ``info_b`` (q x q) are full-graph information
    blocks; they are divided by K and C(K,2) respectively.  Singular input
    reports the minimum as 0 and sets ``singular`` with a warning.
    """
    K = partition.n_blocks
    sizes = partition.sizes
    hw, lw, sw = _extreme_eigs(info_w, K)
    n_pairs = K * (K - 1) // 2
    if n_pairs == 0 and info_b is not None and np.asarray(info_b).size:
        raise ModelError("between information given but the partition has one block")
    hb, lb, sb = _extreme_eigs(info_b, max(n_pairs, 1))
    if sw or sb:
        warnings.warn("information block is singular; its minimum eigenvalue is reported as 0",
                      SingularInformationWarning, stacklevel=2)
    return TheoryQuantities(
        a_avg=float(sizes.mean()), a_max=int(sizes.max()), k=K, n=partition.n_nodes,
        p=0 if info_w is None else int(np.asarray(info_w).shape[0]),
        q=0 if info_b is None else int(np.asarray(info_b).shape[0]),
        lam_max_w_star=hw, lam_min_w_star=lw, lam_max_b_star=hb, lam_min_b_star=lb,
        singular=sw or sb,
    )


@dataclass(frozen=True)
class BoundRecord:
    within: float | None
    between: float | None
    ceiling: float
    a_max_ok: bool
    c: float

    def to_dict(self) -> dict:
        return asdict(self)


def bound_expressions(tq: TheoryQuantities, c: float = 1.0) -> BoundRecord:
    """Evaluate the within and between error bounds and the block-size
    ceiling for constant ``c``.

    within  = c sqrt(A_avg) sqrt(lam_max_W) / lam_min_W sqrt(p / N)
    between = c A_avg sqrt(lam_max_B) / lam_min_B sqrt(q / N^2)
    ceiling = min{(N lam_max_W / (A_avg p^2))^(1/4),
                  (N^2 lam_max_B / (4 A_avg^2 q^2))^(1/4)}
    A part with dimension 0 is left out (its bound is None).
    """
    N, A = tq.n, tq.a_avg
    within = between = None
    ceilings = []
    if tq.p:
        if not tq.lam_min_w_star:
            raise NumericalError("within minimum eigenvalue is zero; bound undefined")
        within = c * math.sqrt(A) * math.sqrt(tq.lam_max_w_star) / tq.lam_min_w_star * math.sqrt(tq.p / N)
        ceilings.append((N * tq.lam_max_w_star / (A * tq.p ** 2)) ** 0.25)
    if tq.q:
        if not tq.lam_min_b_star:
            raise NumericalError("between minimum eigenvalue is zero; bound undefined")
        between = c * A * math.sqrt(tq.lam_max_b_star) / tq.lam_min_b_star * math.sqrt(tq.q / N ** 2)
        ceilings.append((N ** 2 * tq.lam_max_b_star / (4 * A ** 2 * tq.q ** 2)) ** 0.25)
    if not ceilings:
        raise ModelError("model has no parameters")
    ceiling = min(ceilings)
    return BoundRecord(within, between, ceiling, bool(tq.a_max <= ceiling), c)


@dataclass(frozen=True)
class PredictedError:
    c_hat_by_n: dict
    c_hat: float
    e_tilde_by_n: dict


def predicted_error(q95_by_n: dict, p_by_n: dict) -> PredictedError:
    """C_N = Q_N / sqrt(p/N), C = mean_N C_N, E_N = C sqrt(p/N)."""
    if not q95_by_n:
        raise ValueError("no network sizes given")
    if set(q95_by_n) != set(p_by_n):
        raise ValueError("quantile and dimension maps cover different N")
    ns = sorted(q95_by_n)
    c_by_n = {n: float(q95_by_n[n]) / math.sqrt(p_by_n[n] / n) for n in ns}
    c_hat = float(np.mean([c_by_n[n] for n in ns]))
    e_by_n = {n: c_hat * math.sqrt(p_by_n[n] / n) for n in ns}
    return PredictedError(c_by_n, c_hat, e_by_n)


def information_at(spec: ModelSpec, theta: ParamVector, *, n_samples: int = 5000,
                   seed: int = 0, cap: int = ENUMERATION_CAP):
    """Full-graph Fisher information blocks at theta.

    Exact when every subgraph is enumerable, otherwise the Monte-Carlo
    covariance of sampled statistics (one chain per subgraph class).
    Returns (info_w, info_b, method).
    """
    try:
        model = ExactModel(spec, cap)
        iw = model.fisher_info(WITHIN, theta.theta_w) if spec.p else None
        ib = model.fisher_info(BETWEEN, theta.theta_b) if spec.q else None
        return iw, ib, "exact"
    except EnumerationCapError:
        pass
    out = {}
    part = spec.partition
    for kind, d in ((WITHIN, spec.p), (BETWEEN, spec.q)):
        if not d:
            out[kind] = None
            continue
        classes: dict[tuple, list] = {}
        for ref in spec.refs_of(kind):
            classes.setdefault(spec.signature(ref), [ref, 0])[1] += 1
        info = np.zeros((d, d))
        for ref, count in classes.values():
            D = part.n_pairs(ref)
            key = stream_key(seed, TAG_INIT, part.subgraph_index(ref))
            res = run_chain(spec, theta.part(kind), ref, n_samples, 10 * D, max(1, D), key)
            if n_samples > 1:
                info += count * np.cov(res.stats.astype(float), rowvar=False).reshape(d, d)
        out[kind] = info
    return out[WITHIN], out[BETWEEN], "monte-carlo"
