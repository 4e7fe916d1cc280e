"""Fisher-information estimates, matrix roots, Wald intervals, QQ data."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats as sps

from .errors import ModelError, NumericalError
from .graph import LocalGraph
from .model import BETWEEN, WITHIN, ModelSpec, ParamVector, part_statistics_by_subgraph

EIG_FLOOR = 1e-10
PSD_TOL = 1e-8


@dataclass(frozen=True)
class InfoEstimate:
    """Block-based information estimates.

    ``i_w_avg`` is the average per-block covariance (divisor K) and
    ``i_b_avg`` the average per-pair covariance (divisor C(K,2)); ``full_w``
    and ``full_b`` scale them to the information of the whole graph.
    Either part is None when undefined (K = 1 or zero-dimensional).
    """

    i_w_avg: np.ndarray | None
    i_b_avg: np.ndarray | None
    k: int

    @property
    def full_w(self):
        return None if self.i_w_avg is None else self.k * self.i_w_avg

    @property
    def full_b(self):
        if self.i_b_avg is None:
            return None
        return self.k * (self.k - 1) // 2 * self.i_b_avg


def average_outer_deviation(rows: np.ndarray) -> np.ndarray:
    """(1/n) sum_r (s_r - mean)(s_r - mean)^T over the rows of ``rows``."""
    rows = np.asarray(rows, dtype=float)
    centered = rows - rows.mean(axis=0)
    out = centered.T @ centered / rows.shape[0]
    return (out + out.T) / 2


def fisher_hat(g: LocalGraph, spec: ModelSpec) -> InfoEstimate:
    """Block-based estimator from one observed graph.

    Within: the empirical covariance of the K within-block statistic
    vectors; between: the same over the C(K,2) block pairs.  Both need
    K >= 2.
    """
    K = spec.partition.n_blocks
    if K < 2:
        raise ModelError("the block-based information estimate needs at least 2 blocks")
    i_w = average_outer_deviation(part_statistics_by_subgraph(g, spec, WITHIN)) if spec.p else None
    i_b = average_outer_deviation(part_statistics_by_subgraph(g, spec, BETWEEN)) if spec.q else None
    return InfoEstimate(i_w, i_b, K)


@dataclass(frozen=True)
class MatrixRoots:
    sqrt: np.ndarray
    inv_sqrt: np.ndarray


def matrix_inv_sqrt(m, floor: float = EIG_FLOOR) -> MatrixRoots:
    """Symmetric square root and inverse square root via eigh.

    Eigenvalues below ``floor`` are raised to it; an eigenvalue below
    -1e-8 means the input is not PSD and raises NumericalError.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("expected a square matrix")
    if not np.allclose(m, m.T, rtol=1e-10, atol=1e-12 * max(1.0, np.abs(m).max(initial=0))):
        raise ValueError("matrix is not symmetric")
    vals, vecs = np.linalg.eigh((m + m.T) / 2)
    if vals.size and vals.min() < -PSD_TOL:
        raise NumericalError(f"matrix is not positive semidefinite (eigenvalue {vals.min():.3g})")
    vals = np.maximum(vals, floor)
    root = np.sqrt(vals)
    return MatrixRoots((vecs * root) @ vecs.T, (vecs / root) @ vecs.T)


def normal_quantile(alpha: float) -> float:
    if not 0 < alpha < 1:
        raise ValueError("alpha must be in (0, 1)")
    return float(sps.norm.ppf(1 - alpha / 2))


def inverse_diagonal(s_matrix, names=None) -> np.ndarray:
    """diag(S^-1); a singular S raises NumericalError naming a coordinate."""
    S = np.asarray(s_matrix, dtype=float)
    d = S.shape[0]
    names = names or [f"coordinate {j + 1}" for j in range(d)]
    vals, vecs = np.linalg.eigh((S + S.T) / 2)
    scale = max(vals.max(initial=0.0), 1e-300)
    bad = vals <= EIG_FLOOR * scale
    if np.any(bad):
        # the coordinate loading most on the degenerate direction
        j = int(np.argmax(np.abs(vecs[:, np.argmin(vals)])))
        raise NumericalError(f"information matrix is singular along {names[j]}")
    return np.einsum("ij,j,ij->i", vecs, 1 / vals, vecs)


def wald_ci(theta_hat, s_matrix, alpha: float = 0.05, names=None) -> np.ndarray:
    """Per-coordinate intervals theta_j -/+ z_{1-alpha/2} sqrt([S^-1]_jj).

    Returns an array of shape (d, 2).
    """
    z = normal_quantile(alpha)
    theta = theta_hat.full if isinstance(theta_hat, ParamVector) else np.asarray(theta_hat, dtype=float)
    se = np.sqrt(inverse_diagonal(s_matrix, names))
    if se.shape != theta.shape:
        raise ValueError("theta and S have different dimensions")
    return np.column_stack([theta - z * se, theta + z * se])


def standardize(theta_hat, theta_true, s_matrix) -> np.ndarray:
    """(theta_hat - theta_true) / sqrt([S^-1]_jj), coordinatewise."""
    se = np.sqrt(inverse_diagonal(s_matrix))
    return (np.asarray(theta_hat, dtype=float) - np.asarray(theta_true, dtype=float)) / se


def qq_points(standardized) -> np.ndarray:
    """Pairs (Phi^-1((i - 0.5)/n), i-th smallest value), shape (n, 2)."""
    x = np.sort(np.asarray(standardized, dtype=float).reshape(-1))
    n = x.size
    if n == 0:
        raise ValueError("qq_points needs at least one value")
    theo = sps.norm.ppf((np.arange(1, n + 1) - 0.5) / n)
    return np.column_stack([theo, x])


def qq_max_deviation(points: np.ndarray) -> float:
    return float(np.max(np.abs(points[:, 1] - points[:, 0])))
