"""Compiled Metropolis edge-toggle chain for one block-based subgraph.

Within-block adjacency is held as uint64 bitset rows so that common
neighbors and neighborhoods are visited word by word, touching only set
bits.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

from .rng import mix64, to_unit

_DEBRUIJN = np.uint64(0x03F79D71B4CB0A89)
_DEBRUIJN_TABLE = np.array([
    0, 1, 48, 2, 57, 49, 28, 3, 61, 58, 50, 42, 38, 29, 17, 4,
    62, 55, 59, 36, 53, 51, 43, 22, 45, 39, 33, 30, 24, 18, 12, 5,
    63, 47, 56, 27, 60, 41, 37, 16, 54, 35, 52, 21, 44, 32, 23, 11,
    46, 26, 40, 15, 34, 20, 31, 10, 25, 14, 19, 9, 13, 8, 7, 6,
], dtype=np.int64)


@njit(inline="always")
def _lowest_bit(w):
    """Index of the lowest set bit of a non-zero uint64."""
    iso = w & (~w + np.uint64(1))
    return _DEBRUIJN_TABLE[(iso * _DEBRUIJN) >> np.uint64(58)]


def pack_rows(adj: np.ndarray) -> np.ndarray:
    """Dense a x a 0/1 adjacency -> a x ceil(a/64) uint64 bitset rows."""
    a = adj.shape[0]
    nw = max(1, (a + 63) // 64)
    rows = np.zeros((a, nw), dtype=np.uint64)
    r, c = np.nonzero(adj)
    np.bitwise_or.at(rows, (r, c // 64), np.left_shift(np.uint64(1), (c % 64).astype(np.uint64)))
    return rows


@njit(cache=True, nogil=True)
def transitive_delta(rows, sp, i, j, adding):
    """Change in the transitive-edge count from toggling {i, j}."""
    nw = rows.shape[1]
    dt = 0
    if sp[i, j] > 0:
        dt += 1
    thresh = 0 if adding else 1
    for wi in range(nw):
        w = rows[i, wi] & rows[j, wi]
        while w:
            h = wi * 64 + _lowest_bit(w)
            w &= w - np.uint64(1)
            if sp[i, h] == thresh:
                dt += 1
            if sp[j, h] == thresh:
                dt += 1
    return dt if adding else -dt


@njit(cache=True, nogil=True)
def _apply_toggle(rows, sp, i, j, sign):
    nw = rows.shape[1]
    for wi in range(nw):
        w = rows[i, wi]
        while w:
            h = wi * 64 + _lowest_bit(w)
            w &= w - np.uint64(1)
            if h != j:
                sp[j, h] += sign
                sp[h, j] += sign
        w = rows[j, wi]
        while w:
            h = wi * 64 + _lowest_bit(w)
            w &= w - np.uint64(1)
            if h != i:
                sp[i, h] += sign
                sp[h, i] += sign
    bi = np.uint64(1) << np.uint64(j % 64)
    bj = np.uint64(1) << np.uint64(i % 64)
    rows[i, j // 64] ^= bi
    rows[j, i // 64] ^= bj


@njit(cache=True, nogil=True)
def toggle_chain(x, rows, sp, pu, pv, eta, tri_coef, weights, tvec, use_tri,
                 stats, key, n_burn, n_interval, n_samples, out_stats,
                 record_codes, out_codes, record_states, out_states):
    """Run an edge-toggle Metropolis chain in place.

    x        -- uint8 state of the D edge variables (mutated)
    rows, sp -- bitset adjacency rows and shared-partner counts over local
                ranks; only used when ``use_tri`` (within-block subgraph
                with transitive terms)
    pu, pv   -- local ranks of each edge variable
    eta      -- edge-term log-odds per variable
    tri_coef -- sum of natural parameters of the transitive coordinates
    weights, tvec -- edge-term weight matrix and transitive marker
    stats    -- current statistic of the state (mutated)

    Retains ``n_samples`` states, one every ``n_interval`` proposals after
    ``n_burn`` proposals.  Retained statistics go to ``out_stats``; with
    ``record_codes`` the state as a bit code (D <= 62) goes to
    ``out_codes``, with ``record_states`` the 0/1 vector to ``out_states``.
    Returns the final draw counter.
    """
    D = x.shape[0]
    d = stats.shape[0]
    code = np.int64(0)
    if record_codes:
        for e in range(D):
            if x[e]:
                code |= np.int64(1) << e
    counter = np.uint64(0)
    total = n_burn + n_interval * n_samples
    kept = 0
    since = -n_burn
    uD = np.uint64(D)
    for step in range(total):
        counter += np.uint64(1)
        e = np.int64(mix64(key, counter) % uD)
        adding = x[e] == 0
        sign = 1 if adding else -1
        dtri = 0
        if use_tri:
            dtri = transitive_delta(rows, sp, pu[e], pv[e], adding)
        logr = sign * eta[e] + tri_coef * dtri
        accept = True
        if logr < 0.0:
            counter += np.uint64(1)
            accept = to_unit(mix64(key, counter)) < math.exp(logr)
        if accept:
            x[e] = 1 if adding else 0
            for c in range(d):
                stats[c] += sign * weights[e, c] + dtri * tvec[c]
            if record_codes:
                code ^= np.int64(1) << e
            if use_tri:
                _apply_toggle(rows, sp, pu[e], pv[e], sign)
        since += 1
        if since > 0 and since % n_interval == 0:
            for c in range(d):
                out_stats[kept, c] = stats[c]
            if record_codes:
                out_codes[kept] = code
            if record_states:
                for f in range(D):
                    out_states[kept, f] = x[f]
            kept += 1
    return counter
