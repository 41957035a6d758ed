"""Closed-form conditional moments of exposure components given the sample.

Conditional on the sampling indicators (and hence on the realized networks),
every cataloged exposure component reduces, unit by unit, to one of three
shapes in the independent Bernoulli latent treatments:

- ``Linear``:    c + sum_k w_k D*_k
- ``AnyOf``:     1{ sum_{k in S} D*_k > 0 }
- ``OwnTimes``:  D*_o x (c + sum_k w_k D*_k), with o outside the affine support

Products of such terms have exact first and second moments, so conditional
means, covariances, and cross-covariances between an observed and a true
exposure vector never require inner simulation. The enumeration oracle in the
test suite checks these formulas against brute force.

For all-linear component sets the per-unit covariance blocks collapse to
row-aligned sparse dots, evaluated by the kernel backends.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels

CSR = tuple  # (indptr, cols, vals), columns sorted within each row


@dataclass(frozen=True)
class Linear:
    const: float
    idx: np.ndarray
    w: np.ndarray


@dataclass(frozen=True)
class AnyOf:
    idx: np.ndarray  # sampled coordinates only


@dataclass(frozen=True)
class OwnTimes:
    own: int
    base: Linear


ZERO = Linear(0.0, np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.float64))


def linear(const, idx, w) -> Linear:
    idx = np.asarray(idx, dtype=np.int64)
    w = np.asarray(w, dtype=np.float64)
    if idx.size and not np.all(idx[:-1] < idx[1:]):
        order = np.argsort(idx)
        idx, w = idx[order], w[order]
    return Linear(float(const), idx, w)


def term_mean(t, p) -> float:
    if isinstance(t, Linear):
        return t.const + float(t.w @ p[t.idx])
    if isinstance(t, AnyOf):
        return 1.0 - float(np.prod(1.0 - p[t.idx]))
    if isinstance(t, OwnTimes):
        return float(p[t.own]) * term_mean(t.base, p)
    raise TypeError(type(t))


def _cross_ll(a: Linear, b: Linear, p) -> float:
    out = term_mean(a, p) * term_mean(b, p)
    shared, ia, ib = np.intersect1d(a.idx, b.idx, assume_unique=True,
                                    return_indices=True)
    if shared.size:
        ps = p[shared]
        out += float(np.sum(a.w[ia] * b.w[ib] * ps * (1.0 - ps)))
    return out


def _cross_la(a: Linear, b: AnyOf, p) -> float:
    q = float(np.prod(1.0 - p[b.idx]))
    ma = term_mean(a, p)
    shared, ia, _ = np.intersect1d(a.idx, b.idx, assume_unique=True,
                                   return_indices=True)
    inside = float(np.sum(a.w[ia] * p[shared])) if shared.size else 0.0
    return ma - q * (ma - inside)


def _cross_aa(a: AnyOf, b: AnyOf, p) -> float:
    qa = float(np.prod(1.0 - p[a.idx]))
    qb = float(np.prod(1.0 - p[b.idx]))
    union = np.union1d(a.idx, b.idx)
    return 1.0 - qa - qb + float(np.prod(1.0 - p[union]))


def _strip(l: Linear, coord: int):
    pos = np.searchsorted(l.idx, coord)
    if pos < l.idx.size and l.idx[pos] == coord:
        keep = np.ones(l.idx.size, dtype=bool)
        keep[pos] = False
        return float(l.w[pos]), Linear(l.const, l.idx[keep], l.w[keep])
    return 0.0, l


def term_cross(a, b, p) -> float:
    """E[a * b] for two terms of the same unit, conditional on the sample."""
    if isinstance(a, OwnTimes) and isinstance(b, OwnTimes):
        if a.own != b.own:
            raise NotImplementedError(
                "cross moments of interactions with different own coordinates")
        return float(p[a.own]) * _cross_ll(a.base, b.base, p)
    if isinstance(b, OwnTimes):
        a, b = b, a
    if isinstance(a, OwnTimes):
        po = float(p[a.own])
        if isinstance(b, Linear):
            w_own, rest = _strip(b, a.own)
            return po * (w_own * term_mean(a.base, p) + _cross_ll(a.base, rest, p))
        if isinstance(b, AnyOf):
            pos = np.searchsorted(b.idx, a.own)
            if pos < b.idx.size and b.idx[pos] == a.own:
                return po * term_mean(a.base, p)
            return po * _cross_la(a.base, b, p)
        raise TypeError(type(b))
    if isinstance(a, AnyOf) and isinstance(b, Linear):
        a, b = b, a
    if isinstance(a, Linear) and isinstance(b, Linear):
        return _cross_ll(a, b, p)
    if isinstance(a, Linear) and isinstance(b, AnyOf):
        return _cross_la(a, b, p)
    if isinstance(a, AnyOf) and isinstance(b, AnyOf):
        return _cross_aa(a, b, p)
    raise TypeError((type(a), type(b)))


def term_cov(a, b, p) -> float:
    return term_cross(a, b, p) - term_mean(a, p) * term_mean(b, p)


def unit_cov_blocks(terms_a, terms_b, p):
    """Per-unit conditional covariance blocks between two term vectors.

    ``terms_a``/``terms_b`` are length-n lists of per-unit term lists (one
    term per component). Returns an (n, da, db) array of Cov(a_k, b_l | R).
    """
    n = len(terms_a)
    da = len(terms_a[0]) if n else 0
    db = len(terms_b[0]) if n else 0
    out = np.zeros((n, da, db))
    for i in range(n):
        ta, tb = terms_a[i], terms_b[i]
        ma = [term_mean(t, p) for t in ta]
        mb = [term_mean(t, p) for t in tb]
        for k in range(da):
            for l in range(db):
                out[i, k, l] = term_cross(ta[k], tb[l], p) - ma[k] * mb[l]
    return out


def linear_cov_blocks(rows_a, rows_b, scale):
    """Per-unit covariance blocks when every component is linear.

    ``rows_a``/``rows_b`` are per-component CSR coefficient matrices (already
    masked to sampled coordinates when conditioning on R); ``scale`` is the
    per-coordinate variance of the latent treatment, or rho-weighted variance
    in the unconditional population case.
    """
    da, db = len(rows_a), len(rows_b)
    n = rows_a[0][0].size - 1 if da else 0
    out = np.zeros((n, da, db))
    for k in range(da):
        for l in range(db):
            out[:, k, l] = _kernels.row_pair_dots(rows_a[k], rows_b[l], scale)
    return out


def mask_rows(rows: CSR, keep: np.ndarray) -> CSR:
    """Zero out coefficient columns where ``keep`` is false (e.g. unsampled)."""
    indptr, cols, vals = rows
    return (indptr, cols, vals * keep[cols])
