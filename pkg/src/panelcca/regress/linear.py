"""Pooled OLS with Newey-West errors and two-way fixed effects with clustered errors."""

from __future__ import annotations

import numpy as np
from scipy import linalg

from ..errors import ClusterCountError, CollinearityError, ConvergenceError, InputError
from .covariance import cluster_cov, newey_west_cov, resolve_lag
from .results import PanelObservations, RegressionResult, normal_pvalues

REGRESSORS = ("temp", "pdsi")
COV_TYPES = ("cluster-hac", "cluster")


def check_rank(X, names, rtol=1e-10, ref_norms=None):
    """Raise CollinearityError naming the columns that pivoted QR finds dependent.

    ``ref_norms`` gives per-column norms before a transformation (e.g. the
    within transform), so a column wiped out by it is caught.
    """
    X = np.asarray(X, dtype=float)
    norms = np.linalg.norm(X, axis=0)
    if ref_norms is None:
        ref = np.full(X.shape[1], norms.max() if norms.size and norms.max() > 0 else 1.0)
    else:
        ref = np.maximum(np.asarray(ref_norms, dtype=float), np.finfo(float).tiny)
    dead = [names[j] for j in range(X.shape[1]) if norms[j] <= rtol * ref[j]]
    if dead:
        raise CollinearityError(dead)
    _, R, piv = linalg.qr(X / norms, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > rtol * diag[0]))
    if rank < X.shape[1]:
        raise CollinearityError([names[j] for j in piv[rank:]])


def lstsq_fit(y, X):
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    return beta, y - X @ beta


def demean_groups(values, codes_list, tol=1e-14, max_iter=10_000):
    """Project columns onto the orthogonal complement of the given group dummies.

    One grouping is a single exact pass; several groupings use alternating
    projections, which converge to the exact within transformation on
    unbalanced panels as well.
    """
    v = np.array(values, dtype=float, copy=True)
    squeeze = v.ndim == 1
    if squeeze:
        v = v[:, None]
    counts = [np.bincount(c) for c in codes_list]

    def sweep(a):
        for codes, cnt in zip(codes_list, counts):
            sums = np.zeros((len(cnt), a.shape[1]))
            np.add.at(sums, codes, a)
            a = a - (sums / cnt[:, None])[codes]
        return a

    scale = max(np.abs(v).max(), 1.0) if v.size else 1.0
    v = sweep(v)
    if len(codes_list) > 1:
        for _ in range(max_iter):
            nxt = sweep(v)
            delta = np.abs(nxt - v).max() if v.size else 0.0
            v = nxt
            if delta <= tol * scale:
                break
        else:
            raise ConvergenceError("alternating demeaning did not converge")
    return v[:, 0] if squeeze else v


def ols_newey_west(data: PanelObservations, lag="auto") -> RegressionResult:
    """Pooled OLS of cpi on (const, temp, pdsi) with Newey-West HAC errors.

    Rows are taken as one stacked sequence ordered by (location, year); the
    automatic bandwidth uses the number of rows.
    """
    d = data.complete_cases()
    names = ["const", *REGRESSORS]
    n = len(d)
    if n < len(names) + 1:
        raise InputError(f"OLS needs at least {len(names) + 1} complete cases, got {n}")
    X = np.column_stack([np.ones(n), d.temp, d.pdsi])
    check_rank(X, names)
    beta, resid = lstsq_fit(d.cpi, X)
    L = resolve_lag(lag, n)
    cov = newey_west_cov(X, resid, L)
    se = np.sqrt(np.diag(cov))
    return RegressionResult(
        names, beta, se, normal_pvalues(beta, se), resid, n, "ols-nw", cov,
        info={"lag": L, "kernel": "bartlett"},
    )


def _two_way_effects(resid_total, loc_codes, year_codes, n_loc, n_year):
    """Recover location and year intercepts from y - X b by dummy least squares.

    Normalization: the first year's effect is zero.
    """
    n = len(resid_total)
    D = np.zeros((n, n_loc + n_year - 1))
    D[np.arange(n), loc_codes] = 1.0
    mask = year_codes > 0
    D[np.flatnonzero(mask), n_loc + year_codes[mask] - 1] = 1.0
    coef, *_ = np.linalg.lstsq(D, resid_total, rcond=None)
    return coef[:n_loc], np.concatenate([[0.0], coef[n_loc:]])


def fe_twoway_arellano(data: PanelObservations, cov_type: str = "cluster-hac", lag="auto") -> RegressionResult:
    """Two-way (location + year) fixed-effects regression of cpi on temp, pdsi.

    Coefficients come from the within transformation and equal dummy-variable
    OLS. The covariance is clustered by location: ``cluster`` is the Arellano
    estimator, ``cluster-hac`` additionally Bartlett-weights within-location
    cross-products by their year distance (``lag`` years, auto rule on the
    number of distinct years).
    """
    if cov_type not in COV_TYPES:
        raise InputError(f"cov_type must be one of {COV_TYPES}")
    d = data.complete_cases()
    locs, loc_codes = np.unique(d.location, return_inverse=True)
    yrs, year_codes = np.unique(d.year, return_inverse=True)
    if len(locs) < 2:
        raise ClusterCountError(f"fixed effects with location clusters need >= 2 locations, got {len(locs)}")
    if len(yrs) < 2:
        raise InputError("two-way fixed effects need at least 2 years")
    names = list(REGRESSORS)
    X = np.column_stack([d.temp, d.pdsi])
    Z = demean_groups(np.column_stack([d.cpi, X]), [loc_codes, year_codes])
    yw, Xw = Z[:, 0], Z[:, 1:]
    check_rank(Xw, names, rtol=1e-9, ref_norms=np.linalg.norm(X, axis=0))
    beta, resid = lstsq_fit(yw, Xw)
    if cov_type == "cluster":
        L = None
        cov = cluster_cov(Xw, resid, d.location)
    else:
        L = resolve_lag(lag, len(yrs))
        cov = cluster_cov(Xw, resid, d.location, times=d.year, lag=L)
    se = np.sqrt(np.diag(cov))
    gamma, lam = _two_way_effects(d.cpi - X @ beta, loc_codes, year_codes, len(locs), len(yrs))
    return RegressionResult(
        names, beta, se, normal_pvalues(beta, se), resid, len(d), "fe-arellano", cov,
        location_effects=dict(zip(locs.tolist(), gamma)),
        year_effects=dict(zip(yrs.tolist(), lam)),
        info={"cov_type": cov_type, "lag": L, "n_clusters": int(len(locs)), "n_years": int(len(yrs))},
    )
