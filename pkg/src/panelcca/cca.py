"""Two-set canonical correlation analysis with Wilks' lambda tests."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import stats

from .errors import ConditioningError, InputError
from .preprocess import FilterSpec, gaussian_filter

DEFAULT_SPANS = ((1618, 1648, "thirty-years-war"),)
DEFAULT_MARKERS = (1634, 1635, 1636)


class DuplicateColumnWarning(UserWarning):
    pass


def _duplicate_columns(M):
    """Indices of columns identical to an earlier column."""
    dup = []
    seen = {}
    for j in range(M.shape[1]):
        key = M[:, j].tobytes()
        if key in seen:
            dup.append(j)
        else:
            seen[key] = j
    return dup


@dataclass
class CcaInput:
    """Centered copies of X (T x p) and Y (T x q) with their column statistics."""

    X: np.ndarray
    Y: np.ndarray
    x_mean: np.ndarray
    y_mean: np.ndarray
    x_sd: np.ndarray
    y_sd: np.ndarray
    x_keep: np.ndarray
    y_keep: np.ndarray
    p_original: int
    q_original: int

    @classmethod
    def from_arrays(cls, X, Y, scale: bool = False, collapse_duplicates: bool = True) -> "CcaInput":
        X = np.asarray(X, dtype=float)
        Y = np.asarray(Y, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if Y.ndim == 1:
            Y = Y[:, None]
        if X.shape[0] != Y.shape[0]:
            raise InputError(f"X has {X.shape[0]} rows, Y has {Y.shape[0]}")
        if not (np.isfinite(X).all() and np.isfinite(Y).all()):
            raise InputError("CCA inputs must be finite (drop or impute missing rows first)")
        blocks = []
        for M, label in ((X, "X"), (Y, "Y")):
            keep = np.arange(M.shape[1])
            if collapse_duplicates:
                dup = _duplicate_columns(M)
                if dup:
                    warnings.warn(f"{label}: dropping {len(dup)} duplicate column(s) {dup}", DuplicateColumnWarning, stacklevel=3)
                    keep = np.setdiff1d(keep, dup)
            Mk = M[:, keep]
            mean = Mk.mean(axis=0)
            C = Mk - mean
            sd = C.std(axis=0, ddof=1)
            if scale:
                if np.any(sd == 0):
                    raise InputError(f"{label}: constant column cannot be scaled")
                C = C / sd
            blocks.append((C, mean, sd, keep))
        (Xc, xm, xs, xk), (Yc, ym, ys, yk) = blocks
        T = Xc.shape[0]
        if T <= max(Xc.shape[1], Yc.shape[1]):
            raise InputError(f"CCA needs more rows than columns: T={T}, p={Xc.shape[1]}, q={Yc.shape[1]}")
        return cls(Xc, Yc, xm, ym, xs, ys, xk, yk, X.shape[1], Y.shape[1])


@dataclass
class CanonicalResult:
    a_weights: np.ndarray
    b_weights: np.ndarray
    correlations: np.ndarray
    U: np.ndarray
    V: np.ndarray
    all_correlations: np.ndarray
    sxx: np.ndarray
    sxy: np.ndarray
    syy: np.ndarray
    n_obs: int
    p: int
    q: int
    ridge: tuple = (0.0, 0.0)

    @property
    def k(self) -> int:
        return len(self.correlations)

    def to_dict(self) -> dict:
        return {
            "correlations": self.correlations,
            "all_correlations": self.all_correlations,
            "a_weights": self.a_weights.T,
            "b_weights": self.b_weights.T,
            "n_obs": self.n_obs,
            "p": self.p,
            "q": self.q,
            "ridge": list(self.ridge),
        }


@dataclass
class WilksTest:
    lambdas: np.ndarray
    chi2: np.ndarray
    df: np.ndarray
    pvalues: np.ndarray
    saturated: np.ndarray = field(default=None)

    def to_dict(self) -> dict:
        return {
            "lambda": self.lambdas,
            "chi2": self.chi2,
            "df": self.df,
            "p_values": self.pvalues,
            "saturated": self.saturated,
        }


def _inv_sqrt(S, label, ridge):
    vals, vecs = np.linalg.eigh(S)
    if vals.min() <= 1e-12 * max(vals.max(), 1e-300):
        raise ConditioningError(
            f"{label} covariance is singular (smallest eigenvalue {vals.min():.3e}); "
            "enable a ridge or collapse duplicate columns",
            smallest_eigenvalue=float(vals.min()),
        )
    return (vecs / np.sqrt(vals)) @ vecs.T


def _ridge_amount(ridge, S):
    if ridge is None or ridge is False:
        return 0.0
    if ridge is True:
        return 1e-8 * np.trace(S) / S.shape[0]
    return float(ridge)


def fit_cca(X, Y, k: int | None = None, *, ridge=None, scale: bool = False, collapse_duplicates: bool = True) -> CanonicalResult:
    """Canonical correlation analysis via SVD of the whitened cross-covariance.

    Parameters
    ----------
    X, Y : array (T, p), (T, q) or CcaInput
    k : number of components kept (default ``min(p, q)``)
    ridge : None/False (off), True (1e-8 * trace / dim) or a float added to
        the diagonal of both within-set covariances.
    collapse_duplicates : drop columns identical to an earlier one; their
        weights are reported as 0.

    Weights are normalized so each canonical variate has unit sample variance
    (1/(T-1) convention); the largest-magnitude entry of each X weight vector
    is positive.
    """
    data = X if isinstance(X, CcaInput) else CcaInput.from_arrays(X, Y, scale=scale, collapse_duplicates=collapse_duplicates)
    Xc, Yc = data.X, data.Y
    T, p = Xc.shape
    q = Yc.shape[1]
    s = min(p, q)
    k = s if k is None else int(k)
    if not 1 <= k <= s:
        raise InputError(f"k must lie in [1, {s}], got {k}")
    sxx = Xc.T @ Xc / (T - 1)
    syy = Yc.T @ Yc / (T - 1)
    sxy = Xc.T @ Yc / (T - 1)
    rx, ry = _ridge_amount(ridge, sxx), _ridge_amount(ridge, syy)
    wx = _inv_sqrt(sxx + rx * np.eye(p), "X", ridge)
    wy = _inv_sqrt(syy + ry * np.eye(q), "Y", ridge)
    u, sv, vt = np.linalg.svd(wx @ sxy @ wy)
    sv = np.clip(sv[:s], 0.0, 1.0)
    a = wx @ u[:, :s]
    b = wy @ vt[:s].T
    for j in range(s):
        i = np.argmax(np.abs(a[:, j]))
        if a[i, j] < 0:
            a[:, j] *= -1
            b[:, j] *= -1
    A = np.zeros((data.p_original, s))
    B = np.zeros((data.q_original, s))
    A[data.x_keep] = a / data.x_sd[:, None] if scale else a
    B[data.y_keep] = b / data.y_sd[:, None] if scale else b
    return CanonicalResult(
        a_weights=A[:, :k], b_weights=B[:, :k], correlations=sv[:k],
        U=Xc @ a[:, :k], V=Yc @ b[:, :k], all_correlations=sv,
        sxx=sxx, sxy=sxy, syy=syy, n_obs=T, p=p, q=q, ridge=(rx, ry),
    )


def wilks_lambda(result: CanonicalResult, T: int | None = None) -> WilksTest:
    """Sequential Wilks' lambda tests with Bartlett's chi-square approximation.

    Entry k (0-based) tests that canonical correlations k+1..s are all zero:
    Lambda_k = prod_{i>=k} (1 - rho_i^2), statistic
    -(T - 1 - (p + q + 1)/2) ln Lambda_k on (p - k)(q - k) degrees of freedom.
    """
    T = result.n_obs if T is None else int(T)
    rho = np.asarray(result.all_correlations, dtype=float)
    p, q = result.p, result.q
    s = len(rho)
    lambdas = np.empty(s)
    chi2 = np.empty(s)
    df = np.empty(s, dtype=int)
    pv = np.empty(s)
    sat = np.zeros(s, dtype=bool)
    factor = T - 1 - (p + q + 1) / 2.0
    for k in range(s):
        one_minus = 1.0 - rho[k:] ** 2
        df[k] = (p - k) * (q - k)
        if np.any(one_minus <= 0):
            lambdas[k], chi2[k], pv[k], sat[k] = 0.0, np.inf, 0.0, True
            continue
        lam = float(np.prod(one_minus))
        lambdas[k] = lam
        chi2[k] = -factor * np.log(lam)
        pv[k] = float(stats.chi2.sf(chi2[k], df[k])) if chi2[k] > 0 else 1.0
    return WilksTest(lambdas, chi2, df, pv, sat)


def canonical_variates_series(result: CanonicalResult, years, components: int = 1, filter_spec: FilterSpec | None = None, spans=DEFAULT_SPANS, markers=DEFAULT_MARKERS) -> pd.DataFrame:
    """Per-year canonical variates, raw and Gaussian-filtered, with event labels.

    Columns: year, U1, V1, U1_filtered, V1_filtered, ... and ``event``, a
    ';'-joined list of span names covering the year and ``marker`` for marked years.
    """
    years = np.asarray(years)
    if len(years) != result.U.shape[0]:
        raise InputError("years must have one entry per canonical variate row")
    filter_spec = filter_spec or FilterSpec()
    cols = {"year": years}
    for c in range(min(components, result.k)):
        cols[f"U{c + 1}"] = result.U[:, c]
        cols[f"V{c + 1}"] = result.V[:, c]
    for c in range(min(components, result.k)):
        cols[f"U{c + 1}_filtered"] = gaussian_filter(result.U[:, c], filter_spec)
        cols[f"V{c + 1}_filtered"] = gaussian_filter(result.V[:, c], filter_spec)
    labels = []
    marker_set = set(int(m) for m in markers)
    for y in years:
        tags = [name for start, end, name in spans if start <= y <= end]
        if int(y) in marker_set:
            tags.append("marker")
        labels.append(";".join(tags))
    cols["event"] = labels
    return pd.DataFrame(cols)
