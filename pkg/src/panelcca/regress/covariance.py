"""Sandwich covariance estimators: HC0, Newey-West, cluster, cluster-HAC, CR2."""

from __future__ import annotations

import math

import numpy as np

from ..errors import ClusterCountError, InputError


def auto_lag(n: int) -> int:
    """Newey-West plug-in bandwidth floor(4 (n / 100)^(2/9))."""
    return int(math.floor(4 * (n / 100.0) ** (2.0 / 9.0)))


def resolve_lag(lag, n: int) -> int:
    if lag is None or lag == "auto":
        return auto_lag(n)
    lag = int(lag)
    if lag < 0:
        raise InputError(f"lag must be >= 0, got {lag}")
    return lag


def bartlett_weights(lag: int) -> np.ndarray:
    """w_l = 1 - l / (lag + 1) for l = 0..lag."""
    return 1.0 - np.arange(lag + 1) / (lag + 1.0)


def bread(X: np.ndarray) -> np.ndarray:
    return np.linalg.inv(X.T @ X)


def hc0_meat(X, resid):
    s = X * resid[:, None]
    return s.T @ s


def hac_meat(scores: np.ndarray, lag: int) -> np.ndarray:
    """Bartlett-weighted long-run covariance of a row-ordered score sequence."""
    meat = scores.T @ scores
    w = bartlett_weights(lag)
    for l in range(1, min(lag, len(scores) - 1) + 1):
        gamma = scores[l:].T @ scores[:-l]
        meat += w[l] * (gamma + gamma.T)
    return meat


def newey_west_cov(X, resid, lag) -> np.ndarray:
    """Newey-West HAC covariance for rows in time order. lag=0 gives HC0."""
    X = np.asarray(X, dtype=float)
    resid = np.asarray(resid, dtype=float)
    B = bread(X)
    meat = hac_meat(X * resid[:, None], lag)
    return B @ meat @ B


def _cluster_index(clusters):
    labels, codes = np.unique(np.asarray(clusters), return_inverse=True)
    if len(labels) < 2:
        raise ClusterCountError(f"cluster-robust covariance needs >= 2 clusters, got {len(labels)}")
    return labels, codes


def cluster_meat(scores, clusters, times=None, lag=None) -> np.ndarray:
    """Sum over clusters of within-cluster score outer products.

    With ``lag`` given, cross-products at time distance l inside a cluster get
    Bartlett weight 1 - l/(lag+1) and vanish beyond ``lag`` (within-cluster
    HAC); without it every within-cluster pair counts fully (Arellano).
    """
    labels, codes = _cluster_index(clusters)
    k = scores.shape[1]
    meat = np.zeros((k, k))
    if lag is None:
        sums = np.zeros((len(labels), k))
        np.add.at(sums, codes, scores)
        return sums.T @ sums
    if times is None:
        raise InputError("within-cluster HAC needs observation times")
    times = np.asarray(times, dtype=np.int64)
    w = bartlett_weights(lag)
    for g in range(len(labels)):
        idx = np.flatnonzero(codes == g)
        t = times[idx]
        span = t.max() - t.min() + 1
        dense = np.zeros((span, k))
        np.add.at(dense, t - t.min(), scores[idx])
        meat += dense.T @ dense
        for l in range(1, min(lag, span - 1) + 1):
            gamma = dense[l:].T @ dense[:-l]
            meat += w[l] * (gamma + gamma.T)
    return meat


def cluster_cov(X, resid, clusters, times=None, lag=None) -> np.ndarray:
    """Arellano cluster-robust covariance, optionally with within-cluster HAC."""
    X = np.asarray(X, dtype=float)
    resid = np.asarray(resid, dtype=float)
    B = bread(X)
    meat = cluster_meat(X * resid[:, None], clusters, times, lag)
    return B @ meat @ B


def _sym_inv_sqrt(S, rtol=1e-12):
    vals, vecs = np.linalg.eigh((S + S.T) / 2)
    cut = rtol * max(vals.max(), 0.0)
    inv = np.where(vals > cut, 1.0 / np.sqrt(np.where(vals > cut, vals, 1.0)), 0.0)
    return (vecs * inv) @ vecs.T


def cr2_adjustment(phi_g, S_g):
    """A_g with A_g S_g A_g' = Phi_g (Bell-McCaffrey / Pustejovsky-Tipton form).

    ``phi_g`` is the working covariance block of cluster g and ``S_g`` the
    model-implied covariance of its residuals, (I - H)_g Phi (I - H)_g'.
    """
    L = np.linalg.cholesky(phi_g)
    Linv = np.linalg.inv(L)
    C = Linv @ S_g @ Linv.T
    return L @ _sym_inv_sqrt(C) @ Linv


def cr2_cov(X, resid, clusters, phi_blocks=None):
    """CR2 bias-reduced cluster-robust covariance for (weighted) least squares.

    ``phi_blocks`` maps each cluster label to its working covariance block
    (rows in data order within the cluster); weights are its inverse. With
    no blocks the working model is Phi = I, i.e. OLS, and the adjustment is
    (I - H_gg)^(-1/2).
    """
    X = np.asarray(X, dtype=float)
    resid = np.asarray(resid, dtype=float)
    labels, codes = _cluster_index(clusters)
    groups = [np.flatnonzero(codes == g) for g in range(len(labels))]
    if phi_blocks is None:
        phis = [np.eye(len(idx)) for idx in groups]
    else:
        phis = [np.asarray(phi_blocks[lab], dtype=float) for lab in labels]
    winv = [np.linalg.inv(p) for p in phis]
    xtwx = sum(X[idx].T @ w @ X[idx] for idx, w in zip(groups, winv))
    M = np.linalg.inv(xtwx)
    k = X.shape[1]
    meat = np.zeros((k, k))
    for idx, phi, w in zip(groups, phis, winv):
        Xg = X[idx]
        S = phi - Xg @ M @ Xg.T
        A = cr2_adjustment(phi, S)
        v = Xg.T @ w @ A @ resid[idx]
        meat += np.outer(v, v)
    return M @ meat @ M
