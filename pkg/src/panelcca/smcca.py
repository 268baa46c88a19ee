"""Sparse multiple-set CCA by block coordinate ascent.

Maximizes sum_{i<j} w_i' X_i' X_j w_j subject to ||w_k||_2 <= 1 and
||w_k||_1 <= c_k, treating each X_k' X_k as the identity inside the update.
Each block update is the exact maximizer of a linear function over the
L1/L2 constraint set, so the objective never decreases.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import pandas as pd

from .errors import DegenerateInitializationError, DomainError, InputError, ZeroGradientError


def soft_threshold(v, delta: float) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return np.sign(v) * np.maximum(np.abs(v) - delta, 0.0)


def l1_constrained_unit(v, c: float, tol: float = 0.0, max_iter: int = 500) -> np.ndarray:
    """Unit-L2 vector maximizing w'v subject to ||w||_1 <= c.

    Returns S(v, D) / ||S(v, D)||_2 for the smallest threshold D >= 0 meeting
    the L1 bound, located by bisection. The default ``tol=0`` bisects until
    the bracket collapses to adjacent floats, so the projection is exact to
    rounding and the block ascent stays monotone at convergence.
    """
    v = np.asarray(v, dtype=float)
    if not np.any(v):
        raise ZeroGradientError("zero update vector; reinitialize")
    if not 1.0 - 1e-12 <= c <= np.sqrt(len(v)) + 1e-12:
        raise DomainError(f"L1 bound {c} outside [1, sqrt({len(v)})]")

    def unit(delta):
        w = soft_threshold(v, delta)
        return w / np.linalg.norm(w)

    w = unit(0.0)
    if np.abs(w).sum() <= c:
        return w
    a = np.abs(v)
    top = np.flatnonzero(a == a.max())
    if c <= 1.0 + 1e-12:
        # L1 = L2 = 1 admits only 1-sparse vectors; mass goes on the first argmax
        w = np.zeros_like(v)
        w[top[0]] = np.sign(v[top[0]])
        return w
    if len(top) > 1 and c < np.sqrt(len(top)):
        # tied maxima cannot be separated by thresholding; spreading c evenly
        # over them attains the L1 bound c * max|v| with ||w||_2 < 1
        w = np.zeros_like(v)
        w[top] = np.sign(v[top]) * c / len(top)
        return w
    # at the second-largest distinct |v| only the top entries survive
    levels = np.unique(a)
    lo = 0.0
    hi = float(levels[-2]) if len(levels) > 1 else float(levels[-1]) * (1 - 1e-12)
    for _ in range(max_iter):
        if hi - lo <= tol:
            break
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if np.abs(unit(mid)).sum() <= c:
            hi = mid
        else:
            lo = mid
    return unit(hi)


@dataclass
class SmccaProblem:
    datasets: list
    c: np.ndarray
    max_sweeps: int = 500
    tol: float = 1e-10

    def __post_init__(self):
        self.datasets = [np.asarray(X, dtype=float) for X in self.datasets]
        if len(self.datasets) < 2:
            raise InputError("SMCCA needs at least two datasets")
        T = self.datasets[0].shape[0]
        for k, X in enumerate(self.datasets):
            if X.ndim != 2 or X.shape[0] != T:
                raise InputError(f"dataset {k} must be a T x p_k matrix with T={T}")
            if not np.isfinite(X).all():
                raise InputError(f"dataset {k} has missing values")
        self.c = np.broadcast_to(np.asarray(self.c, dtype=float), (len(self.datasets),)).copy()
        for k, (X, ck) in enumerate(zip(self.datasets, self.c)):
            if not 1.0 - 1e-12 <= ck <= np.sqrt(X.shape[1]) + 1e-12:
                raise DomainError(f"c[{k}] = {ck} outside feasible range [1, sqrt({X.shape[1]})]")

    @property
    def dims(self):
        return [X.shape[1] for X in self.datasets]

    @classmethod
    def from_lambda(cls, datasets, lam: float, **kw) -> "SmccaProblem":
        """Bounds c_k = 1 + lam * (sqrt(p_k) - 1), lam in (0, 1]."""
        if not 0 < lam <= 1:
            raise DomainError(f"lambda must lie in (0, 1], got {lam}")
        c = [1 + lam * (np.sqrt(np.asarray(X).shape[1]) - 1) for X in datasets]
        return cls(list(datasets), c, **kw)


@dataclass
class SmccaResult:
    weights: list
    variates: np.ndarray
    objective_trajectory: list
    converged: bool
    sweeps_used: int
    l1_trajectory: list = field(default_factory=list)
    l2_trajectory: list = field(default_factory=list)

    @property
    def objective(self) -> float:
        return self.objective_trajectory[-1]

    def variate_correlations(self) -> np.ndarray:
        """Post-hoc Pearson correlations between dataset variates."""
        return np.corrcoef(self.variates, rowvar=False)

    def to_dict(self) -> dict:
        return {
            "weights": self.weights,
            "objective": self.objective,
            "objective_trajectory": self.objective_trajectory,
            "converged": self.converged,
            "sweeps_used": self.sweeps_used,
            "nonzero": [int(np.count_nonzero(w)) for w in self.weights],
            "variate_correlations": self.variate_correlations(),
        }


def standardize_columns(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    sd = X.std(axis=0, ddof=1)
    if np.any(sd == 0):
        raise InputError("cannot standardize a constant column")
    return (X - X.mean(axis=0)) / sd


def _objective(projections):
    total = 0.0
    K = len(projections)
    for i in range(K):
        for j in range(i + 1, K):
            total += float(projections[i] @ projections[j])
    return total


def _pin_sign(w):
    i = np.argmax(np.abs(w))
    return -w if w[i] < 0 else w


def _initial_weights(problem, init, seed):
    out = []
    if init == "svd":
        for X in problem.datasets:
            _, _, vt = np.linalg.svd(X, full_matrices=False)
            out.append(_pin_sign(vt[0]))
    elif init == "random":
        rng = np.random.default_rng(seed)
        for X in problem.datasets:
            out.append(rng.standard_normal(X.shape[1]))
    else:
        raise InputError(f"unknown init {init!r}")
    return out


def fit_smcca(problem: SmccaProblem, seed: int = 0, init: str = "svd") -> SmccaResult:
    """Single-factor sparse multiple CCA by block coordinate ascent.

    Starts from each dataset's top right singular vector (projected onto the
    constraint set) unless ``init='random'``; sweeps k = 1..K with
    w_k <- l1_constrained_unit(X_k' sum_{j != k} X_j w_j, c_k) until the
    relative objective change falls below ``problem.tol``.
    """
    Xs = problem.datasets
    K = len(Xs)
    try:
        w = [l1_constrained_unit(v, ck) for v, ck in zip(_initial_weights(problem, init, seed), problem.c)]
    except ZeroGradientError as exc:
        raise DegenerateInitializationError(f"{exc}; try another seed with init='random'") from None
    proj = [X @ wk for X, wk in zip(Xs, w)]
    traj = [_objective(proj)]
    l1 = [[float(np.abs(wk).sum()) for wk in w]]
    l2 = [[float(np.linalg.norm(wk)) for wk in w]]
    converged = False
    sweeps = 0
    for sweeps in range(1, problem.max_sweeps + 1):
        for k in range(K):
            others = sum(proj[j] for j in range(K) if j != k)
            v = Xs[k].T @ others
            try:
                w[k] = l1_constrained_unit(v, problem.c[k])
            except ZeroGradientError:
                raise DegenerateInitializationError(
                    f"dataset {k}: update vector vanished in sweep {sweeps}; reseed with init='random'"
                ) from None
            proj[k] = Xs[k] @ w[k]
        traj.append(_objective(proj))
        l1.append([float(np.abs(wk).sum()) for wk in w])
        l2.append([float(np.linalg.norm(wk)) for wk in w])
        if abs(traj[-1] - traj[-2]) <= problem.tol * max(abs(traj[-1]), 1e-300):
            converged = True
            break
    return SmccaResult(w, np.column_stack(proj), traj, converged, sweeps, l1, l2)


def lambda_grid(text: str) -> np.ndarray:
    """Parse ``start:stop:n`` into n evenly spaced values."""
    try:
        start, stop, n = text.split(":")
        return np.linspace(float(start), float(stop), int(n))
    except ValueError:
        raise InputError(f"lambda grid must look like start:stop:n, got {text!r}") from None


@dataclass
class LambdaSweep:
    lambdas: np.ndarray
    results: list
    summary: pd.DataFrame
    stability: list

    def variates_table(self, years, dataset: int = 0) -> pd.DataFrame:
        cols = {"year": np.asarray(years)}
        for lam, r in zip(self.lambdas, self.results):
            cols[f"lambda_{lam:.4g}"] = r.variates[:, dataset]
        return pd.DataFrame(cols)


def lambda_sweep(datasets: Sequence, penalty_grid, seed: int = 0, max_sweeps: int = 500, tol: float = 1e-10, init: str = "svd") -> LambdaSweep:
    """Fit one SMCCA per lambda and compare variates across the grid.

    ``stability[k]`` is the matrix of absolute correlations between dataset
    k's variates at every pair of grid points.
    """
    grid = np.asarray(penalty_grid, dtype=float)
    if grid.size == 0:
        raise InputError("empty penalty grid")
    results = []
    rows = []
    for lam in grid:
        prob = SmccaProblem.from_lambda(datasets, float(lam), max_sweeps=max_sweeps, tol=tol)
        r = fit_smcca(prob, seed=seed, init=init)
        results.append(r)
        row = {"lambda": float(lam), "objective": r.objective, "sweeps": r.sweeps_used, "converged": r.converged}
        for k, wk in enumerate(r.weights):
            row[f"c_{k}"] = float(prob.c[k])
            row[f"nonzero_{k}"] = int(np.count_nonzero(wk))
        rows.append(row)
    stability = []
    for k in range(len(results[0].weights)):
        V = np.column_stack([r.variates[:, k] for r in results])
        stability.append(np.abs(np.corrcoef(V, rowvar=False)) if len(results) > 1 else np.ones((1, 1)))
    return LambdaSweep(grid, results, pd.DataFrame(rows), stability)


def peak_years(series, years, top: int = 10) -> list[int]:
    """Years of the ``top`` largest |values|."""
    series = np.asarray(series, dtype=float)
    order = np.argsort(-np.abs(series), kind="stable")[:top]
    return [int(years[i]) for i in order]
