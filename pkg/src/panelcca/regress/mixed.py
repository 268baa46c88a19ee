"""Linear mixed model with random intercept and slopes, fitted by REML.

Model per location g:  y_g = X_g beta + X_g u_g + e_g with X_g = [1, temp, pdsi],
u_g ~ N(0, sigma^2 diag(d)), e_g ~ N(0, sigma^2 I). The residual variance is
profiled out; the REML criterion is maximized over log(d) with L-BFGS-B using
an analytic gradient. Everything reduces to 3x3 per-location cross products,
so cost is linear in the number of rows.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import optimize

from ..errors import ConvergenceError, InputError
from .covariance import cr2_cov
from .linear import REGRESSORS, check_rank
from .results import PanelObservations, RegressionResult, normal_pvalues

COMPONENTS = ("intercept", "temp", "pdsi")
LOG_BOUNDS = (-30.0, 12.0)


class BoundaryWarning(UserWarning):
    """A variance component was estimated at zero."""


@dataclass
class MixedModelResult(RegressionResult):
    variance_components: dict = field(default_factory=dict)
    residual_variance: float = float("nan")
    blups: pd.DataFrame | None = None
    reml_loglik: float = float("nan")
    trajectory: list = field(default_factory=list)
    boundary: list = field(default_factory=list)

    def to_dict(self) -> dict:
        out = super().to_dict()
        out["variance_components"] = self.variance_components
        out["residual_variance"] = self.residual_variance
        out["reml_loglik"] = self.reml_loglik
        out["reml_trajectory"] = self.trajectory
        out["boundary_components"] = self.boundary
        if self.blups is not None:
            out["blups"] = {row.location: [row.intercept, row.temp, row.pdsi] for row in self.blups.itertuples(index=False)}
        return out


class _RemlProblem:
    """Sufficient statistics per location and the profiled REML criterion."""

    def __init__(self, X, y, codes, n_groups):
        self.n, self.p = X.shape
        self.XtX = np.zeros((n_groups, self.p, self.p))
        self.Xty = np.zeros((n_groups, self.p))
        np.add.at(self.XtX, codes, X[:, :, None] * X[:, None, :])
        np.add.at(self.Xty, codes, X * y[:, None])
        self.yty = np.bincount(codes, weights=y * y, minlength=n_groups)

    def pieces(self, d):
        """Per-group X'H^-1 X, X'H^-1 y, y'H^-1 y and log|H| for H = I + X diag(d) X'."""
        s = np.sqrt(d)
        SXtXS = self.XtX * s[None, :, None] * s[None, None, :]
        K = np.eye(self.p)[None] + SXtXS
        Kinv = np.linalg.inv(K)
        _, logdet = np.linalg.slogdet(K)
        SXtX = self.XtX * s[None, :, None]
        SXty = self.Xty * s[None, :]
        A = self.XtX - np.einsum("gji,gjk,gkl->gil", SXtX, Kinv, SXtX)
        b = self.Xty - np.einsum("gji,gjk,gk->gi", SXtX, Kinv, SXty)
        c = self.yty - np.einsum("gj,gjk,gk->g", SXty, Kinv, SXty)
        return A, b, c, logdet

    def evaluate(self, d, grad=False):
        A, b, c, logdet = self.pieces(d)
        At = A.sum(axis=0)
        bt = b.sum(axis=0)
        M = np.linalg.inv(At)
        beta = M @ bt
        rss = c.sum() - beta @ bt
        dof = self.n - self.p
        sigma2 = rss / dof
        _, logdet_At = np.linalg.slogdet(At)
        ll = -0.5 * (dof * np.log(sigma2) + logdet.sum() + logdet_At + dof * (1 + np.log(2 * np.pi)))
        if not grad:
            return ll, beta, sigma2, A, b
        # d ll / d d_j = -1/2 [tr(P Zj Zj') - r'H^-1 Zj Zj' H^-1 r / sigma2]
        tr = np.einsum("gjj->j", A) - np.einsum("gji,ik,gkj->j", A, M, A)
        q = b - A @ beta
        quad = (q**2).sum(axis=0) / sigma2
        g = -0.5 * (tr - quad)
        return ll, beta, sigma2, A, b, g


def mixed_effects_reml_cr2(data: PanelObservations, max_iter: int = 500, ftol: float = 1e-10, gtol: float = 1e-8) -> MixedModelResult:
    """Fit cpi ~ temp + pdsi with location random intercept and slopes (diagonal).

    Convergence: relative change of the REML log-likelihood <= ``ftol`` or
    projected gradient norm <= ``gtol``. A component whose optimum sits on the
    zero boundary is set to exactly zero and flagged with a BoundaryWarning.
    Fixed-effect standard errors use the CR2 cluster adjustment by location
    with the fitted marginal covariance as working model.
    """
    d_ = data.complete_cases()
    locs, codes = np.unique(d_.location, return_inverse=True)
    if len(locs) < 3:
        raise InputError(f"mixed model needs >= 3 locations, got {len(locs)}")
    sizes = np.bincount(codes)
    if sizes.min() < 4:
        raise InputError(f"mixed model needs >= 4 observations per location; {locs[sizes.argmin()]} has {sizes.min()}")
    names = ["const", *REGRESSORS]
    X = np.column_stack([np.ones(len(d_)), d_.temp, d_.pdsi])
    y = d_.cpi
    check_rank(X, names)
    prob = _RemlProblem(X, y, codes, len(locs))

    trajectory = []

    def objective(theta):
        ll, *_, g = prob.evaluate(np.exp(theta), grad=True)
        return -ll, -g * np.exp(theta)

    def record(theta):
        trajectory.append(float(prob.evaluate(np.exp(theta))[0]))

    theta0 = np.full(len(COMPONENTS), np.log(0.1))
    record(theta0)
    res = optimize.minimize(
        objective, theta0, jac=True, method="L-BFGS-B",
        bounds=[LOG_BOUNDS] * len(COMPONENTS), callback=record,
        options={"maxiter": max_iter, "ftol": ftol, "gtol": gtol, "maxcor": 20},
    )
    if res.nit >= max_iter:
        raise ConvergenceError(f"REML did not converge in {max_iter} iterations", trajectory)
    theta = res.x
    if not res.success:
        # line-search stalls near the optimum are accepted when the criterion has settled
        rel = abs(trajectory[-1] - trajectory[-2]) / max(abs(trajectory[-1]), 1.0) if len(trajectory) > 1 else np.inf
        if rel > 1e-8:
            raise ConvergenceError(f"REML optimizer failed: {res.message}", trajectory)

    d = np.exp(theta)
    ll_opt = prob.evaluate(d)[0]
    boundary = []
    for j, comp in enumerate(COMPONENTS):
        if theta[j] <= LOG_BOUNDS[0] + 1e-6 or d[j] < 1e-10:
            trial = d.copy()
            trial[j] = 0.0
            ll_trial = prob.evaluate(trial)[0]
            if ll_trial >= ll_opt - 1e-9 * max(1.0, abs(ll_opt)):
                d, ll_opt = trial, ll_trial
                boundary.append(comp)
    if boundary:
        warnings.warn(f"variance component(s) at zero boundary: {', '.join(boundary)}", BoundaryWarning, stacklevel=2)

    ll, beta, sigma2, A, b = prob.evaluate(d)
    blup = d[None, :] * (b - A @ beta)
    resid = y - X @ beta

    phi = {}
    for g, loc in enumerate(locs):
        Xg = X[codes == g]
        phi[loc] = sigma2 * (np.eye(len(Xg)) + (Xg * d) @ Xg.T)
    cov = cr2_cov(X, resid, d_.location, phi_blocks=phi)
    se = np.sqrt(np.diag(cov))
    blups = pd.DataFrame({"location": locs, "intercept": blup[:, 0], "temp": blup[:, 1], "pdsi": blup[:, 2]})
    return MixedModelResult(
        names, beta, se, normal_pvalues(beta, se), resid, len(d_), "mixed-cr2", cov,
        info={"iterations": int(res.nit), "optimizer": "L-BFGS-B", "covariance_structure": "diagonal"},
        variance_components={c: float(sigma2 * v) for c, v in zip(COMPONENTS, d)},
        residual_variance=float(sigma2),
        blups=blups,
        reml_loglik=float(ll),
        trajectory=trajectory,
        boundary=boundary,
    )


def extract_location_coefficients(result: MixedModelResult) -> pd.DataFrame:
    """Per-location coefficients (fixed effect + BLUP), sorted by location name."""
    if result.blups is None:
        raise InputError("result carries no BLUPs; fit a mixed model first")
    b = result.blups.sort_values("location").reset_index(drop=True)
    return pd.DataFrame({
        "location": b["location"],
        "intercept": result.coef("const") + b["intercept"],
        "temp": result.coef("temp") + b["temp"],
        "pdsi": result.coef("pdsi") + b["pdsi"],
    })
