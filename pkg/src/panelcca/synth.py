"""Synthetic data with planted structure, used as ground truth by the tests.

Random streams are numpy ``Philox`` (a 64-bit counter-based generator) keyed
by a splitmix64 expansion of the integer seed, so a seed fully pins the output
independent of numpy's default seeding policy.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, InputError
from .ingest import GridFieldSeries, Location, PanelMatrix
from .regress.results import PanelObservations

MASK64 = (1 << 64) - 1


def splitmix64(state: int) -> tuple[int, int]:
    """One splitmix64 step; returns (next_state, output)."""
    state = (state + 0x9E3779B97F4A7C15) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return state, z ^ (z >> 31)


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Philox generator keyed by two splitmix64 outputs of (seed, stream)."""
    state = (int(seed) & MASK64) ^ ((int(stream) * 0xD1B54A32D192ED03) & MASK64)
    state, k0 = splitmix64(state)
    state, k1 = splitmix64(state)
    return np.random.Generator(np.random.Philox(key=np.array([k0, k1], dtype=np.uint64)))


@dataclass
class PlantedSpec:
    """Knobs for every generator; unused fields are ignored by a given generator."""

    T: int = 200
    N: int = 10
    dims: tuple = (5, 5)
    n_factors: int = 1
    loadings: list | None = None
    noise_sd: float = 1.0
    seed: int = 0
    location_sd: float = 0.0
    time_sd: float = 0.0
    slope_sd: tuple = (0.0, 0.0)
    betas: tuple = (-0.03, -0.007)
    regressor_ar: float = 0.0
    error_ar: float = 0.0
    heteroskedastic: bool = False
    missing_fraction: float = 0.0
    start_year: int = 1565

    def __post_init__(self):
        if not self.noise_sd > 0:
            raise DomainError("noise_sd must be positive")
        if self.T < 2 or self.N < 1:
            raise InputError("need T >= 2 and N >= 1")
        if not 0 <= self.missing_fraction < 1:
            raise DomainError("missing_fraction must lie in [0, 1)")


def _unit_loadings(rng, p, n_factors):
    A = rng.standard_normal((p, n_factors))
    return A / np.linalg.norm(A, axis=0)


def population_first_correlation(loadings, noise_sd) -> float:
    """First canonical correlation between the first two sets implied by the model."""
    A, B = (np.asarray(L, dtype=float).reshape(len(L), -1) for L in loadings[:2])
    s2 = noise_sd**2
    sxx = A @ A.T + s2 * np.eye(A.shape[0])
    syy = B @ B.T + s2 * np.eye(B.shape[0])
    sxy = A @ B.T
    wx = np.linalg.inv(np.linalg.cholesky(sxx))
    wy = np.linalg.inv(np.linalg.cholesky(syy))
    return float(np.linalg.svd(wx @ sxy @ wy.T, compute_uv=False)[0])


def gen_planted_multiset(spec: PlantedSpec):
    """K = len(spec.dims) datasets X_k = Z A_k' + noise_sd * E_k sharing factors Z.

    Returns (datasets, truth) where truth holds the factors, loadings and the
    population first canonical correlation of the first two sets.
    """
    rng = make_rng(spec.seed)
    Z = rng.standard_normal((spec.T, spec.n_factors))
    if spec.loadings is None:
        loadings = [_unit_loadings(rng, p, spec.n_factors) for p in spec.dims]
    else:
        loadings = [np.asarray(L, dtype=float).reshape(p, spec.n_factors) for L, p in zip(spec.loadings, spec.dims)]
    datasets = [Z @ L.T + spec.noise_sd * rng.standard_normal((spec.T, L.shape[0])) for L in loadings]
    if spec.n_factors == 1:
        na, nb = (float(np.sum(L**2)) for L in loadings[:2])
        s2 = spec.noise_sd**2
        rho = float(np.sqrt(na / (na + s2) * nb / (nb + s2)))
    else:
        rho = population_first_correlation(loadings, spec.noise_sd)
    truth = {"factors": Z, "loadings": loadings, "rho1": rho, "noise_sd": spec.noise_sd, "seed": spec.seed}
    return datasets, truth


def gen_planted_cca(spec: PlantedSpec):
    """Two sets sharing planted factors; returns (X, Y, truth).

    With one factor and loadings a, b the population first canonical
    correlation is sqrt(|a|^2/(|a|^2+s^2) * |b|^2/(|b|^2+s^2)), i.e.
    1/(1+s^2) for unit loadings.
    """
    dims = tuple(spec.dims[:2]) if len(spec.dims) >= 2 else (spec.dims[0], spec.dims[0])
    sub = PlantedSpec(**{**spec.__dict__, "dims": dims})
    (X, Y), truth = gen_planted_multiset(sub)
    return X, Y, truth


def _ar1(rng, shape, phi):
    e = rng.standard_normal(shape)
    if phi == 0:
        return e
    out = np.empty(shape)
    out[0] = e[0]
    scale = np.sqrt(1 - phi**2)
    for t in range(1, shape[0]):
        out[t] = phi * out[t - 1] + scale * e[t]
    return out


def gen_planted_panel(spec: PlantedSpec):
    """Balanced T x N panel: cpi = (b1 + u1_i) temp + (b2 + u2_i) pdsi + g_i + l_t + e.

    ``location_sd``/``time_sd`` scale the intercept effects, ``slope_sd`` the
    per-location slope deviations. ``regressor_ar``/``error_ar`` make the
    series AR(1) within location; ``heteroskedastic`` gives each location its
    own error scale. Returns (PanelObservations, truth).
    """
    rng = make_rng(spec.seed, stream=1)
    T, N = spec.T, spec.N
    temp = _ar1(rng, (T, N), spec.regressor_ar)
    pdsi = _ar1(rng, (T, N), spec.regressor_ar)
    gamma = spec.location_sd * rng.standard_normal(N)
    lam = spec.time_sd * rng.standard_normal(T)
    u = np.asarray(spec.slope_sd, dtype=float)[None, :] * rng.standard_normal((N, 2))
    err_scale = np.exp(0.5 * rng.standard_normal(N)) if spec.heteroskedastic else np.ones(N)
    eps = spec.noise_sd * err_scale[None, :] * _ar1(rng, (T, N), spec.error_ar)
    b1, b2 = spec.betas
    cpi = (b1 + u[:, 0])[None, :] * temp + (b2 + u[:, 1])[None, :] * pdsi + gamma[None, :] + lam[:, None] + eps
    if spec.missing_fraction > 0:
        drop = rng.random((T, N)) < spec.missing_fraction
        cpi = np.where(drop, np.nan, cpi)
    names = [f"loc{j:02d}" for j in range(N)]
    years = spec.start_year + np.arange(T)
    obs = PanelObservations(
        np.repeat(names, T), np.tile(years, N), cpi.T.ravel(), temp.T.ravel(), pdsi.T.ravel()
    )
    truth = {
        "betas": {"temp": b1, "pdsi": b2},
        "location_effects": dict(zip(names, gamma)),
        "year_effects": dict(zip(years.tolist(), lam)),
        "slope_deviations": {n: {"temp": u[j, 0], "pdsi": u[j, 1]} for j, n in enumerate(names)},
        "error_scale": dict(zip(names, err_scale)),
        "seed": spec.seed,
    }
    return obs, truth


def observations_to_panels(obs: PanelObservations, lat: float = 50.0, lon_step: float = 1.0):
    """Split observations into cpi, temp and pdsi PanelMatrix objects."""
    names = list(dict.fromkeys(obs.location.tolist()))
    years = np.arange(obs.year.min(), obs.year.max() + 1)
    locs = [Location(n, lat, round(-10 + (lon_step * j) % 40, 6)) for j, n in enumerate(names)]
    col = {n: j for j, n in enumerate(names)}
    panels = []
    for values in (obs.cpi, obs.temp, obs.pdsi):
        M = np.full((len(years), len(names)), np.nan)
        M[obs.year - years[0], [col[n] for n in obs.location]] = values
        panels.append(PanelMatrix(years, locs, M))
    return tuple(panels)


def matrix_to_panel(M, years, prefix="x", lat=50.0) -> PanelMatrix:
    locs = [Location(f"{prefix}{j:03d}", lat, 0.0) for j in range(M.shape[1])]
    return PanelMatrix(np.asarray(years), locs, M)


def matrix_to_grid(M, years, lat0=40.0, lon0=-5.0, step=0.5) -> GridFieldSeries:
    """Lay the columns of M on a near-square lat/lon lattice (extra cells missing)."""
    T, p = M.shape
    n_lon = int(np.ceil(np.sqrt(p)))
    n_lat = int(np.ceil(p / n_lon))
    vals = np.full((T, n_lat * n_lon), np.nan)
    vals[:, :p] = M
    return GridFieldSeries(
        np.asarray(years), lat0 + step * np.arange(n_lat), lon0 + step * np.arange(n_lon),
        vals.reshape(T, n_lat, n_lon),
    )
