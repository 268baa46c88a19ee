import os
from pathlib import Path

import numpy as np
import pytest

from panelcca.regress import PanelObservations
from panelcca.synth import PlantedSpec, gen_planted_panel

_ACCEPTANCE_LINES = []


def pytest_addoption(parser):
    parser.addoption(
        "--repro", action="store", default=None, metavar="DIR",
        help="directory with reproduction inputs (cpi.csv, temp.csv, pdsi.csv, temp_grid.csv, pdsi_grid.csv)",
    )


@pytest.fixture
def repro_dir(request):
    path = request.config.getoption("--repro") or os.environ.get("PANELCCA_REPRO_DIR")
    if not path:
        pytest.skip("reproduction inputs not supplied (use --repro DIR)")
    path = Path(path)
    missing = [n for n in REPRO_FILES if not (path / n).exists()]
    if missing:
        pytest.skip(f"reproduction inputs missing: {', '.join(missing)}")
    return path


REPRO_FILES = ("cpi.csv", "temp.csv", "pdsi.csv", "temp_grid.csv", "pdsi_grid.csv")


def record_criterion(name, passed, detail=""):
    _ACCEPTANCE_LINES.append(f"{'PASS' if passed else 'FAIL'}  {name}{'  ' + detail if detail else ''}")


@pytest.fixture
def criterion():
    return record_criterion


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def dummy_ols(y, X, loc, year, time_effects=True):
    """Brute-force two-way fixed effects: OLS on X plus explicit dummy columns."""
    locs = np.unique(loc)
    yrs = np.unique(year)
    cols = [X] + [(loc == l).astype(float)[:, None] for l in locs]
    if time_effects:
        cols += [(year == t).astype(float)[:, None] for t in yrs[1:]]
    D = np.hstack(cols)
    coef, *_ = np.linalg.lstsq(D, y, rcond=None)
    return coef[: X.shape[1]], y - D @ coef


def random_panel(rng, n_loc, n_year, missing=0.0, effects=True):
    """Unbalanced random panel with planted location/year effects."""
    loc = np.repeat([f"L{i}" for i in range(n_loc)], n_year)
    year = np.tile(1600 + np.arange(n_year), n_loc)
    temp = rng.standard_normal(len(loc))
    pdsi = rng.standard_normal(len(loc))
    g = rng.standard_normal(n_loc) if effects else np.zeros(n_loc)
    l = rng.standard_normal(n_year) if effects else np.zeros(n_year)
    cpi = 0.7 * temp - 0.4 * pdsi + np.repeat(g, n_year) + np.tile(l, n_loc) + 0.3 * rng.standard_normal(len(loc))
    if missing > 0:
        drop = rng.random(len(loc)) < missing
        cpi[drop] = np.nan
    return PanelObservations(loc, year, cpi, temp, pdsi)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def degenerate_panel(seed, T=60, N=10):
    """Zero realized between-location variation.

    Errors are projected off each location's own [1, temp, pdsi], so every
    location's own OLS fit equals the pooled fit and the REML optimum lies on
    the zero boundary for all components.
    """
    obs, _ = gen_planted_panel(PlantedSpec(T=T, N=N, seed=seed))
    cpi = obs.cpi.copy()
    beta = np.array([0.2, -0.03, -0.007])
    for loc in np.unique(obs.location):
        idx = obs.location == loc
        X = np.column_stack([np.ones(idx.sum()), obs.temp[idx], obs.pdsi[idx]])
        e = cpi[idx]
        e = e - X @ np.linalg.lstsq(X, e, rcond=None)[0]
        cpi[idx] = X @ beta + e
    return PanelObservations(obs.location, obs.year, cpi, obs.temp, obs.pdsi)
