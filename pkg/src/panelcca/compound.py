"""Rolling CPI/climate correlations and their regression on war and famine indicators."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import AlignmentError, InputError, ParseError
from .ingest import PanelMatrix
from .regress.covariance import cluster_cov, resolve_lag
from .regress.linear import check_rank, demean_groups, lstsq_fit
from .regress.results import RegressionResult, normal_pvalues


@dataclass
class EventCalendar:
    war_spans: list = field(default_factory=list)
    famine_years: set = field(default_factory=set)
    # per-location famine years, used only when famine is not a common dummy
    famine_by_location: dict = field(default_factory=dict)

    def __post_init__(self):
        for start, end in self.war_spans:
            if start > end:
                raise InputError(f"war span ({start}, {end}) is not ordered")
        self.famine_years = {int(y) for y in self.famine_years}

    def war(self, years) -> np.ndarray:
        years = np.asarray(years)
        out = np.zeros(len(years))
        for start, end in self.war_spans:
            out[(years >= start) & (years <= end)] = 1.0
        return out

    def famine(self, years, locations=None) -> np.ndarray:
        years = np.asarray(years)
        if locations is None or not self.famine_by_location:
            return np.isin(years, sorted(self.famine_years)).astype(float)
        return np.array([
            1.0 if y in self.famine_years or y in self.famine_by_location.get(loc, ()) else 0.0
            for y, loc in zip(years.tolist(), locations)
        ])

    def check_range(self, first: int, last: int) -> None:
        years = [y for span in self.war_spans for y in span] + sorted(self.famine_years)
        bad = [y for y in years if not first <= y <= last]
        if bad:
            raise InputError(f"event years {bad} fall outside the panel range {first}-{last}")


def read_events_csv(path) -> EventCalendar:
    """Read ``type,start,end[,location]`` rows; type is ``war`` or ``famine``."""
    path = Path(path)
    if not path.exists():
        raise InputError(f"no such file: {path}")
    wars, famines, by_loc = [], set(), {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader, [])]
        if header not in (["type", "start", "end"], ["type", "start", "end", "location"]):
            raise ParseError("expected header type,start,end[,location]", line=1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields", line=lineno)
            kind = row[0].strip()
            try:
                start, end = int(row[1]), int(row[2])
            except ValueError:
                raise ParseError("start/end must be integers", line=lineno) from None
            if start > end:
                raise ParseError(f"span {start}-{end} is not ordered", line=lineno)
            loc = row[3].strip() if len(row) == 4 else ""
            if kind == "war":
                wars.append((start, end))
            elif kind == "famine":
                years = set(range(start, end + 1))
                if loc:
                    by_loc.setdefault(loc, set()).update(years)
                else:
                    famines |= years
            else:
                raise ParseError(f"unknown event type {kind!r}", line=lineno)
    return EventCalendar(wars, famines, by_loc)


def default_events() -> EventCalendar:
    return read_events_csv(Path(__file__).parent / "data" / "events.csv")


@dataclass
class RollingCorrPanel:
    window: int
    years: np.ndarray
    locations: list
    values: np.ndarray
    valid: np.ndarray
    centered: bool = False


def _pearson(a, b):
    a = a - a.mean()
    b = b - b.mean()
    saa, sbb = a @ a, b @ b
    scale_a = max(np.abs(a).max(), 1e-300)
    scale_b = max(np.abs(b).max(), 1e-300)
    if saa <= 1e-24 * scale_a**2 * len(a) or sbb <= 1e-24 * scale_b**2 * len(b):
        return np.nan
    return float(np.clip((a @ b) / np.sqrt(saa * sbb), -1.0, 1.0))


def rolling_correlation(x: PanelMatrix, y: PanelMatrix, window: int, centered: bool = False, min_pairs: int = 3) -> RollingCorrPanel:
    """Per-location Pearson correlation over a window of ``window`` years.

    Trailing windows end at year t (first window-1 years masked); centered
    windows cover t - (window-1)//2 .. t + window//2. Each window uses its
    complete (x, y) pairs and is masked if fewer than ``min_pairs`` remain or
    either series is constant in it.
    """
    window = int(window)
    if window < 3:
        raise InputError("rolling window must be >= 3")
    if x.names != y.names or not np.array_equal(x.years, y.years):
        raise AlignmentError("rolling correlation needs panels with identical years and locations")
    T, N = x.values.shape
    if window > T:
        raise InputError(f"window {window} exceeds panel length {T}")
    out = np.full((T, N), np.nan)
    back = (window - 1) // 2 if centered else window - 1
    ahead = window - 1 - back
    both = ~x.missing & ~y.missing
    for t in range(back, T - ahead):
        sl = slice(t - back, t + ahead + 1)
        for j in range(N):
            ok = both[sl, j]
            if ok.sum() < min_pairs:
                continue
            out[t, j] = _pearson(x.values[sl, j][ok], y.values[sl, j][ok])
    return RollingCorrPanel(window, x.years.copy(), list(x.locations), out, np.isfinite(out), centered)


def correlation_regression(corr: RollingCorrPanel, events: EventCalendar, cpi: PanelMatrix, climate: PanelMatrix, start_year: int | None = None, cov_type: str = "cluster-hac", lag="auto", climate_name: str = "climate", famine_per_location: bool = False) -> RegressionResult:
    """Regress rolling correlations on war, famine, CPI and climate with location effects.

    Location fixed effects are absorbed by demeaning; errors are clustered by
    location (within-location Bartlett HAC by default). ``start_year`` drops
    earlier years, e.g. to hold the sample fixed across window lengths.
    Indicators that are identically zero in the sample are reported with a
    zero coefficient and NaN standard error.
    """
    if not (np.array_equal(cpi.years, corr.years) and np.array_equal(climate.years, corr.years)):
        raise AlignmentError("correlation, cpi and climate panels must share years")
    if cpi.names != [l.name for l in corr.locations] or climate.names != cpi.names:
        raise AlignmentError("correlation, cpi and climate panels must share locations")
    T, N = corr.values.shape
    years = np.repeat(corr.years[:, None], N, axis=1).ravel()
    locs = np.tile(np.array(cpi.names), T)
    y = corr.values.ravel()
    war = events.war(years)
    famine = events.famine(years, locs if famine_per_location else None)
    X = np.column_stack([war, famine, cpi.values.ravel(), climate.values.ravel()])
    keep = np.isfinite(y) & np.isfinite(X).all(axis=1)
    if start_year is not None:
        keep &= years >= start_year
    y, X, years, locs = y[keep], X[keep], years[keep], locs[keep]
    names = ["TY_war", "famines", "CPI", climate_name]
    if len(y) == 0:
        raise InputError("no complete observations for the correlation regression")
    _, codes = np.unique(locs, return_inverse=True)
    Z = demean_groups(np.column_stack([y, X]), [codes])
    yw, Xw = Z[:, 0], Z[:, 1:]
    active = [j for j in range(X.shape[1]) if not (j < 2 and not np.any(X[:, j]))]
    check_rank(Xw[:, active], [names[j] for j in active], rtol=1e-9, ref_norms=np.linalg.norm(X[:, active], axis=0))
    beta_a, resid = lstsq_fit(yw, Xw[:, active])
    if cov_type == "cluster":
        L = None
        cov_a = cluster_cov(Xw[:, active], resid, locs)
    else:
        L = resolve_lag(lag, len(np.unique(years)))
        cov_a = cluster_cov(Xw[:, active], resid, locs, times=years, lag=L)
    k = len(names)
    beta = np.zeros(k)
    cov = np.full((k, k), np.nan)
    beta[active] = beta_a
    cov[np.ix_(active, active)] = cov_a
    se = np.sqrt(np.diag(cov))
    tss = float(yw @ yw)
    r2 = 1 - float(resid @ resid) / tss if tss > 0 else 0.0
    return RegressionResult(
        names, beta, se, normal_pvalues(beta, se), resid, int(len(y)), "fe-location-" + cov_type, cov,
        info={
            "window": corr.window, "lag": L, "start_year": start_year, "r2_within": r2,
            "dropped": [names[j] for j in range(k) if j not in active],
            "n_clusters": int(len(np.unique(locs))),
        },
    )


def common_start_year(years, windows, centered: bool = False) -> int:
    """First year at which the largest trailing window is complete."""
    w = max(windows)
    back = (w - 1) // 2 if centered else w - 1
    return int(np.asarray(years)[0] + back)
