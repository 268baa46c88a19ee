from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from ..errors import AlignmentError, InputError
from ..ingest import PanelMatrix


@dataclass
class PanelObservations:
    """Long-form rows of (location, year, cpi, temp, pdsi)."""

    location: np.ndarray
    year: np.ndarray
    cpi: np.ndarray
    temp: np.ndarray
    pdsi: np.ndarray

    def __post_init__(self):
        self.location = np.asarray(self.location).astype(str)
        self.year = np.asarray(self.year, dtype=np.int64)
        self.cpi = np.asarray(self.cpi, dtype=float)
        self.temp = np.asarray(self.temp, dtype=float)
        self.pdsi = np.asarray(self.pdsi, dtype=float)
        n = len(self.location)
        for name in ("year", "cpi", "temp", "pdsi"):
            if len(getattr(self, name)) != n:
                raise AlignmentError(f"column {name} has length {len(getattr(self, name))}, expected {n}")
        keys = set(zip(self.location.tolist(), self.year.tolist()))
        if len(keys) != n:
            raise InputError("duplicate (location, year) rows")

    @property
    def complete(self) -> np.ndarray:
        return np.isfinite(self.cpi) & np.isfinite(self.temp) & np.isfinite(self.pdsi)

    def __len__(self):
        return len(self.location)

    def subset(self, mask) -> "PanelObservations":
        return PanelObservations(self.location[mask], self.year[mask], self.cpi[mask], self.temp[mask], self.pdsi[mask])

    def complete_cases(self) -> "PanelObservations":
        """Complete rows, sorted by (location order of appearance, year)."""
        sub = self.subset(self.complete)
        _, first = np.unique(sub.location, return_index=True)
        rank = {loc: r for r, loc in enumerate(sub.location[np.sort(first)])}
        order = np.lexsort((sub.year, np.array([rank[l] for l in sub.location])))
        return sub.subset(order)

    @classmethod
    def from_panels(cls, cpi: PanelMatrix, temp: PanelMatrix, pdsi: PanelMatrix) -> "PanelObservations":
        """Stack three aligned panels (same location names) over the common year span."""
        names = cpi.names
        if sorted(temp.names) != sorted(names) or sorted(pdsi.names) != sorted(names):
            raise AlignmentError("cpi, temp and pdsi panels must cover the same locations")
        start = max(p.years[0] for p in (cpi, temp, pdsi))
        end = min(p.years[-1] for p in (cpi, temp, pdsi))
        if start > end:
            raise AlignmentError("panels share no years")
        years = np.arange(start, end + 1)
        cols = {}
        for key, p in (("cpi", cpi), ("temp", temp), ("pdsi", pdsi)):
            rows = years - p.years[0]
            cols[key] = np.column_stack([p.values[rows, p.names.index(n)] for n in names])
        loc = np.repeat(np.array(names), len(years))
        yr = np.tile(years, len(names))
        return cls(loc, yr, cols["cpi"].T.ravel(), cols["temp"].T.ravel(), cols["pdsi"].T.ravel())


@dataclass
class RegressionResult:
    names: list[str]
    coefficients: np.ndarray
    std_errors: np.ndarray
    pvalues: np.ndarray
    residuals: np.ndarray
    n_obs: int
    estimator: str
    cov: np.ndarray
    location_effects: dict | None = None
    year_effects: dict | None = None
    info: dict = field(default_factory=dict)

    def coef(self, name):
        return float(self.coefficients[self.names.index(name)])

    def se(self, name):
        return float(self.std_errors[self.names.index(name)])

    def pvalue(self, name):
        return float(self.pvalues[self.names.index(name)])

    def to_dict(self) -> dict:
        out = {
            "estimator": self.estimator,
            "n_obs": int(self.n_obs),
            "coefficients": dict(zip(self.names, self.coefficients)),
            "robust_se": dict(zip(self.names, self.std_errors)),
            "p_values": dict(zip(self.names, self.pvalues)),
            "covariance": self.cov,
            "residuals": self.residuals,
        }
        if self.location_effects is not None:
            out["location_effects"] = self.location_effects
        if self.year_effects is not None:
            out["year_effects"] = {str(k): v for k, v in self.year_effects.items()}
        out["info"] = self.info
        return out

    def table(self) -> str:
        lines = [f"{self.estimator}  (N = {self.n_obs})", f"{'':<10}{'coef':>12}{'se':>12}{'p':>10}"]
        for n, b, s, p in zip(self.names, self.coefficients, self.std_errors, self.pvalues):
            lines.append(f"{n:<10}{b:>12.4f}{s:>12.4f}{p:>10.4f} {stars(p)}")
        return "\n".join(lines)


def stars(p) -> str:
    if not np.isfinite(p):
        return ""
    return "***" if p < 0.001 else "**" if p < 0.01 else "*" if p < 0.05 else ""


def normal_pvalues(coef, se):
    """Two-sided p-values from the normal approximation (no df correction)."""
    coef = np.asarray(coef, dtype=float)
    se = np.asarray(se, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, np.abs(coef) / se, np.where(coef == 0, 0.0, np.inf))
    return 2 * stats.norm.sf(z)
