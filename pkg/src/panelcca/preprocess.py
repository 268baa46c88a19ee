"""Per-location series transformations.

All functions take 1-D float arrays where NaN marks a missing entry and
return a new array of the same length with missing entries left as NaN.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DegenerateInputError, DomainError, InputError
from .ingest import PanelMatrix

PIPELINE_STEPS = ("winsorize", "detrend", "standardize", "filter")


@dataclass(frozen=True)
class FilterSpec:
    sigma: float = 3.0
    truncation_radius: int = 4

    def __post_init__(self):
        if not self.sigma > 0:
            raise DomainError(f"filter sigma must be positive, got {self.sigma}")
        if int(self.truncation_radius) != self.truncation_radius or self.truncation_radius < 1:
            raise DomainError("truncation_radius must be an integer >= 1")

    def kernel(self) -> np.ndarray:
        """Normalized Gaussian weights on offsets -h..h, h = floor(radius * sigma)."""
        half = int(math.floor(self.truncation_radius * self.sigma))
        offsets = np.arange(-half, half + 1)
        w = np.exp(-0.5 * (offsets / self.sigma) ** 2)
        return w / w.sum()


def _as_series(series):
    x = np.array(series, dtype=float)
    if x.ndim != 1:
        raise InputError("expected a 1-D series")
    return x


def winsorize(series, level: float = 0.01) -> np.ndarray:
    """Clamp values to the [level, 1 - level] quantiles.

    Quantiles interpolate linearly between order statistics (numpy's default
    ``linear`` method), so ``winsorize(1..100, 0.01)`` clamps to 1.99 and 99.01.
    """
    if not 0 <= level < 0.5:
        raise DomainError(f"winsorize level must lie in [0, 0.5), got {level}")
    x = _as_series(series)
    ok = np.isfinite(x)
    if ok.sum() < 2:
        raise DegenerateInputError("winsorize needs at least 2 non-missing values")
    if level == 0:
        return x
    lo, hi = np.quantile(x[ok], [level, 1 - level])
    out = x.copy()
    out[ok] = np.clip(x[ok], lo, hi)
    return out


def detrend(series, years=None) -> np.ndarray:
    """Residuals from an OLS fit on (intercept, year) over the present entries."""
    x = _as_series(series)
    t = np.arange(len(x), dtype=float) if years is None else np.asarray(years, dtype=float)
    if t.shape != x.shape:
        raise InputError("years must match the series length")
    ok = np.isfinite(x)
    if ok.sum() < 3:
        raise DegenerateInputError("detrend needs at least 3 non-missing values")
    tc = t[ok] - t[ok].mean()
    if not np.any(tc):
        raise DegenerateInputError("detrend needs at least two distinct years")
    xm = x[ok].mean()
    slope = np.dot(tc, x[ok] - xm) / np.dot(tc, tc)
    out = np.full_like(x, np.nan)
    out[ok] = x[ok] - xm - slope * tc
    return out


def standardize(series) -> np.ndarray:
    """Center to mean 0 and scale to unit sample (n - 1) standard deviation."""
    x = _as_series(series)
    ok = np.isfinite(x)
    if ok.sum() < 2:
        raise DegenerateInputError("standardize needs at least 2 non-missing values")
    v = x[ok]
    mean = v.mean()
    sd = np.std(v - mean, ddof=1)
    if not sd > 0 or sd <= 1e-14 * max(1.0, abs(mean)):
        raise DegenerateInputError("standardize: series has zero variance")
    out = np.full_like(x, np.nan)
    out[ok] = (v - mean) / sd
    return out


def gaussian_filter(series, spec: FilterSpec | None = None) -> np.ndarray:
    """Gaussian smoothing with kernel renormalization at edges and gaps.

    Each output is the weighted mean of the present inputs within the
    truncated kernel; no values are invented past the ends of the sample.
    Outputs at missing inputs stay missing.
    """
    spec = spec or FilterSpec()
    x = _as_series(series)
    if len(x) < 1:
        raise InputError("gaussian_filter needs a non-empty series")
    w = spec.kernel()
    ok = np.isfinite(x)
    filled = np.where(ok, x, 0.0)
    num = np.convolve(filled, w, mode="full")
    den = np.convolve(ok.astype(float), w, mode="full")
    h = (len(w) - 1) // 2
    num = num[h : h + len(x)]
    den = den[h : h + len(x)]
    out = np.full_like(x, np.nan)
    out[ok] = num[ok] / den[ok]
    return out


def apply_steps(series, years, steps: Sequence[str], level: float = 0.01, filter_spec: FilterSpec | None = None):
    """Apply named steps in order to one series."""
    x = _as_series(series)
    for step in steps:
        if step == "winsorize":
            x = winsorize(x, level)
        elif step == "detrend":
            x = detrend(x, years)
        elif step == "standardize":
            x = standardize(x)
        elif step == "filter":
            x = gaussian_filter(x, filter_spec)
        else:
            raise InputError(f"unknown preprocessing step {step!r}; choose from {', '.join(PIPELINE_STEPS)}")
    return x


def preprocess_panel(panel: PanelMatrix, steps: Sequence[str] = ("winsorize", "detrend", "standardize"), level: float = 0.01, filter_spec: FilterSpec | None = None) -> PanelMatrix:
    """Apply ``steps`` location-wise to every column of ``panel``."""
    out = np.empty_like(panel.values)
    for j in range(panel.values.shape[1]):
        try:
            out[:, j] = apply_steps(panel.values[:, j], panel.years, steps, level, filter_spec)
        except InputError as exc:
            raise type(exc)(f"location {panel.locations[j].name}: {exc}") from None
    return panel.with_values(out)


def parse_steps(text: str) -> list[str]:
    """Parse a comma-separated step list; ``none`` or empty means no steps."""
    text = (text or "").strip()
    if text.lower() in ("", "none"):
        return []
    steps = [s.strip() for s in text.split(",") if s.strip()]
    for s in steps:
        if s not in PIPELINE_STEPS:
            raise InputError(f"unknown preprocessing step {s!r}; choose from {', '.join(PIPELINE_STEPS)}")
    return steps
