"""Panel and grid CSV readers, grid-to-location extraction, area weighting.

Panel files are long-form ``year,location,lat,lon,value``; grid files are
``year,lat,lon,value``. Missing values are empty fields or a literal ``NaN``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Sequence

import numpy as np

from ._io import fmt_float, parse_float
from .errors import (
    DomainError,
    DuplicateKeyError,
    ExtractionError,
    GridStructureError,
    InputError,
    ParseError,
)

PANEL_HEADER = ["year", "location", "lat", "lon", "value"]
GRID_HEADER = ["year", "lat", "lon", "value"]


@dataclass(frozen=True)
class Location:
    name: str
    lat: float
    lon: float

    def __post_init__(self):
        if not self.name:
            raise InputError("location name must be nonempty")
        if not -90.0 <= self.lat <= 90.0:
            raise DomainError(f"{self.name}: latitude {self.lat} outside [-90, 90]")
        if not -180.0 <= self.lon <= 180.0:
            raise DomainError(f"{self.name}: longitude {self.lon} outside [-180, 180]")


@dataclass
class PanelMatrix:
    """T x N observations (years x locations); NaN marks a missing cell."""

    years: np.ndarray
    locations: list[Location]
    values: np.ndarray
    missing: np.ndarray = field(default=None)

    def __post_init__(self):
        self.years = np.asarray(self.years, dtype=np.int64)
        self.values = np.array(self.values, dtype=float)
        if self.values.ndim != 2 or self.values.shape != (len(self.years), len(self.locations)):
            raise InputError(
                f"values shape {self.values.shape} does not match "
                f"{len(self.years)} years x {len(self.locations)} locations"
            )
        if len(self.years) > 1 and np.any(np.diff(self.years) != 1):
            raise InputError("panel years must be strictly increasing with unit step")
        names = [loc.name for loc in self.locations]
        if len(set(names)) != len(names):
            raise InputError("duplicate location names in panel")
        if self.missing is None:
            self.missing = ~np.isfinite(self.values)
        else:
            self.missing = np.asarray(self.missing, dtype=bool) | ~np.isfinite(self.values)
        self.values[self.missing] = np.nan

    @property
    def shape(self):
        return self.values.shape

    @property
    def names(self) -> list[str]:
        return [loc.name for loc in self.locations]

    @property
    def lats(self) -> np.ndarray:
        return np.array([loc.lat for loc in self.locations])

    @property
    def n_present(self) -> int:
        return int((~self.missing).sum())

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.names.index(name)]

    def with_values(self, values) -> "PanelMatrix":
        return PanelMatrix(self.years.copy(), list(self.locations), values)

    def select_years(self, start: int, end: int) -> "PanelMatrix":
        keep = (self.years >= start) & (self.years <= end)
        return PanelMatrix(self.years[keep], list(self.locations), self.values[keep])


@dataclass
class GridFieldSeries:
    """Gridded field per year; ``values`` has shape (year, lat, lon), NaN = missing."""

    years: np.ndarray
    lats: np.ndarray
    lons: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.years = np.asarray(self.years, dtype=np.int64)
        self.lats = np.asarray(self.lats, dtype=float)
        self.lons = np.asarray(self.lons, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        for axis, name in ((self.lats, "lats"), (self.lons, "lons")):
            if len(axis) > 1:
                d = np.diff(axis)
                if not (np.all(d > 0) or np.all(d < 0)):
                    raise GridStructureError(f"{name} must be strictly monotone")
        expected = (len(self.years), len(self.lats), len(self.lons))
        if self.values.shape != expected:
            raise GridStructureError(f"values shape {self.values.shape} != {expected}")

    @property
    def present(self) -> np.ndarray:
        return np.isfinite(self.values)


@dataclass(frozen=True)
class ExtractionSpec:
    mode: Literal["nearest-point", "box-average"] = "nearest-point"
    box_half_width: float = 0.5

    def __post_init__(self):
        if self.mode not in ("nearest-point", "box-average"):
            raise InputError(f"unknown extraction mode {self.mode!r}")
        if self.mode == "box-average" and not self.box_half_width > 0:
            raise DomainError("box_half_width must be positive for box-average extraction")


def _open_rows(path, header):
    path = Path(path)
    if not path.exists():
        raise InputError(f"no such file: {path}")
    fh = open(path, newline="", encoding="utf-8")
    reader = csv.reader(fh)
    try:
        first = next(reader)
    except StopIteration:
        fh.close()
        raise ParseError("empty file", line=1)
    if [h.strip() for h in first] != header:
        fh.close()
        raise ParseError(f"expected header {','.join(header)}, got {','.join(first)}", line=1)
    return fh, reader


def _num(text, what, line, integer=False):
    try:
        if integer:
            return int(text.strip())
        return float(text.strip())
    except ValueError:
        raise ParseError(f"non-numeric {what} {text!r}", line=line) from None


def read_panel_csv(path) -> PanelMatrix:
    """Read a long-form panel CSV into a PanelMatrix.

    The year axis is the closed span of observed years; absent
    (year, location) pairs and empty/NaN values are marked missing.
    """
    fh, reader = _open_rows(path, PANEL_HEADER)
    cells: dict[tuple[int, str], float] = {}
    locations: dict[str, Location] = {}
    with fh:
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 5:
                raise ParseError(f"expected 5 fields, got {len(row)}", line=lineno)
            year = _num(row[0], "year", lineno, integer=True)
            name = row[1].strip()
            if not name:
                raise ParseError("empty location name", line=lineno)
            lat = _num(row[2], "lat", lineno)
            lon = _num(row[3], "lon", lineno)
            try:
                value = parse_float(row[4])
            except ValueError:
                raise ParseError(f"non-numeric value {row[4]!r}", line=lineno) from None
            if (year, name) in cells:
                raise DuplicateKeyError(f"duplicate (year, location) = ({year}, {name})", line=lineno)
            known = locations.get(name)
            if known is None:
                try:
                    locations[name] = Location(name, lat, lon)
                except InputError as exc:
                    raise ParseError(str(exc), line=lineno) from None
            elif (known.lat, known.lon) != (lat, lon):
                raise ParseError(f"inconsistent coordinates for location {name!r}", line=lineno)
            cells[(year, name)] = value
    if not cells:
        raise ParseError("no data rows", line=2)
    years = np.arange(min(y for y, _ in cells), max(y for y, _ in cells) + 1)
    locs = list(locations.values())
    col = {loc.name: j for j, loc in enumerate(locs)}
    values = np.full((len(years), len(locs)), np.nan)
    for (year, name), v in cells.items():
        values[year - years[0], col[name]] = v
    return PanelMatrix(years, locs, values)


def write_panel_csv(panel: PanelMatrix, path) -> None:
    """Write present cells of ``panel`` in long form (year-major order)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(PANEL_HEADER)
        for i, year in enumerate(panel.years):
            for j, loc in enumerate(panel.locations):
                if panel.missing[i, j]:
                    continue
                writer.writerow([int(year), loc.name, fmt_float(loc.lat), fmt_float(loc.lon), fmt_float(panel.values[i, j])])


def read_grid_csv(path) -> GridFieldSeries:
    """Read a long-form grid CSV.

    Every cell that appears must appear for every year (possibly with an
    empty/NaN value). Cells of the lat x lon product that never appear are
    treated as missing (e.g. ocean cells of a land-only atlas).
    """
    fh, reader = _open_rows(path, GRID_HEADER)
    cells: dict[tuple[int, float, float], float] = {}
    with fh:
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 4:
                raise ParseError(f"expected 4 fields, got {len(row)}", line=lineno)
            year = _num(row[0], "year", lineno, integer=True)
            lat = _num(row[1], "lat", lineno)
            lon = _num(row[2], "lon", lineno)
            try:
                value = parse_float(row[3])
            except ValueError:
                raise ParseError(f"non-numeric value {row[3]!r}", line=lineno) from None
            key = (year, lat, lon)
            if key in cells:
                raise DuplicateKeyError(f"duplicate (year, lat, lon) = {key}", line=lineno)
            cells[key] = value
    if not cells:
        raise ParseError("no data rows", line=2)
    years = np.array(sorted({k[0] for k in cells}))
    lats = np.array(sorted({k[1] for k in cells}))
    lons = np.array(sorted({k[2] for k in cells}))
    per_year: dict[int, set] = {int(y): set() for y in years}
    for (y, la, lo) in cells:
        per_year[y].add((la, lo))
    union = set().union(*per_year.values())
    for y in years:
        absent = union - per_year[int(y)]
        if absent:
            la, lo = min(absent)
            raise GridStructureError(f"ragged grid: cell (lat={la}, lon={lo}) absent in year {int(y)}")
    yi = {int(y): i for i, y in enumerate(years)}
    li = {v: i for i, v in enumerate(lats)}
    oi = {v: i for i, v in enumerate(lons)}
    values = np.full((len(years), len(lats), len(lons)), np.nan)
    for (y, la, lo), v in cells.items():
        values[yi[y], li[la], oi[lo]] = v
    return GridFieldSeries(years, lats, lons, values)


def write_grid_csv(grid: GridFieldSeries, path, include_missing: bool = True) -> None:
    """Write a grid in long form; cells absent in every year are skipped."""
    ever = grid.present.any(axis=0)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(GRID_HEADER)
        for t, year in enumerate(grid.years):
            for i, lat in enumerate(grid.lats):
                for j, lon in enumerate(grid.lons):
                    if not ever[i, j]:
                        continue
                    v = grid.values[t, i, j]
                    if not np.isfinite(v) and not include_missing:
                        continue
                    writer.writerow([int(year), fmt_float(lat), fmt_float(lon), fmt_float(v)])


def read_locations_csv(path) -> list[Location]:
    """Read ``name,lat,lon`` rows."""
    fh, reader = _open_rows(path, ["name", "lat", "lon"])
    out = []
    with fh:
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise ParseError(f"expected 3 fields, got {len(row)}", line=lineno)
            out.append(Location(row[0].strip(), _num(row[1], "lat", lineno), _num(row[2], "lon", lineno)))
    names = [loc.name for loc in out]
    if len(set(names)) != len(names):
        raise InputError("duplicate location names")
    return out


def default_locations() -> list[Location]:
    """The 14 cities of the price panel, with approximate coordinates."""
    return read_locations_csv(Path(__file__).parent / "data" / "cities.csv")


def _year_axis(years):
    full = np.arange(years[0], years[-1] + 1)
    return full, np.searchsorted(full, years)


def extract_panel(grid: GridFieldSeries, locations: Sequence[Location], spec: ExtractionSpec | None = None) -> PanelMatrix:
    """Extract one climate series per location from a gridded field.

    Nearest-point picks the closest cell (plain Euclidean distance in degrees)
    among cells with at least one present value; ties go to the first cell in
    (lat, lon) order. Box-average takes the per-year mean of present cells
    whose centers lie within +-half-width of the location in both coordinates.
    """
    spec = spec or ExtractionSpec()
    full_years, rows = _year_axis(grid.years)
    lat_g, lon_g = np.meshgrid(grid.lats, grid.lons, indexing="ij")
    ever = grid.present.any(axis=0)
    out = np.full((len(full_years), len(locations)), np.nan)
    for j, loc in enumerate(locations):
        if spec.mode == "nearest-point":
            if not ever.any():
                raise ExtractionError(loc.name)
            d2 = np.where(ever, (lat_g - loc.lat) ** 2 + (lon_g - loc.lon) ** 2, np.inf)
            i, k = np.unravel_index(np.argmin(d2), d2.shape)
            out[rows, j] = grid.values[:, i, k]
        else:
            eps = 1e-9 * max(1.0, spec.box_half_width)
            inside = (np.abs(lat_g - loc.lat) <= spec.box_half_width + eps) & (
                np.abs(lon_g - loc.lon) <= spec.box_half_width + eps
            )
            cells = grid.values[:, inside]
            if cells.size == 0 or not np.isfinite(cells).any():
                raise ExtractionError(loc.name)
            present = np.isfinite(cells)
            counts = present.sum(axis=1)
            sums = np.where(present, cells, 0.0).sum(axis=1)
            with np.errstate(invalid="ignore", divide="ignore"):
                out[rows, j] = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    return PanelMatrix(full_years, list(locations), out)


def grid_to_matrix(grid: GridFieldSeries, years=None, bbox=None):
    """Flatten a grid to a wide (year x cell) matrix.

    Parameters
    ----------
    years : sequence of int, optional
        Years to keep (all must exist in the grid).
    bbox : (lon_min, lon_max, lat_min, lat_max), optional
        Inclusive bounding box on cell centers.

    Returns
    -------
    matrix, lats, lons, years
        Only cells with no missing value over the selected years are kept.
    """
    sel_years = grid.years if years is None else np.asarray(years, dtype=np.int64)
    idx = np.searchsorted(grid.years, sel_years)
    if np.any(idx >= len(grid.years)) or np.any(grid.years[np.minimum(idx, len(grid.years) - 1)] != sel_years):
        raise InputError("requested years not all present in grid")
    vals = grid.values[idx]
    lat_g, lon_g = np.meshgrid(grid.lats, grid.lons, indexing="ij")
    keep = np.isfinite(vals).all(axis=0)
    if bbox is not None:
        lon_min, lon_max, lat_min, lat_max = bbox
        keep &= (lon_g >= lon_min) & (lon_g <= lon_max) & (lat_g >= lat_min) & (lat_g <= lat_max)
    if not keep.any():
        raise ExtractionError("bbox", "no complete grid cell inside the selection")
    return vals[:, keep], lat_g[keep], lon_g[keep], sel_years


def latitude_weight(matrix, lats) -> np.ndarray:
    """Scale column j by sqrt(cos(lat_j)) so grid cells count by their area."""
    matrix = np.asarray(matrix, dtype=float)
    lats = np.asarray(lats, dtype=float)
    if matrix.ndim != 2 or lats.shape != (matrix.shape[1],):
        raise InputError("lats must give one latitude per matrix column")
    if np.any(np.abs(lats) >= 90):
        raise DomainError("latitude weighting needs |lat| < 90 for every column")
    return matrix * np.sqrt(np.cos(np.deg2rad(lats)))[None, :]
