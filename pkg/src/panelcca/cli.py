"""``panelcca`` command-line entry point.

Every run writes into a fresh directory under ``--out`` holding its outputs,
a ``manifest.json`` (config hash, input/output hashes, version) and a
``config.txt`` that can be passed back through ``--config`` to rerun it.
Exit status: 0 success, 1 user error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import sys
import warnings
from datetime import datetime
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from ._io import dumps_json, sha256_file, write_json, write_table_csv
from .cca import canonical_variates_series, fit_cca, wilks_lambda
from .compound import common_start_year, correlation_regression, default_events, read_events_csv, rolling_correlation
from .errors import InputError, NumericalError, PanelccaError
from .ingest import (
    ExtractionSpec,
    PanelMatrix,
    default_locations,
    extract_panel,
    grid_to_matrix,
    latitude_weight,
    read_grid_csv,
    read_locations_csv,
    read_panel_csv,
    write_grid_csv,
    write_panel_csv,
)
from .preprocess import FilterSpec, apply_steps, parse_steps, preprocess_panel
from .regress import (
    PanelObservations,
    extract_location_coefficients,
    fe_twoway_arellano,
    mixed_effects_reml_cr2,
    ols_newey_west,
)
from .smcca import lambda_grid, lambda_sweep, peak_years, standardize_columns
from .synth import (
    PlantedSpec,
    gen_planted_cca,
    gen_planted_multiset,
    gen_planted_panel,
    matrix_to_grid,
    matrix_to_panel,
    observations_to_panels,
)

log = logging.getLogger("panelcca")

EXIT_OK, EXIT_USER, EXIT_NUMERIC = 0, 1, 2
STOCHASTIC = {"synth", "smcca"}


class UsageError(InputError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _lag(text):
    if text == "auto":
        return "auto"
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError("lag must be a non-negative integer or 'auto'") from None
    if value < 0:
        raise argparse.ArgumentTypeError("lag must be >= 0")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--out", default="runs", help="parent directory for run outputs")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--config", default=None, help="key=value file overriding flags")

    parser = _Parser(prog="panelcca", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ingest", parents=[common], help="extract location series from a grid CSV")
    p.add_argument("--grid", required=True)
    p.add_argument("--locations", default=None, help="name,lat,lon CSV (default: bundled 14 cities)")
    p.add_argument("--mode", choices=["nearest-point", "box-average"], default="nearest-point")
    p.add_argument("--half-width", type=float, default=0.5)
    p.add_argument("--name", default="panel")

    p = sub.add_parser("preprocess", parents=[common], help="transform a panel location-wise")
    p.add_argument("--panel", required=True)
    p.add_argument("--steps", default="winsorize,detrend,standardize")
    p.add_argument("--level", type=float, default=0.01)
    p.add_argument("--filter-sigma", type=float, default=3.0)
    p.add_argument("--truncation", type=int, default=4)

    p = sub.add_parser("regress", parents=[common], help="OLS / fixed-effects / mixed-effects regression")
    p.add_argument("--cpi", required=True)
    p.add_argument("--temp", required=True)
    p.add_argument("--pdsi", required=True)
    p.add_argument("--model", choices=["ols", "fe", "mixed"], default="fe")
    p.add_argument("--lag", type=_lag, default="auto")
    p.add_argument("--cluster", choices=["location"], default="location")
    p.add_argument("--cov", choices=["cluster-hac", "cluster"], default="cluster-hac")
    p.add_argument("--cpi-steps", default="winsorize,detrend,standardize")
    p.add_argument("--climate-steps", default="standardize")
    p.add_argument("--level", type=float, default=0.01)

    p = sub.add_parser("cca", parents=[common], help="two-set canonical correlation analysis")
    p.add_argument("--x", required=True)
    p.add_argument("--y", required=True)
    p.add_argument("--components", type=int, default=None)
    p.add_argument("--filter-sigma", type=float, default=3.0)
    p.add_argument("--x-steps", default="winsorize,detrend,standardize")
    p.add_argument("--y-steps", default="standardize")
    p.add_argument("--level", type=float, default=0.01)
    p.add_argument("--no-lat-weight", action="store_true", help="skip sqrt(cos(lat)) weighting of Y")
    p.add_argument("--ridge", type=float, default=None, help="ridge added to covariance diagonals")
    p.add_argument("--keep-duplicates", action="store_true")
    p.add_argument("--markers", type=_ints, default=[1634, 1635, 1636])

    p = sub.add_parser("smcca", parents=[common], help="sparse multiple CCA over panels and grids")
    p.add_argument("--panels", type=lambda s: [v for v in s.split(",") if v], default=[])
    p.add_argument("--grids", type=lambda s: [v for v in s.split(",") if v], default=[])
    p.add_argument("--bbox", type=_floats, default=[-5.0, 25.0, 40.0, 60.0], help="lon_min,lon_max,lat_min,lat_max")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--lambda", dest="lam", type=float, default=None)
    g.add_argument("--lambda-grid", default=None, help="start:stop:n")
    p.add_argument("--panel-steps", default="winsorize,detrend,standardize")
    p.add_argument("--grid-steps", default="standardize")
    p.add_argument("--level", type=float, default=0.01)
    p.add_argument("--no-lat-weight", action="store_true")
    p.add_argument("--max-sweeps", type=int, default=500)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--init", choices=["svd", "random"], default="svd")
    p.add_argument("--top", type=int, default=10)

    p = sub.add_parser("compound", parents=[common], help="rolling correlations regressed on war/famine indicators")
    p.add_argument("--cpi", required=True)
    p.add_argument("--climate", required=True)
    p.add_argument("--climate-name", default="PDSI")
    p.add_argument("--windows", type=_ints, default=[10, 15, 20])
    p.add_argument("--events", default=None, help="type,start,end CSV (default: bundled calendar)")
    p.add_argument("--no-common-sample", action="store_true")
    p.add_argument("--centered", action="store_true")
    p.add_argument("--cov", choices=["cluster-hac", "cluster"], default="cluster-hac")
    p.add_argument("--lag", type=_lag, default="auto")
    p.add_argument("--famine-per-location", action="store_true")
    p.add_argument("--cpi-steps", default="winsorize,detrend,standardize")
    p.add_argument("--climate-steps", default="standardize")
    p.add_argument("--level", type=float, default=0.01)

    p = sub.add_parser("synth", parents=[common], help="write synthetic data with planted structure")
    p.add_argument("--kind", choices=["panel", "cca", "multiset"], default="panel")
    p.add_argument("--T", type=int, default=221)
    p.add_argument("--N", type=int, default=14)
    p.add_argument("--dims", type=_ints, default=[5, 5])
    p.add_argument("--factors", type=int, default=1)
    p.add_argument("--noise-sd", type=float, default=1.0)
    p.add_argument("--location-sd", type=float, default=0.0)
    p.add_argument("--time-sd", type=float, default=0.0)
    p.add_argument("--slope-sd", type=_floats, default=[0.0, 0.0])
    p.add_argument("--betas", type=_floats, default=[-0.03, -0.007])
    p.add_argument("--regressor-ar", type=float, default=0.0)
    p.add_argument("--error-ar", type=float, default=0.0)
    p.add_argument("--heteroskedastic", action="store_true")
    p.add_argument("--missing-fraction", type=float, default=0.0)
    p.add_argument("--start-year", type=int, default=1565)
    return parser


def _config_tokens(path, subparser):
    """Turn key=value lines into argv tokens for ``subparser``."""
    path = Path(path)
    if not path.exists():
        raise UsageError(f"config file not found: {path}")
    actions = {a.dest: a for a in subparser._actions}
    for a in subparser._actions:
        for opt in a.option_strings:
            actions[opt.lstrip("-").replace("-", "_")] = a
    tokens = []
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        action = actions.get(key.replace("-", "_"))
        if action is None or not action.option_strings or action.dest in ("config", "help"):
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
        flag = action.option_strings[-1]
        if isinstance(action, argparse._StoreTrueAction):
            if value.lower() in ("1", "true", "yes", "on"):
                tokens.append(flag)
            elif value.lower() not in ("0", "false", "no", "off", ""):
                raise UsageError(f"{path}:{lineno}: {key} expects true/false")
        elif value != "":
            tokens.append(f"{flag}={value}")
    return tokens


NEGATIVE_OK = {"--bbox", "--betas", "--slope-sd", "--lambda", "--start-year"}


def _glue_negative(argv):
    """Rewrite ``--bbox -5,25,...`` as ``--bbox=-5,25,...`` so argparse keeps the value."""
    out = []
    it = iter(argv)
    for tok in it:
        if tok in NEGATIVE_OK:
            nxt = next(it, None)
            out.append(tok if nxt is None else f"{tok}={nxt}")
        else:
            out.append(tok)
    return out


def _config_path(argv):
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if tok.startswith("--config="):
            return tok.split("=", 1)[1]
    return None


def parse_args(argv):
    """Parse argv; keys from ``--config`` are appended so they win over flags."""
    parser = build_parser()
    argv = _glue_negative(list(argv))
    path = _config_path(argv)
    if path is not None and argv and argv[0] in COMMANDS:
        subparser = parser._subparsers._group_actions[0].choices[argv[0]]
        argv = argv + _config_tokens(path, subparser)
    return parser.parse_args(argv)


def _config_dict(args) -> dict:
    out = {}
    for key, value in sorted(vars(args).items()):
        if key in ("config", "out"):
            continue
        out[key] = value
    return out


def _config_text(args) -> str:
    lines = []
    for key, value in _config_dict(args).items():
        if key == "command" or value is None:
            continue
        if isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, list):
            value = ",".join(str(v) for v in value)
        lines.append(f"{key}={value}")
    return "\n".join(lines) + "\n"


def _run_dir(out, command) -> Path:
    base = Path(out)
    stamp = datetime.now().strftime("%Y%m%dT%H%M%S")
    path = base / f"{command}-{stamp}"
    n = 1
    while path.exists():
        path = base / f"{command}-{stamp}-{n}"
        n += 1
    path.mkdir(parents=True)
    return path


def _load_panel(path, steps, level=0.01):
    panel = read_panel_csv(path)
    return preprocess_panel(panel, parse_steps(steps), level) if parse_steps(steps) else panel


def _complete_rows(*panels):
    """Years where every column of every panel is present (panels share years)."""
    years = panels[0].years
    for p in panels[1:]:
        if not np.array_equal(p.years, years):
            raise InputError("panels must share the same year span")
    keep = np.ones(len(years), dtype=bool)
    for p in panels:
        keep &= ~p.missing.any(axis=1)
    if keep.sum() < 3:
        raise InputError("fewer than 3 complete years shared by the inputs")
    return keep


def _align_years(*panels):
    start = max(p.years[0] for p in panels)
    end = min(p.years[-1] for p in panels)
    if start > end:
        raise InputError("inputs share no years")
    return [p.select_years(start, end) for p in panels]


def cmd_ingest(args, run):
    grid = read_grid_csv(args.grid)
    locations = read_locations_csv(args.locations) if args.locations else default_locations()
    panel = extract_panel(grid, locations, ExtractionSpec(args.mode, args.half_width))
    write_panel_csv(panel, run / f"{args.name}.csv")
    print(f"extracted {panel.shape[1]} locations x {panel.shape[0]} years ({panel.n_present} present cells)")
    return [args.grid] + ([args.locations] if args.locations else [])


def cmd_preprocess(args, run):
    panel = read_panel_csv(args.panel)
    out = preprocess_panel(panel, parse_steps(args.steps), args.level, FilterSpec(args.filter_sigma, args.truncation))
    write_panel_csv(out, run / "panel.csv")
    print(f"preprocessed {out.shape[1]} locations x {out.shape[0]} years with steps: {args.steps}")
    return [args.panel]


def cmd_regress(args, run):
    cpi = _load_panel(args.cpi, args.cpi_steps, args.level)
    temp = _load_panel(args.temp, args.climate_steps, args.level)
    pdsi = _load_panel(args.pdsi, args.climate_steps, args.level)
    obs = PanelObservations.from_panels(cpi, temp, pdsi)
    if args.model == "ols":
        res = ols_newey_west(obs, lag=args.lag)
    elif args.model == "fe":
        res = fe_twoway_arellano(obs, cov_type=args.cov, lag=args.lag)
    else:
        res = mixed_effects_reml_cr2(obs)
        write_table_csv(run / "location_coefficients.csv", extract_location_coefficients(res))
    write_json(run / "result.json", res.to_dict())
    table = res.table()
    (run / "table.txt").write_text(table + "\n", encoding="utf-8")
    print(table)
    return [args.cpi, args.temp, args.pdsi]


def cmd_cca(args, run):
    x = _load_panel(args.x, args.x_steps, args.level)
    y = _load_panel(args.y, args.y_steps, args.level)
    x, y = _align_years(x, y)
    keep = _complete_rows(x, y)
    X = x.values[keep]
    Y = y.values[keep]
    if not args.no_lat_weight:
        Y = latitude_weight(Y, y.lats)
    res = fit_cca(X, Y, args.components, ridge=args.ridge, collapse_duplicates=not args.keep_duplicates)
    wilks = wilks_lambda(res)
    out = res.to_dict()
    out["x_locations"] = x.names
    out["y_locations"] = y.names
    out["wilks"] = wilks.to_dict()
    write_json(run / "result.json", out)
    series = canonical_variates_series(res, x.years[keep], components=res.k, filter_spec=FilterSpec(args.filter_sigma), markers=args.markers)
    write_table_csv(run / "variates.csv", series)
    for j, (rho, pv) in enumerate(zip(res.correlations, wilks.pvalues)):
        print(f"component {j + 1}: rho = {rho:.4f}  Wilks p = {pv:.3g}")
    return [args.x, args.y]


def _grid_dataset(path, years, bbox, steps, level, weight):
    grid = read_grid_csv(path)
    M, lats, lons, _ = grid_to_matrix(grid, years=years, bbox=bbox)
    steps = parse_steps(steps)
    if steps == ["standardize"]:
        M = standardize_columns(M)
    elif steps:
        M = np.column_stack([apply_steps(M[:, j], years, steps, level) for j in range(M.shape[1])])
    if weight:
        M = latitude_weight(M, lats)
    return M, lats, lons


def cmd_smcca(args, run):
    if not args.panels and not args.grids:
        raise UsageError("smcca needs --panels and/or --grids")
    if len(args.panels) + len(args.grids) < 2:
        raise UsageError("smcca needs at least two datasets")
    if len(args.bbox) != 4:
        raise UsageError("--bbox takes lon_min,lon_max,lat_min,lat_max")
    panels = _align_years(*[_load_panel(p, args.panel_steps, args.level) for p in args.panels]) if args.panels else []
    grids_years = [read_grid_csv(g).years for g in args.grids]
    if panels:
        keep = _complete_rows(*panels)
        years = panels[0].years[keep]
    else:
        years = grids_years[0]
    for gy in grids_years:
        years = np.intersect1d(years, gy)
    if len(years) < 3:
        raise InputError("fewer than 3 years shared by all datasets")
    datasets, meta = [], []
    for path, p in zip(args.panels, panels):
        rows = np.searchsorted(p.years, years)
        datasets.append(standardize_columns(p.values[rows]))
        meta.append({"source": path, "columns": p.names})
    for path in args.grids:
        M, lats, lons = _grid_dataset(path, years, tuple(args.bbox), args.grid_steps, args.level, not args.no_lat_weight)
        datasets.append(M)
        meta.append({"source": path, "lats": lats, "lons": lons})
    grid = np.array([args.lam]) if args.lam is not None else lambda_grid(args.lambda_grid) if args.lambda_grid else np.array([0.3])
    sweep = lambda_sweep(datasets, grid, seed=args.seed, max_sweeps=args.max_sweeps, tol=args.tol, init=args.init)
    fits = []
    variates = {"year": years}
    for lam, r in zip(sweep.lambdas, sweep.results):
        z = standardize_columns(r.variates) if np.all(r.variates.std(axis=0) > 0) else r.variates
        combined = z.mean(axis=1)
        fits.append({
            "lambda": float(lam),
            **r.to_dict(),
            "peak_years": {
                "combined": peak_years(combined, years, args.top),
                **{f"dataset_{k}": peak_years(r.variates[:, k], years, args.top) for k in range(len(datasets))},
            },
        })
        for k in range(len(datasets)):
            variates[f"lambda_{lam:.4g}_dataset_{k}"] = r.variates[:, k]
        variates[f"lambda_{lam:.4g}_combined"] = combined
    write_json(run / "result.json", {"datasets": meta, "fits": fits, "stability": sweep.stability})
    write_table_csv(run / "variates.csv", pd.DataFrame(variates))
    write_table_csv(run / "sweep.csv", sweep.summary)
    for f in fits:
        print(f"lambda = {f['lambda']:.3g}: objective = {f['objective']:.4g}, nonzero = {f['nonzero']}, "
              f"converged = {f['converged']}, peaks = {f['peak_years']['combined']}")
    return list(args.panels) + list(args.grids)


def cmd_compound(args, run):
    cpi = _load_panel(args.cpi, args.cpi_steps, args.level)
    climate = _load_panel(args.climate, args.climate_steps, args.level)
    cpi, climate = _align_years(cpi, climate)
    if cpi.names != climate.names:
        order = [climate.names.index(n) for n in cpi.names] if sorted(cpi.names) == sorted(climate.names) else None
        if order is None:
            raise InputError("cpi and climate panels must cover the same locations")
        climate = PanelMatrix(climate.years, [climate.locations[i] for i in order], climate.values[:, order])
    events = read_events_csv(args.events) if args.events else default_events()
    start = None if args.no_common_sample else common_start_year(cpi.years, args.windows, args.centered)
    results = {}
    tables = []
    for w in args.windows:
        corr = rolling_correlation(cpi, climate, w, centered=args.centered)
        rows = [(int(y), loc.name, corr.values[t, j]) for t, y in enumerate(corr.years) for j, loc in enumerate(corr.locations) if corr.valid[t, j]]
        write_table_csv(run / f"rolling_{w}.csv", pd.DataFrame(rows, columns=["year", "location", "correlation"]))
        res = correlation_regression(corr, events, cpi, climate, start_year=start, cov_type=args.cov, lag=args.lag,
                                     climate_name=args.climate_name, famine_per_location=args.famine_per_location)
        results[f"{w}Y"] = res.to_dict()
        tables.append(f"[{w}Y window]\n{res.table()}")
    write_json(run / "results.json", results)
    text = "\n\n".join(tables)
    (run / "table.txt").write_text(text + "\n", encoding="utf-8")
    print(text)
    return [args.cpi, args.climate] + ([args.events] if args.events else [])


def cmd_synth(args, run):
    spec = PlantedSpec(
        T=args.T, N=args.N, dims=tuple(args.dims), n_factors=args.factors, noise_sd=args.noise_sd, seed=args.seed,
        location_sd=args.location_sd, time_sd=args.time_sd, slope_sd=tuple(args.slope_sd), betas=tuple(args.betas),
        regressor_ar=args.regressor_ar, error_ar=args.error_ar, heteroskedastic=args.heteroskedastic,
        missing_fraction=args.missing_fraction, start_year=args.start_year,
    )
    years = args.start_year + np.arange(args.T)
    if args.kind == "panel":
        obs, truth = gen_planted_panel(spec)
        for name, panel in zip(("cpi", "temp", "pdsi"), observations_to_panels(obs)):
            write_panel_csv(panel, run / f"{name}.csv")
    elif args.kind == "cca":
        X, Y, truth = gen_planted_cca(spec)
        write_panel_csv(matrix_to_panel(X, years, "x"), run / "x.csv")
        write_panel_csv(matrix_to_panel(Y, years, "y"), run / "y.csv")
    else:
        datasets, truth = gen_planted_multiset(spec)
        write_panel_csv(matrix_to_panel(datasets[0], years, "x"), run / "panel0.csv")
        for k, M in enumerate(datasets[1:], start=1):
            write_grid_csv(matrix_to_grid(M, years), run / f"grid{k}.csv")
    write_json(run / "truth.json", truth)
    print(f"wrote synthetic {args.kind} data to {run}")
    return []


COMMANDS = {
    "ingest": cmd_ingest,
    "preprocess": cmd_preprocess,
    "regress": cmd_regress,
    "cca": cmd_cca,
    "smcca": cmd_smcca,
    "compound": cmd_compound,
    "synth": cmd_synth,
}


def run(args) -> Path:
    """Execute a parsed command; returns the run directory."""
    if args.command in STOCHASTIC and args.seed is None:
        raise UsageError(f"{args.command} requires --seed")
    config = _config_dict(args)
    config_hash = hashlib.sha256(dumps_json(config).encode()).hexdigest()
    run_dir = _run_dir(args.out, args.command)
    inputs = COMMANDS[args.command](args, run_dir)
    (run_dir / "config.txt").write_text(_config_text(args), encoding="utf-8")
    outputs = {p.name: sha256_file(p) for p in sorted(run_dir.iterdir()) if p.name != "manifest.json"}
    manifest = {
        "artifact": "panelcca",
        "version": __version__,
        "command": args.command,
        "config": config,
        "config_hash": config_hash,
        "inputs": {str(p): sha256_file(p) for p in inputs},
        "outputs": outputs,
    }
    write_json(run_dir / "manifest.json", manifest)
    log.info("run directory: %s", run_dir)
    return run_dir


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(argv)
        with warnings.catch_warnings():
            warnings.simplefilter("always")
            warnings.showwarning = lambda msg, cat, *a, **k: log.warning("warning: %s", msg)
            run(args)
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except InputError as exc:
        log.error("error: %s", exc)
        return EXIT_USER
    except (NumericalError, PanelccaError, np.linalg.LinAlgError) as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
