"""Space-time panel statistics: preprocessing, panel regressions, CCA and sparse multiple CCA."""

from .cca import CanonicalResult, CcaInput, WilksTest, canonical_variates_series, fit_cca, wilks_lambda
from .compound import EventCalendar, RollingCorrPanel, correlation_regression, rolling_correlation
from .ingest import (
    ExtractionSpec,
    GridFieldSeries,
    Location,
    PanelMatrix,
    extract_panel,
    latitude_weight,
    read_grid_csv,
    read_panel_csv,
    write_grid_csv,
    write_panel_csv,
)
from .preprocess import FilterSpec, detrend, gaussian_filter, standardize, winsorize
from .regress import (
    MixedModelResult,
    PanelObservations,
    RegressionResult,
    extract_location_coefficients,
    fe_twoway_arellano,
    mixed_effects_reml_cr2,
    ols_newey_west,
)
from .smcca import SmccaProblem, SmccaResult, fit_smcca, l1_constrained_unit, lambda_sweep, soft_threshold
from .synth import PlantedSpec, gen_planted_cca, gen_planted_multiset, gen_planted_panel

__version__ = "0.1.0"
