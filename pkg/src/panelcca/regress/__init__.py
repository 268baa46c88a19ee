from .covariance import auto_lag, cluster_cov, cr2_cov, newey_west_cov
from .linear import demean_groups, fe_twoway_arellano, ols_newey_west
from .mixed import BoundaryWarning, MixedModelResult, extract_location_coefficients, mixed_effects_reml_cr2
from .results import PanelObservations, RegressionResult

__all__ = [
    "BoundaryWarning",
    "MixedModelResult",
    "PanelObservations",
    "RegressionResult",
    "auto_lag",
    "cluster_cov",
    "cr2_cov",
    "demean_groups",
    "extract_location_coefficients",
    "fe_twoway_arellano",
    "mixed_effects_reml_cr2",
    "newey_west_cov",
    "ols_newey_west",
]
