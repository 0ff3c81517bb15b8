"""Spatial spillover of flood damage on community recovery.

Damage metrics from claims and parcels, recovery rates from mobility
stops, control covariates, spatial weights, OLS/Moran/SLX estimation,
spatial-reach sweeps and spatial-decay coefficients.
"""
from .econometrics import (RegressionFit, SlxFit, fit_ols, fit_slx, morans_i,
                           pearson_correlation, significance_stars, vif)
from .spatial_analysis import (ReachProfile, compute_decay_coefficients, heterogeneity_test,
                               locate_cutoff_and_extremum, sweep_spatial_reach)
from .weights import SpatialWeights, build_weights, spatial_lag

__version__ = "0.1.0"

__all__ = [
    "RegressionFit", "SlxFit", "fit_ols", "fit_slx", "morans_i", "pearson_correlation",
    "significance_stars", "vif", "ReachProfile", "compute_decay_coefficients",
    "heterogeneity_test", "locate_cutoff_and_extremum", "sweep_spatial_reach",
    "SpatialWeights", "build_weights", "spatial_lag",
]
