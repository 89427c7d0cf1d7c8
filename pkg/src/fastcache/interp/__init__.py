"""Interpretability toolkit: background/motion decomposition, exact token
interactions, and empirical checks of the approximation-error bounds."""

from .background import BackgroundModel, decompose, fit_background, motion_residual
from .interactions import (
    InteractionReport,
    ProbeFunction,
    cache_trigger,
    harsanyi,
    singleton_attributions,
    write_attribution_csv,
)
from .probes import ExpLinearProbe, LinearProbe, MeanProbe, PolynomialProbe
from .taylor import (
    DriftReport,
    GaussianMeanShiftDrift,
    TaylorReport,
    drift_bound_check,
    first_order_gap_slope,
    taylor_residual_check,
)

__all__ = [
    "BackgroundModel",
    "fit_background",
    "motion_residual",
    "decompose",
    "ProbeFunction",
    "InteractionReport",
    "harsanyi",
    "singleton_attributions",
    "cache_trigger",
    "write_attribution_csv",
    "PolynomialProbe",
    "ExpLinearProbe",
    "LinearProbe",
    "MeanProbe",
    "TaylorReport",
    "taylor_residual_check",
    "first_order_gap_slope",
    "GaussianMeanShiftDrift",
    "DriftReport",
    "drift_bound_check",
]
