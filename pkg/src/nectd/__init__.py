"""Non-elliptical contoured t distributions and robust Bayesian regression samplers."""

from nectd.chains import ChainStore, McmcConfig, run_chains
from nectd.diagnostics import coverage_report, effective_sample_size, gelman_rubin, quantiles, summary_table
from nectd.distribution import (
    BlockSpec,
    NectdParams,
    bivariate_density,
    covariance_pair,
    product_moment,
    sample_nectd,
)
from nectd.fit_nectd import NectdPrior, fit_nectd
from nectd.geweke import geweke_test
from nectd.lmm import LmmData, fit_lmm
from nectd.priors import RegressionPrior
from nectd.robit import RobitData, fit_robit
from nectd.selection import SelectionData, fit_selection
from nectd.simgen import SimDesign, generate

__all__ = [
    "BlockSpec",
    "ChainStore",
    "LmmData",
    "McmcConfig",
    "NectdParams",
    "NectdPrior",
    "RegressionPrior",
    "RobitData",
    "SelectionData",
    "SimDesign",
    "bivariate_density",
    "covariance_pair",
    "coverage_report",
    "effective_sample_size",
    "fit_lmm",
    "fit_nectd",
    "fit_robit",
    "fit_selection",
    "gelman_rubin",
    "generate",
    "geweke_test",
    "product_moment",
    "quantiles",
    "run_chains",
    "sample_nectd",
    "summary_table",
]
