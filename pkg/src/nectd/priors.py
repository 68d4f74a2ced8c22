"""
Prior configurations shared by the samplers.

Coefficient priors are Normal with a diagonal scale given as one number. The
number is read as a precision by default (``0.01`` means variance 100); the
``"covariance"`` mode reads it as a variance instead.
"""

from dataclasses import dataclass

import numpy as np

from .mis import NU_LOWER, NU_UPPER

VARIANTS = ("nectd", "shared-t", "normal")


def check_variant(variant: str) -> str:
    # the binary-outcome baseline is called probit; it is the normal variant
    variant = "normal" if variant == "probit" else variant
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS + ('probit',)}, got {variant!r}")
    return variant


@dataclass(frozen=True)
class RegressionPrior:
    """Normal coefficient prior, inverse-Wishart df and Gamma priors on ``nu``.

    ``nu0=None`` selects the model default (3 for selection, ``p + 1`` for
    the binary model, ``L + 1`` for the mixed model).
    """

    coef_mean: float = 0.0
    coef_scale: float = 0.01
    scale_mode: str = "precision"
    nu0: float = None
    theta0: float = 1.0
    phi0: float = 0.1
    sigma2_shape: float = 0.5
    sigma2_rate: float = 0.1
    strict_sigma2: bool = False

    def __post_init__(self):
        if self.scale_mode not in ("precision", "covariance"):
            raise ValueError("scale_mode must be 'precision' or 'covariance'")
        if not (self.coef_scale > 0 and self.theta0 > 0 and self.phi0 > 0):
            raise ValueError("prior scales must be positive")
        if self.nu0 is not None and not self.nu0 > 0:
            raise ValueError("nu0 must be positive")

    @property
    def coef_variance(self) -> float:
        return 1.0 / self.coef_scale if self.scale_mode == "precision" else self.coef_scale

    def coef_precision(self, dim: int) -> np.ndarray:
        return np.eye(dim) / self.coef_variance

    def coef_mean_vector(self, dim: int) -> np.ndarray:
        return np.full(dim, float(self.coef_mean))

    def iw_df(self, default: float) -> float:
        return float(self.nu0) if self.nu0 is not None else float(default)


def sample_nu_prior(theta0, phi0, rng, size=None, lower=NU_LOWER, upper=NU_UPPER):
    """Draw from ``Gamma(theta0, rate phi0)`` truncated to ``[lower, upper]``."""
    n = 1 if size is None else int(np.prod(size))
    out = np.empty(0)
    while out.size < n:
        d = rng.gamma(theta0, 1.0 / phi0, size=n)
        out = np.concatenate([out, d[(d >= lower) & (d <= upper)]])
    out = out[:n]
    return float(out[0]) if size is None else out.reshape(size)
