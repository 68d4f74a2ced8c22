"""
Joint-distribution ("getting it right") checks for the Gibbs samplers.

Two simulators of the joint law of parameters and data are compared:

* marginal-conditional: parameters from the prior (data are not needed
  for the parameter marginals);
* successive-conditional: alternate one Gibbs sweep with regenerating the
  latents and data from the current parameters.

A correct sampler leaves the prior invariant under this alternation, so
every parameter marginal of the second simulator matches the prior.
Marginals are compared with a two-sample Kolmogorov-Smirnov statistic whose
p-value uses the effective size of the autocorrelated series.
"""

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .diagnostics import effective_sample_size


@dataclass
class GewekeResult:
    names: list
    statistics: np.ndarray
    pvalues: np.ndarray
    ess: np.ndarray
    alpha: float

    @property
    def corrected(self) -> np.ndarray:
        """Bonferroni-corrected p-values."""
        return np.minimum(1.0, self.pvalues * len(self.names))

    @property
    def passed(self) -> bool:
        return bool(np.all(self.corrected > self.alpha))

    def failures(self):
        return [n for n, p in zip(self.names, self.corrected) if p <= self.alpha]


def ks_pvalue(marginal, successive, ess=None) -> tuple:
    """Two-sample KS statistic and asymptotic p-value.

    ``ess`` replaces the size of ``successive`` in the effective sample size.
    """
    d = stats.ks_2samp(marginal, successive).statistic
    n1 = marginal.size
    n2 = successive.size if ess is None else max(ess, 2.0)
    en = np.sqrt(n1 * n2 / (n1 + n2))
    return float(d), float(stats.kstwobign.sf(d * en))


def geweke_draws(sampler, n_cycles: int, rng, n_prior: int = None, transforms: dict = None):
    """Run both simulators; returns ``(names, marginal, successive)`` arrays.

    ``transforms`` maps a parameter name to a function applied before the
    comparison (e.g. ``np.log`` for scale parameters).
    """
    names = list(sampler.param_names)
    n_prior = n_cycles if n_prior is None else n_prior
    marginal = np.empty((n_prior, len(names)))
    for k in range(n_prior):
        marginal[k] = sampler.record(sampler.sample_prior(rng))
    state = sampler.sample_prior(rng)
    sampler.simulate_data(state, rng)
    successive = np.empty((n_cycles, len(names)))
    for k in range(n_cycles):
        sampler.sweep(state, rng)
        sampler.simulate_data(state, rng)
        successive[k] = sampler.record(state)
    for j, name in enumerate(names):
        if transforms and name in transforms:
            marginal[:, j] = transforms[name](marginal[:, j])
            successive[:, j] = transforms[name](successive[:, j])
    return names, marginal, successive


def geweke_test(sampler, n_cycles: int, rng, alpha: float = 0.01, n_prior: int = None,
                transforms: dict = None) -> GewekeResult:
    """Compare every recorded parameter marginal between the two simulators."""
    names, marginal, successive = geweke_draws(sampler, n_cycles, rng, n_prior, transforms)
    stat = np.empty(len(names))
    pval = np.empty(len(names))
    ess = np.empty(len(names))
    for j in range(len(names)):
        ess[j] = effective_sample_size(successive[:, j])
        stat[j], pval[j] = ks_pvalue(marginal[:, j], successive[:, j], ess[j])
    return GewekeResult(names, stat, pval, ess, alpha)
