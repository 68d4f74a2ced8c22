"""
Parameter-expanded update of a scale matrix with some diagonal entries
fixed at one.

The restricted matrix ``Omega`` is embedded in an unrestricted
``Sigma = D Omega D`` whose prior is ``Inv-Wishart(nu0, I)``; ``D`` is
diagonal with free scales on the restricted coordinates and ones elsewhere.
Given the scale ``D`` drawn from its prior conditional, an inverse-Wishart
draw built from the rescaled residuals is used as a Metropolis-Hastings
proposal for ``Sigma``, and ``Omega`` is read back from the result.

The proposal alone is not invariant for the posterior of ``Omega``: the
rescaled residuals depend on the current scale, which the inverse-Wishart
conditional treats as data. The accept/reject correction makes the move
exact. ``literal=True`` accepts every proposal instead.
"""

import math

import numpy as np

from .kernels import log_inverse_wishart_pdf, sample_inverse_wishart
from .mis import mis_step_q


def implied_scale_draw(omega, nu0, mask, rng):
    """Draw the expansion scales ``d_i`` (``d_i^2 ~ omega^{ii} / chi^2_{nu0}``).

    Unmasked coordinates get scale one.
    """
    inv_diag = np.diag(np.linalg.inv(omega))
    d = np.ones(omega.shape[0])
    idx = np.flatnonzero(mask)
    d[idx] = np.sqrt(inv_diag[idx] / rng.chisquare(nu0, size=idx.size))
    return d


def _restricted_loglik(omega, resid_cross, n):
    # sum_i log N(r_i; 0, Omega) up to a constant, from R = sum r r'
    chol = np.linalg.cholesky(omega)
    logdet = 2.0 * np.log(np.diag(chol)).sum()
    inv = np.linalg.inv(omega)
    return -0.5 * n * logdet - 0.5 * np.sum(inv * resid_cross)


def _scales_of(sigma, mask):
    d = np.ones(sigma.shape[0])
    d[mask] = np.sqrt(np.diag(sigma)[mask])
    return d


def draw_restricted_scale(resid_cross, n, omega, nu0, mask, rng, literal=False, counter=None):
    """One parameter-expanded update of ``Omega``.

    Parameters
    ----------
    resid_cross : (p, p) array
        ``sum_i r_i r_i'`` of the weighted residuals, each ``r_i ~ N(0, Omega)``.
    n : int
        Number of residual vectors.
    omega : (p, p) array
        Current value; ``omega[i, i] == 1`` wherever ``mask`` is true.
    nu0 : float
        Inverse-Wishart prior df of the expanded matrix.
    mask : (p,) bool array
        Coordinates whose diagonal is fixed at one.
    literal : bool
        Accept every proposal (not invariant; kept for comparison).
    counter : AcceptanceCounter, optional

    Returns
    -------
    (p, p) array with unit diagonal on the masked coordinates.
    """
    mask = np.asarray(mask, dtype=bool)
    p = omega.shape[0]
    eye = np.eye(p)
    d = implied_scale_draw(omega, nu0, mask, rng)
    psi = eye + resid_cross * np.outer(d, d)
    sigma_new = sample_inverse_wishart(n + nu0, psi, rng)
    d_new = _scales_of(sigma_new, mask)
    omega_new = sigma_new / np.outer(d_new, d_new)
    omega_new[mask, mask] = 1.0
    omega_new = 0.5 * (omega_new + omega_new.T)
    if literal:
        if counter is not None:
            counter.update(True)
        return omega_new
    sigma_cur = omega * np.outer(d, d)
    psi_rev = eye + resid_cross * np.outer(d_new, d_new)
    log_ratio = (
        log_inverse_wishart_pdf(sigma_new, nu0, eye)
        + _restricted_loglik(omega_new, resid_cross, n)
        + log_inverse_wishart_pdf(sigma_cur, n + nu0, psi_rev)
        - log_inverse_wishart_pdf(sigma_cur, nu0, eye)
        - _restricted_loglik(omega, resid_cross, n)
        - log_inverse_wishart_pdf(sigma_new, n + nu0, psi)
    )
    accept = math.log(rng.random()) < log_ratio
    if counter is not None:
        counter.update(accept)
    return omega_new if accept else omega


def log_selection_scale_prior(sigma1, rho, nu0):
    """Log density in ``(sigma1, rho)`` of the restricted 2x2 matrix implied by
    ``Inv-Wishart(nu0, I)`` with the lower-right entry fixed at one."""
    one_m = 1.0 - rho * rho
    return -(nu0 + 1.0) * np.log(sigma1) - 1.5 * np.log(one_m) - 0.5 / (sigma1 * sigma1 * one_m)


def log_correlation_prior(omega, nu0):
    """Log density of a correlation matrix implied by ``Inv-Wishart(nu0, I)``
    with every diagonal entry expanded."""
    p = omega.shape[0]
    _, logdet = np.linalg.slogdet(omega)
    inv_diag = np.diag(np.linalg.inv(omega))
    return -0.5 * (nu0 + p + 1) * logdet - 0.5 * nu0 * np.log(inv_diag).sum()


def draw_latent_scale(quad, cross, n_scaled, rng, counter=None) -> float:
    """Factor ``c`` for a joint rescaling of latent outcomes and coefficients.

    Multiplying ``n_scaled`` coordinates (latent outcomes and the
    coefficients of their equation) by ``c`` leaves the observed signs
    unchanged. With ``s = c^2`` the conditional of the factor is
    ``s^{n_scaled/2 - 1} exp(-quad s / 2 - cross sqrt(s))``, where ``quad``
    and ``cross`` collect the quadratic and linear terms of the Normal
    log-density and the coefficient prior at ``c = 1``. One MIS step starts
    from ``s = 1``; the matched Gamma proposal is scale-equivariant, so the
    move is exact. Returns ``c`` (one on rejection).
    """
    s = mis_step_q(np.ones(1), quad, cross, n_scaled - 1.0, 1, rng, counter)[0]
    return math.sqrt(s)
