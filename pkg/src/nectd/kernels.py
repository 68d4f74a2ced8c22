"""
Special functions and elementary random-variate generators.

Every sampler in the package draws through a :class:`numpy.random.Generator`
built by :func:`make_rng`. Streams for different chains are obtained by
jumping a PCG64 bit generator, so they never overlap.
"""

import math

import numpy as np
from scipy import integrate
from scipy.special import gammaln, ndtr, ndtri


# Standardized truncation points beyond this use exponential rejection.
TAIL_CUTOFF = 5.0


def make_rng(seed: int, stream_id: int = 0) -> np.random.Generator:
    """Return the generator for ``(seed, stream_id)``.

    The stream for ``stream_id = k`` is the PCG64 state seeded with ``seed``
    and jumped ``k`` times (each jump advances 2**127 steps), so streams of
    distinct ids are non-overlapping.
    """
    if seed < 0 or stream_id < 0:
        raise ValueError("seed and stream_id must be non-negative")
    bitgen = np.random.PCG64(seed)
    if stream_id:
        bitgen = bitgen.jumped(stream_id)
    return np.random.Generator(bitgen)


def log_gamma_fn(x):
    """Natural log of the Gamma function for positive arguments."""
    x = np.asarray(x, dtype=float)
    if np.any(~(x > 0)):
        raise ValueError("log_gamma_fn requires x > 0")
    out = gammaln(x)
    return float(out) if out.ndim == 0 else out


def sample_scaled_chisq(nu, rng, size=None):
    """Draw ``q ~ chi^2_nu / nu`` (mean one)."""
    nu = np.asarray(nu, dtype=float)
    if np.any(~(nu > 0)):
        raise ValueError("degrees of freedom must be positive")
    return rng.gamma(nu / 2.0, 2.0 / nu, size=size)


def _exp_tail(a, b, rng):
    """Standard normal truncated to ``(a, b)`` with ``a > TAIL_CUTOFF``.

    Exponential proposal with Robert's optimal rate, itself truncated to
    ``(a, b)`` so two-sided intervals never livelock.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    lam = 0.5 * (a + np.sqrt(a * a + 4.0))
    width = b - a
    out = np.empty_like(a)
    todo = np.arange(a.size)
    while todo.size:
        la, aa, ww = lam[todo], a[todo], width[todo]
        # -expm1(-inf) == 1 handles the one-sided case
        span = -np.expm1(-la * ww)
        u = rng.random(todo.size)
        z = aa - np.log1p(-u * span) / la
        accept = np.log(rng.random(todo.size)) <= -0.5 * (z - la) ** 2
        out[todo[accept]] = z[accept]
        todo = todo[~accept]
    return out


def sample_truncated_normal(mean, var, lower, upper, rng):
    """Draw from ``N(mean, var)`` truncated to the open interval ``(lower, upper)``.

    All arguments broadcast. Intervals within ``TAIL_CUTOFF`` standard
    deviations of the mean use the inverse CDF (computed on the side of the
    distribution where the CDF keeps full relative precision); intervals
    further out use exponential rejection.

    Returns a float for scalar input, otherwise an array.
    """
    mean, var, lower, upper = np.broadcast_arrays(
        *(np.asarray(v, dtype=float) for v in (mean, var, lower, upper))
    )
    scalar = mean.ndim == 0
    mean, var, lower, upper = (np.atleast_1d(v).ravel() for v in (mean, var, lower, upper))
    if np.any(~(var > 0)):
        raise ValueError("variance must be positive")
    if np.any(~(lower < upper)):
        raise ValueError("truncation requires lower < upper")

    sd = np.sqrt(var)
    a = (lower - mean) / sd
    b = (upper - mean) / sd
    # mirror intervals on the right of the mode into the left tail
    flip = a > 0
    a, b = np.where(flip, -b, a), np.where(flip, -a, b)
    # now a < b and the interval has points <= 0 (or lies wholly left of zero)
    z = np.empty_like(a)
    tail = b < -TAIL_CUTOFF
    body = ~tail
    if np.any(body):
        pa, pb = ndtr(a[body]), ndtr(b[body])
        u = rng.random(int(body.sum()))
        z[body] = ndtri(pa + u * (pb - pa))
    if np.any(tail):
        # reflect once more so the tail sampler sees (a', b') with a' > cutoff
        z[tail] = -_exp_tail(-b[tail], -a[tail], rng)
    z = np.where(flip, -z, z)
    x = mean + sd * z
    # guard against rounding onto a bound
    x = np.clip(x, np.nextafter(lower, np.inf), np.nextafter(upper, -np.inf))
    return float(x[0]) if scalar else x


def _check_spd(mat, name="matrix"):
    mat = np.asarray(mat, dtype=float)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ValueError(f"{name} must be square")
    scale = max(np.abs(mat).max(), 1.0)
    if np.abs(mat - mat.T).max() > 1e-12 * scale:
        raise ValueError(f"{name} must be symmetric")
    try:
        return np.linalg.cholesky(mat)
    except np.linalg.LinAlgError as err:
        raise ValueError(f"{name} is not positive definite") from err


def sample_inverse_wishart(df, scale, rng):
    """Draw ``Sigma ~ Inv-Wishart(df, scale)`` (mean ``scale / (df - p - 1)``).

    Bartlett decomposition of a Wishart draw with scale ``scale^{-1}``,
    inverted in factored form: if ``scale = C C^T`` and ``A`` is the Bartlett
    factor then ``Sigma = (C A^{-T})(C A^{-T})^T``.
    """
    chol = _check_spd(scale, "scale")
    p = chol.shape[0]
    if not df > p - 1:
        raise ValueError(f"df must exceed dim - 1 (got df={df}, dim={p})")
    a = np.zeros((p, p))
    a[np.diag_indices(p)] = np.sqrt(rng.chisquare(df - np.arange(p)))
    low = np.tril_indices(p, -1)
    a[low] = rng.standard_normal(len(low[0]))
    a_inv = np.linalg.solve(a, np.eye(p)) if p > 1 else 1.0 / a
    f = chol @ a_inv.T
    out = f @ f.T
    return 0.5 * (out + out.T)


def sample_gaussian_precision(precision, linear, rng):
    """Draw ``N(P^{-1} h, P^{-1})`` given precision ``P`` and linear term ``h``."""
    chol = np.linalg.cholesky(precision)
    mean = np.linalg.solve(chol.T, np.linalg.solve(chol, linear))
    return mean + np.linalg.solve(chol.T, rng.standard_normal(len(linear)))


def log_inverse_wishart_pdf(sigma, df, scale):
    """Log density of ``Inv-Wishart(df, scale)`` at ``sigma``."""
    p = sigma.shape[0]
    _, logdet_scale = np.linalg.slogdet(scale)
    chol = np.linalg.cholesky(sigma)
    logdet_sigma = 2.0 * np.log(np.diag(chol)).sum()
    sigma_inv = np.linalg.inv(sigma)
    multigamma = 0.25 * p * (p - 1) * math.log(math.pi) + gammaln(
        0.5 * (df - np.arange(p))
    ).sum()
    return (
        0.5 * df * logdet_scale
        - 0.5 * df * p * math.log(2.0)
        - multigamma
        - 0.5 * (df + p + 1) * logdet_sigma
        - 0.5 * np.sum(scale * sigma_inv)
    )


# ₂F₁ evaluation ---------------------------------------------------------------

SERIES_REL_TOL = 1e-15
SERIES_Z_MAX = 0.95


def _series_2f1(a, b, c, z, max_terms):
    total = 1.0
    term = 1.0
    for k in range(max_terms):
        term *= (a + k) * (b + k) / ((c + k) * (k + 1.0)) * z
        total += term
        if abs(term) < SERIES_REL_TOL * abs(total):
            return total
        if term == 0.0:
            return total
    raise ArithmeticError(
        f"2F1 series did not converge in {max_terms} terms (a={a}, b={b}, c={c}, z={z})"
    )


def _euler_2f1(a, b, c, z):
    # 2F1 = G(c) / (G(b) G(c-b)) * int_0^1 t^{b-1} (1-t)^{c-b-1} (1-zt)^{-a} dt
    lognorm = gammaln(c) - gammaln(b) - gammaln(c - b)

    def integrand(t):
        return math.exp(
            lognorm + (b - 1) * math.log(t) + (c - b - 1) * math.log1p(-t) - a * math.log1p(-z * t)
        )

    val, err = integrate.quad(integrand, 0.0, 1.0, epsabs=0.0, epsrel=1e-12, limit=400)
    return val


def gauss_2f1(a: float, b: float, c: float, z: float) -> float:
    """Gauss hypergeometric function ``2F1(a, b; c; z)`` for ``0 <= z < 1``.

    Direct power series with term-ratio stopping. Above ``z = 0.95`` the
    Euler integral is used when ``c > b > 0`` (or ``c > a > 0``); otherwise
    the series is continued with a larger term budget.
    """
    if c <= 0 and float(c).is_integer():
        raise ValueError("c must not be a non-positive integer")
    if not 0.0 <= z < 1.0:
        raise ValueError(f"gauss_2f1 requires 0 <= z < 1 (got z={z})")
    if z == 0.0:
        return 1.0
    if z <= SERIES_Z_MAX:
        return _series_2f1(a, b, c, z, 20000)
    if c > b > 0:
        return _euler_2f1(a, b, c, z)
    if c > a > 0:
        return _euler_2f1(b, a, c, z)
    return _series_2f1(a, b, c, z, 2_000_000)
