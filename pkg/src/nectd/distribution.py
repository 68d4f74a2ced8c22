"""
The NECTD: a Normal scale mixture whose coordinate blocks carry their own
chi-square mixing weights.

A draw is ``X = mu + Q^{-1/2} L Z`` where ``L`` is the lower Cholesky factor
of ``sigma``, ``Z`` is standard Normal and ``Q`` is diagonal with the weight
``q_j ~ chi^2_{nu_j} / nu_j`` repeated over the coordinates of block ``j``.
"""

from dataclasses import dataclass, field
import math

import numpy as np
from scipy import integrate
from scipy.special import gammaln

from .kernels import _check_spd, gauss_2f1


class MomentDoesNotExist(ValueError):
    """Requested moment is infinite for the given degrees of freedom."""


class QuadratureError(ArithmeticError):
    """Numerical integration failed to reach the requested accuracy."""


@dataclass(frozen=True)
class BlockSpec:
    """Partition of ``p`` coordinates into consecutive blocks."""

    sizes: tuple

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.sizes)
        if len(sizes) == 0 or any(s < 1 for s in sizes):
            raise ValueError("block sizes must be a non-empty list of positive integers")
        object.__setattr__(self, "sizes", sizes)

    @classmethod
    def singletons(cls, p: int) -> "BlockSpec":
        return cls((1,) * p)

    @property
    def p(self) -> int:
        return sum(self.sizes)

    @property
    def s(self) -> int:
        return len(self.sizes)

    @property
    def index(self) -> np.ndarray:
        """Block id of every coordinate, length ``p``."""
        return np.repeat(np.arange(self.s), self.sizes)

    def slices(self):
        start = 0
        out = []
        for size in self.sizes:
            out.append(slice(start, start + size))
            start += size
        return out

    def expand(self, q):
        """Repeat per-block weights ``(..., s)`` over coordinates ``(..., p)``."""
        return np.repeat(np.asarray(q, dtype=float), self.sizes, axis=-1)


@dataclass(frozen=True)
class NectdParams:
    mu: np.ndarray
    sigma: np.ndarray
    blocks: BlockSpec
    nu: np.ndarray
    chol: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        sigma = np.atleast_2d(np.asarray(self.sigma, dtype=float))
        nu = np.atleast_1d(np.asarray(self.nu, dtype=float))
        if mu.shape != (self.blocks.p,):
            raise ValueError(f"mu has length {mu.size}, blocks cover {self.blocks.p}")
        if sigma.shape != (self.blocks.p, self.blocks.p):
            raise ValueError("sigma shape does not match the block structure")
        if nu.shape != (self.blocks.s,) or np.any(~(nu > 0)):
            raise ValueError("nu needs one positive value per block")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "nu", nu)
        object.__setattr__(self, "chol", _check_spd(sigma, "sigma"))

    @property
    def p(self) -> int:
        return self.blocks.p


def sample_nectd(params: NectdParams, n: int, rng, return_q: bool = False):
    """Draw ``n`` rows from the NECTD.

    Returns an ``(n, p)`` array, and the ``(n, s)`` mixing weights when
    ``return_q`` is set. Weights are drawn before the Normals.
    """
    q = rng.gamma(params.nu / 2.0, 2.0 / params.nu, size=(n, params.blocks.s))
    z = rng.standard_normal((n, params.p))
    x = params.mu + (z @ params.chol.T) / np.sqrt(params.blocks.expand(q))
    return (x, q) if return_q else x


def _normal_moment(n: int) -> int:
    # E Z^n for standard Normal Z
    if n % 2:
        return 0
    out = 1
    for k in range(n - 1, 0, -2):
        out *= k
    return out


def product_moment(nu1: float, nu2: float, theta: float, r1: int, r2: int) -> float:
    """``E(X1^r1 X2^r2)`` for the standard bivariate NECTD with singleton blocks.

    The scale matrix has unit diagonal and off-diagonal ``sin(theta)``, so
    ``X2 = (sin(theta) Z1 + cos(theta) Z2) / sqrt(q2)``.
    """
    if r1 < 0 or r2 < 0:
        raise ValueError("moment orders must be non-negative")
    if not (nu1 > r1 and nu2 > r2):
        raise MomentDoesNotExist(f"need nu1 > r1 and nu2 > r2 (got {nu1}, {nu2}, {r1}, {r2})")
    log_pref = (
        0.5 * r1 * math.log(nu1 / 2.0)
        + 0.5 * r2 * math.log(nu2 / 2.0)
        + gammaln((nu1 - r1) / 2.0)
        + gammaln((nu2 - r2) / 2.0)
        - gammaln(nu1 / 2.0)
        - gammaln(nu2 / 2.0)
    )
    s, c = math.sin(theta), math.cos(theta)
    total = 0.0
    for i in range(r2 + 1):
        total += (
            math.comb(r2, i)
            * _normal_moment(r1 + i)
            * _normal_moment(r2 - i)
            * s**i
            * c ** (r2 - i)
        )
    return math.exp(log_pref) * total


def _check_theta(theta):
    c = math.cos(theta)
    if not abs(theta) < math.pi / 2 or c <= 0.0:
        raise ValueError("degenerate correlation: need |theta| < pi/2")
    return c


def hypergeometric_argument(x1, x2, theta, nu1, nu2):
    """Pieces of the closed-form density: ``(alpha1, alpha2, gamma, z)``."""
    c = math.cos(theta)
    c2 = c * c
    a1 = 1.0 + x1 * x1 / (nu1 * c2)
    a2 = 1.0 + x2 * x2 / (nu2 * c2)
    g = 2.0 * x1 * x2 * math.sin(theta) / (math.sqrt(nu1 * nu2) * c2)
    z = g * g / (4.0 * a1 * a2)
    return a1, a2, g, z


QUADRATURE_SWITCH = 0.95


def _closed_form(x1, x2, theta, nu1, nu2):
    """Closed-form density, or ``None`` when the argument is too close to one.

    With a non-negative cross term the even and odd hypergeometric terms are
    both non-negative and are summed. With a negative cross term they cancel,
    so their combination is evaluated through the quadratic transformation
    to a single series in ``(1 - sqrt(z)) / 2``, which has positive terms.
    """
    c = _check_theta(theta)
    if not (nu1 > 0 and nu2 > 0):
        raise ValueError("degrees of freedom must be positive")
    a1, a2, g, z = hypergeometric_argument(x1, x2, theta, nu1, nu2)
    if not 0.0 <= z < 1.0:
        raise ArithmeticError(f"hypergeometric argument {z} outside [0, 1)")
    if z >= QUADRATURE_SWITCH:
        return None
    h1, h2 = 0.5 * (nu1 + 1.0), 0.5 * (nu2 + 1.0)
    log_c = -(
        math.log(c) + math.log(math.pi) + 0.5 * math.log(nu1 * nu2)
        + gammaln(0.5 * nu1) + gammaln(0.5 * nu2)
    ) - h1 * math.log(a1) - h2 * math.log(a2)
    if g < 0.0:
        log_k = (
            0.5 * math.log(math.pi) + gammaln(2.0 * h1) + gammaln(2.0 * h2)
            - gammaln(h1 + h2 + 0.5) - (2.0 * (h1 + h2) - 2.0) * math.log(2.0)
        )
        w = 0.5 * (1.0 - math.sqrt(z))
        return math.exp(log_c + log_k) * gauss_2f1(2.0 * h1, 2.0 * h2, h1 + h2 + 0.5, w)
    even = math.exp(log_c + gammaln(h1) + gammaln(h2)) * gauss_2f1(h1, h2, 0.5, z)
    odd = 0.0
    if g > 0.0:
        odd = 2.0 * math.sqrt(z) * math.exp(log_c + gammaln(h1 + 0.5) + gammaln(h2 + 0.5)) * gauss_2f1(
            h1 + 0.5, h2 + 0.5, 1.5, z)
    return even + odd


def density_route(x1, x2, theta, nu1, nu2) -> str:
    """Which evaluation path :func:`bivariate_density` takes: ``"closed"`` or ``"quadrature"``."""
    _check_theta(theta)
    z = hypergeometric_argument(x1, x2, theta, nu1, nu2)[3]
    return "quadrature" if z >= QUADRATURE_SWITCH else "closed"


def bivariate_density(x1: float, x2: float, theta: float, nu1: float, nu2: float) -> float:
    """Closed-form density of the standard bivariate NECTD.

    Uses the hypergeometric closed form; once the hypergeometric argument
    reaches ``QUADRATURE_SWITCH`` the mixture integral is used instead.
    """
    value = _closed_form(x1, x2, theta, nu1, nu2)
    if value is None:
        return density_by_quadrature(x1, x2, theta, nu1, nu2)
    return value


def _log_weight_density(t, nu):
    # density of t = log q for q ~ Gamma(nu/2, rate nu/2)
    h = 0.5 * nu
    return h * math.log(h) - gammaln(h) + h * t - h * math.exp(t)


def _inner_mode(nu, quad_coef, cross):
    """Mode and curvature in ``t = log q`` of ``q^{(nu+1)/2} exp(-quad_coef q + cross sqrt(q))``."""
    # stationarity in s = sqrt(q): 2 A s^2 - B s - (nu + 1) = 0
    a = quad_coef
    root = math.sqrt(cross * cross + 8.0 * a * (nu + 1.0))
    # pick the root form without cancellation
    s = (cross + root) / (4.0 * a) if cross >= 0 else 2.0 * (nu + 1.0) / (root - cross)
    t = 2.0 * math.log(s)
    curv = a * s * s - 0.25 * cross * s
    return t, 1.0 / math.sqrt(max(curv, 1e-12))


def _window(nu, mode, width):
    # left tail decays like exp((nu + 1) t / 2), right tail doubly exponentially
    return mode - 80.0 / (0.5 * (nu + 1.0)) - 10.0 * width, mode + 10.0 * width + 4.0


def density_by_quadrature(
    x1, x2, theta, nu1, nu2, shared: bool = False, epsabs: float = 1e-8
):
    """Bivariate NECTD density by integrating out the mixing weights.

    Integrates the conditional Normal density over ``log q1`` and ``log q2``.
    Integration windows are centred on the mode of the integrand. With
    ``shared`` the two weights are tied (``nu1`` is used), which gives the
    classical bivariate t density.
    """
    c = _check_theta(theta)
    s = math.sin(theta)
    det = c * c
    log_norm = -math.log(2.0 * math.pi) - 0.5 * math.log(det)
    a1 = 0.5 * (nu1 + x1 * x1 / det)
    a2 = 0.5 * (nu2 + x2 * x2 / det)
    b = s * x1 * x2 / det
    h1, h2 = 0.5 * nu1, 0.5 * nu2
    const = log_norm + h1 * math.log(h1) - gammaln(h1) + h2 * math.log(h2) - gammaln(h2)

    def log_integrand(t1, t2):
        return (
            const + 0.5 * (nu1 + 1.0) * t1 + 0.5 * (nu2 + 1.0) * t2
            - a1 * math.exp(t1) - a2 * math.exp(t2) + b * math.exp(0.5 * (t1 + t2))
        )

    if shared:
        # tied weight: q^{nu/2} exp(-(nu/2 + quad_form/2) q) in t = log q
        rate = a1 + a2 - h2 - b
        mode = math.log((h1 + 1.0) / rate)
        lo, hi = _window(nu1, mode, 1.0 / math.sqrt(h1 + 1.0))

        def log_shared(t):
            return log_norm + h1 * math.log(h1) - gammaln(h1) + (h1 + 1.0) * t - rate * math.exp(t)

        peak = log_shared(mode)
        val, err = integrate.quad(
            lambda t: math.exp(log_shared(t) - peak),
            lo, hi, points=[mode], epsabs=0.0, epsrel=1e-11, limit=500,
        )
        val, err = val * math.exp(peak), err * math.exp(peak)
    else:
        # joint mode by coordinate ascent; exact for each coordinate
        t1 = t2 = 0.0
        for _ in range(200):
            t1_new, _w = _inner_mode(nu1, a1, b * math.exp(0.5 * t2))
            t2_new, _w = _inner_mode(nu2, a2, b * math.exp(0.5 * t1_new))
            done = abs(t1_new - t1) + abs(t2_new - t2) < 1e-12
            t1, t2 = t1_new, t2_new
            if done:
                break
        peak = log_integrand(t1, t2)
        _m, w1 = _inner_mode(nu1, a1, b * math.exp(0.5 * t2))
        lo1, hi1 = _window(nu1, t1, 3.0 * w1)

        def inner(u1):
            m2, w2 = _inner_mode(nu2, a2, b * math.exp(0.5 * u1))
            lo2, hi2 = _window(nu2, m2, w2)
            v, _ = integrate.quad(
                lambda u2: math.exp(log_integrand(u1, u2) - peak),
                lo2, hi2, points=[m2], epsabs=0.0, epsrel=1e-12, limit=500,
            )
            return v

        val, err = integrate.quad(inner, lo1, hi1, points=[t1], epsabs=0.0, epsrel=1e-10, limit=500)
        val, err = val * math.exp(peak), err * math.exp(peak)
    if not np.isfinite(val) or val <= 0.0 or err > max(epsabs, 1e-8 * val):
        raise QuadratureError(
            f"mixture integral did not converge at x=({x1}, {x2}), theta={theta}, "
            f"nu=({nu1}, {nu2}): value {val}, error estimate {err}"
        )
    return val


def classical_bivariate_t_density(x1, x2, theta, nu):
    """Classical bivariate t density with unit scales and correlation ``sin(theta)``."""
    rho = math.sin(theta)
    det = 1.0 - rho * rho
    quad = (x1 * x1 - 2 * rho * x1 * x2 + x2 * x2) / det
    return math.exp(
        gammaln(0.5 * (nu + 2)) - gammaln(0.5 * nu) - math.log(nu * math.pi) - 0.5 * math.log(det)
        - 0.5 * (nu + 2) * math.log1p(quad / nu)
    )


def covariance_pair(nu: float, rho: float):
    """Cross-covariances of the two equal-``nu`` t constructions.

    Returns ``(nectd_cov, mtd_cov)``: independent weights give
    ``rho * E(q^{-1/2})^2``, a shared weight gives ``rho * E(1/q)``.
    """
    if not nu > 2:
        raise MomentDoesNotExist("covariance needs nu > 2")
    if not -1 < rho < 1:
        raise ValueError("rho must lie in (-1, 1)")
    log_e_inv_sqrt = 0.5 * math.log(nu / 2.0) + gammaln((nu - 1) / 2.0) - gammaln(nu / 2.0)
    nectd_cov = rho * math.exp(2.0 * log_e_inv_sqrt)
    mtd_cov = rho * nu / (nu - 2.0)
    return nectd_cov, mtd_cov

