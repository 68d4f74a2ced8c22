"""
Metropolized independence sampling with Gamma proposals matched to the mode
and curvature of the target.

Two targets occur in every sampler of the package:

* a mixing weight ``q`` with log density
  ``-(u/2) q - c sqrt(q) + kappa log q`` where ``kappa = (nu + d)/2 - 1``
  and ``d`` is the block size;
* a degrees-of-freedom parameter ``nu`` with log density
  ``n [(nu/2) log(nu/2) - log Gamma(nu/2)] + (theta0 - 1) log nu - eta nu``.

Vectorised variants of the ``q`` step update many independent weights in one
call; they are what the samplers use. A non-centred Metropolis move that
shifts ``nu`` together with its weights complements the ``nu`` step, which
mixes slowly when the weights pin ``nu`` down.
"""

from dataclasses import dataclass
import math

import numpy as np
from scipy import optimize
from scipy.special import gammaln, polygamma, psi


NU_LOWER = 1e-4
NU_UPPER = 500.0
LOW_ACCEPTANCE = 0.05


class ProposalError(ArithmeticError):
    """Proposal parameters could not be built (non-finite mode or curvature)."""


class ModeAtBoundaryError(ProposalError):
    """The derivative of the target keeps its sign over the whole bracket."""


@dataclass(frozen=True)
class GammaProposal:
    alpha: float
    beta: float

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise ProposalError(f"invalid Gamma proposal ({self.alpha}, {self.beta})")

    def logpdf(self, x):
        """Log density up to the normalising constant."""
        return (self.alpha - 1.0) * np.log(x) - self.beta * x

    def sample(self, rng, size=None):
        return rng.gamma(self.alpha, 1.0 / self.beta, size=size)


@dataclass(frozen=True)
class QTarget:
    u: float
    c: float
    nu: float
    d: int = 1

    def __post_init__(self):
        if not self.u > 0 or self.d < 1:
            raise ValueError("QTarget needs u > 0 and d >= 1")

    @property
    def kappa(self) -> float:
        return 0.5 * (self.nu + self.d) - 1.0

    def logpdf(self, q):
        q = np.asarray(q, dtype=float)
        return -0.5 * self.u * q - self.c * np.sqrt(q) + self.kappa * np.log(q)

    def dlogpdf(self, q):
        return -0.5 * self.u - 0.5 * self.c / math.sqrt(q) + self.kappa / q

    def d2logpdf(self, q):
        return 0.25 * self.c / q**1.5 - self.kappa / q**2


@dataclass(frozen=True)
class NuTarget:
    n: int
    eta: float
    theta0: float

    @classmethod
    def from_weights(cls, q, theta0: float, phi0: float) -> "NuTarget":
        """Build the target from the current weights of one block."""
        q = np.asarray(q, dtype=float).ravel()
        eta = phi0 + 0.5 * float(np.sum(q - np.log(q)))
        return cls(q.size, eta, theta0)

    def logpdf(self, nu):
        nu = np.asarray(nu, dtype=float)
        h = 0.5 * nu
        return self.n * (h * np.log(h) - gammaln(h)) + (self.theta0 - 1.0) * np.log(nu) - self.eta * nu

    def dlogpdf(self, nu):
        h = 0.5 * nu
        return 0.5 * self.n * (np.log(h) + 1.0 - psi(h)) + (self.theta0 - 1.0) / nu - self.eta

    def d2logpdf(self, nu):
        return (
            0.5 * self.n / nu
            - 0.25 * self.n * polygamma(1, 0.5 * nu)
            - (self.theta0 - 1.0) / nu**2
        )


def _matched_gamma(mode, curvature):
    alpha = 1.0 - curvature * mode * mode
    beta = -curvature * mode
    if not (np.isfinite(alpha) and np.isfinite(beta) and alpha > 0 and beta > 0):
        raise ProposalError(f"mode {mode} and curvature {curvature} give no Gamma match")
    return GammaProposal(float(alpha), float(beta))


def q_mode(u, c, kappa):
    """Mode of the weight target for ``kappa > 0`` (broadcasts)."""
    u, c, kappa = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (u, c, kappa)))
    root = np.sqrt(c * c + 8.0 * u * kappa)
    # sqrt(mode) solves u s^2 + c s - 2 kappa = 0; pick the cancellation-free form
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(c >= 0, 4.0 * kappa / (c + root), (root - c) / (2.0 * u))
    return s * s


def gamma_proposal_arrays(u, c, nu, d=1):
    """Vectorised :func:`gamma_proposal_for_q`; returns ``(alpha, beta)`` arrays.

    Entries whose matched proposal is not a valid Gamma fall back to the
    exponential ``(1, u/2)``.
    """
    u, c, nu, d = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (u, c, nu, d)))
    kappa = 0.5 * (nu + d) - 1.0
    alpha = np.ones_like(u)
    beta = 0.5 * u
    pos = kappa > 0
    if np.any(pos):
        m = q_mode(u[pos], c[pos], kappa[pos])
        curv = 0.25 * c[pos] / m**1.5 - kappa[pos] / (m * m)
        a = 1.0 - curv * m * m
        b = -curv * m
        ok = np.isfinite(a) & np.isfinite(b) & (a > 0) & (b > 0)
        idx = np.flatnonzero(pos)[ok]
        alpha[idx] = a[ok]
        beta[idx] = b[ok]
    return alpha, beta


def gamma_proposal_for_q(t: QTarget) -> GammaProposal:
    """Gamma proposal with the mode and curvature of the weight target.

    Falls to the exponential ``Gamma(1, u/2)`` when ``kappa <= 0``.
    """
    kappa = t.kappa
    if kappa <= 0:
        return GammaProposal(1.0, 0.5 * t.u)
    m = float(q_mode(t.u, t.c, kappa))
    return _matched_gamma(m, t.d2logpdf(m))


def _find_nu_mode(t: NuTarget, lower, upper):
    f_lo, f_hi = t.dlogpdf(lower), t.dlogpdf(upper)
    if not (np.isfinite(f_lo) and np.isfinite(f_hi)) or f_lo * f_hi > 0:
        raise ModeAtBoundaryError(f"no sign change of the nu derivative on [{lower}, {upper}]")
    mode = optimize.brentq(t.dlogpdf, lower, upper, xtol=1e-12, rtol=1e-14)
    # Newton polish, kept only while it stays inside the bracket
    for _ in range(3):
        step = t.dlogpdf(mode) / t.d2logpdf(mode)
        cand = mode - step
        if not lower < cand < upper:
            break
        mode = cand
    return mode


def gamma_proposal_for_nu(t: NuTarget, lower: float = NU_LOWER, upper: float = NU_UPPER) -> GammaProposal:
    """Gamma proposal matched at the mode of the degrees-of-freedom target.

    Raises :class:`ModeAtBoundaryError` when the derivative does not change
    sign on ``[lower, upper]``.
    """
    mode = _find_nu_mode(t, lower, upper)
    return _matched_gamma(mode, t.d2logpdf(mode))


def nu_proposal(t: NuTarget, phi0: float, lower: float = NU_LOWER, upper: float = NU_UPPER) -> GammaProposal:
    """Proposal for ``nu`` with the fallback policy.

    Tries the bracket, then a bracket widened a hundredfold on each side; a
    mode found outside ``[lower, upper]`` is replaced by the nearer bound so
    that the proposal keeps mass where the truncated target lives. If both
    attempts fail the prior shape ``Gamma(theta0, phi0)`` is returned.
    """
    try:
        return gamma_proposal_for_nu(t, lower, upper)
    except ProposalError:
        pass
    try:
        mode = _find_nu_mode(t, lower / 100.0, upper * 100.0)
        mode = min(max(mode, lower), upper)
        return _matched_gamma(mode, t.d2logpdf(mode))
    except (ProposalError, ValueError):
        return GammaProposal(t.theta0, phi0)


@dataclass
class AcceptanceCounter:
    """Running accept/attempt tally for one MIS site."""

    accepted: int = 0
    attempted: int = 0
    nan_rejected: int = 0

    def update(self, accepted, nan=None):
        accepted = np.asarray(accepted)
        self.accepted += int(accepted.sum())
        self.attempted += int(accepted.size)
        if nan is not None:
            self.nan_rejected += int(np.asarray(nan).sum())

    @property
    def rate(self) -> float:
        return self.accepted / self.attempted if self.attempted else float("nan")


def mis_step(current: float, log_target, proposal: GammaProposal, rng, counter: AcceptanceCounter = None) -> float:
    """One independence Metropolis-Hastings step with a Gamma proposal.

    ``log_target`` may be unnormalised. A NaN target value at the proposal
    is a rejection and is tallied in ``counter.nan_rejected``.
    """
    if not current > 0:
        raise ValueError("current state must be positive")
    cand = float(proposal.sample(rng))
    lw_cur = log_target(current) - proposal.logpdf(current)
    lf_cand = log_target(cand)
    log_u = math.log(rng.random())
    nan = bool(np.isnan(lf_cand))
    accept = (not nan) and cand > 0 and log_u < lf_cand - proposal.logpdf(cand) - lw_cur
    if counter is not None:
        counter.update(accept, nan)
    return cand if accept else current


def mis_step_q(current, u, c, nu, d, rng, counter: AcceptanceCounter = None):
    """Vectorised MIS update of independent weights.

    All arguments broadcast to the shape of ``current``. Returns the new
    weights; acceptance is tallied in ``counter``.
    """
    current = np.asarray(current, dtype=float)
    shape = current.shape
    u, c, nu, d = (np.broadcast_to(np.asarray(v, dtype=float), shape) for v in (u, c, nu, d))
    kappa = 0.5 * (nu + d) - 1.0
    alpha, beta = gamma_proposal_arrays(u, c, nu, d)
    cand = rng.gamma(alpha, 1.0 / beta)
    log_u = np.log(rng.random(shape))

    def log_weight(q):
        # target minus proposal, both unnormalised
        return -0.5 * u * q - c * np.sqrt(q) + kappa * np.log(q) - (alpha - 1.0) * np.log(q) + beta * q

    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        diff = log_weight(cand) - log_weight(current)
    nan = np.isnan(diff)
    accept = (~nan) & (cand > 0) & (log_u < diff)
    if counter is not None:
        counter.update(accept, nan)
    return np.where(accept, cand, current)


def mis_step_nu(current: float, weights, theta0: float, phi0: float, rng,
                counter: AcceptanceCounter = None, lower: float = NU_LOWER, upper: float = NU_UPPER) -> float:
    """One MIS update of a degrees-of-freedom parameter given its weights.

    The target is truncated to ``[lower, upper]``; proposals outside are
    rejected.
    """
    t = NuTarget.from_weights(weights, theta0, phi0)
    prop = nu_proposal(t, phi0, lower, upper)

    def log_target(v):
        if not lower <= v <= upper:
            return -math.inf
        return float(t.logpdf(v))

    return mis_step(current, log_target, prop, rng, counter)


def run_mis_chain(log_target, proposal: GammaProposal, n_steps: int, start: float, rng):
    """Run ``n_steps`` of the independence sampler and return the path.

    Candidates and uniforms are drawn up front (the proposal ignores the
    state), so only the accept/reject recursion is sequential. Returns
    ``(path, acceptance_rate)``.
    """
    cand = proposal.sample(rng, size=n_steps)
    log_u = np.log(rng.random(n_steps))
    with np.errstate(invalid="ignore"):
        w_cand = np.asarray(log_target(cand), dtype=float) - proposal.logpdf(cand)
    w_cand = np.where(np.isnan(w_cand), -np.inf, w_cand).tolist()
    log_u = log_u.tolist()
    cand = cand.tolist()
    cur = float(start)
    w_cur = float(log_target(np.array([cur]))[0] - proposal.logpdf(cur))
    path = [0.0] * n_steps
    accepted = 0
    for k in range(n_steps):
        if log_u[k] < w_cand[k] - w_cur:
            cur, w_cur = cand[k], w_cand[k]
            accepted += 1
        path[k] = cur
    return np.asarray(path), accepted / n_steps


def block_terms(resid, prec, q, sizes, j):
    """Per-row likelihood terms of block ``j``'s weight.

    The weight ``w`` of block ``j`` (coordinates ``J``) enters the Normal
    log-likelihood as ``-u w / 2 - c sqrt(w)`` with ``u = e_J' P_JJ e_J``
    and ``c = sum_{k in J, l not in J} e_k P_kl sqrt(q_l) e_l``.
    """
    sizes = tuple(sizes)
    start = sum(sizes[:j])
    sl = slice(start, start + sizes[j])
    index = np.repeat(np.arange(len(sizes)), sizes)
    eb = resid[:, sl]
    u = np.einsum("ik,kl,il->i", eb, prec[sl, sl], eb)
    scaled = resid * np.sqrt(q[:, index])
    scaled[:, sl] = 0.0
    c = np.einsum("ik,kl,il->i", eb, prec[sl, :], scaled)
    return u, c


def mis_sweep_blocks(resid, prec, q, nu, sizes, rng, counters=None):
    """Update the per-block weights of every row by one MIS step each.

    ``resid`` is ``(n, p)``, ``prec`` the ``(p, p)`` inverse scale matrix,
    ``q`` the current ``(n, s)`` weights and ``sizes`` the block sizes.
    Blocks are visited in order; later blocks see updated earlier weights.
    Block ``j``'s target uses ``nu_j + u`` and ``c`` from :func:`block_terms`.
    """
    q = np.array(q, dtype=float, copy=True)
    for j, size in enumerate(sizes):
        u, c = block_terms(resid, prec, q, sizes, j)
        ctr = counters[j] if counters is not None else None
        q[:, j] = mis_step_q(q[:, j], nu[j] + u, c, nu[j], size, rng, ctr)
    return q


# non-centred degrees-of-freedom move -----------------------------------------

SHIFT_SCALE = 10.0


def shift_step_size(n_weights: int) -> float:
    """Random-walk scale on ``log nu``; shrinks with the number of weights."""
    return min(1.0, SHIFT_SCALE / math.sqrt(max(n_weights, 1)))


def _log_weight_location(nu):
    # mean and sd of log w for w ~ chi^2_nu / nu
    h = 0.5 * nu
    return float(psi(h)) - math.log(h), math.sqrt(float(polygamma(1, h)))


def _log_weight_prior(q, nu):
    h = 0.5 * nu
    return h * math.log(h) - gammaln(h) + (h - 1.0) * np.log(q) - h * q


def nu_shift_step(nu, q, u, c, d, theta0, phi0, rng, step, counter: AcceptanceCounter = None,
                  lower: float = NU_LOWER, upper: float = NU_UPPER):
    """Metropolis update of one ``nu`` that carries its weights along.

    Proposes ``log nu' = log nu + step * N(0, 1)`` and moves every weight so
    that ``log w`` keeps its standardised value under the new ``nu``. The
    acceptance ratio carries the exact weight prior, the Jacobian of the map
    and the likelihood terms ``-u w / 2 - c sqrt(w) + (d / 2) log w`` of each
    weight, so the move is exact. Returns ``(nu, q)``.
    """
    q = np.asarray(q, dtype=float)
    a = step * rng.standard_normal()
    log_u = math.log(rng.random())
    nu_new = nu * math.exp(a)
    accept = False
    if lower <= nu_new <= upper:
        loc, scale = _log_weight_location(nu)
        loc_new, scale_new = _log_weight_location(nu_new)
        log_q = np.log(q)
        log_q_new = loc_new + (scale_new / scale) * (log_q - loc)
        q_new = np.exp(log_q_new)
        with np.errstate(over="ignore", invalid="ignore"):
            diff = (
                -0.5 * u * (q_new - q) - c * (np.sqrt(q_new) - np.sqrt(q))
                + (0.5 * d + 1.0) * (log_q_new - log_q)
                + _log_weight_prior(q_new, nu_new) - _log_weight_prior(q, nu)
            )
            ratio = float(np.sum(diff)) + q.size * math.log(scale_new / scale)
        ratio += (theta0 - 1.0) * a - phi0 * (nu_new - nu) + a
        accept = bool(np.isfinite(ratio) and log_u < ratio)
    if counter is not None:
        counter.update(accept)
    return (nu_new, q_new) if accept else (nu, q)


def draw_shared_weight(resid, prec, nu, rng):
    """Conjugate draw of one weight shared by all coordinates of each row:
    ``q ~ chi^2_{nu + p} / (nu + e' P e)``."""
    p = resid.shape[1]
    quad = np.einsum("ik,kl,il->i", resid, prec, resid)
    return rng.gamma(0.5 * (nu + p), 2.0 / (nu + quad))
