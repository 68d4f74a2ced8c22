"""
Gibbs sampler for the multivariate binary regression with a NECTD latent
error (generalised multivariate Robit).

Observation ``i`` has ``p`` binary outcomes ``y_ij = 1(y*_ij > 0)`` with
``y*_i = x_i beta + Q_i^{-1/2} eps_i`` and ``eps_i ~ N(0, Omega)``, where
``Omega`` has unit diagonal. Variants: ``nectd`` (one weight per block),
``shared-t`` (one weight per row) and ``probit``/``normal`` (no weights).
"""

from dataclasses import dataclass, field
import warnings

import numpy as np

from .chains import ChainStore, McmcConfig, run_chains
from .distribution import BlockSpec
from .expansion import draw_latent_scale, draw_restricted_scale
from .kernels import sample_gaussian_precision, sample_inverse_wishart, sample_truncated_normal
from .mis import (
    AcceptanceCounter,
    block_terms,
    draw_shared_weight,
    mis_step_nu,
    mis_sweep_blocks,
    nu_shift_step,
    shift_step_size,
)
from .priors import RegressionPrior, check_variant, sample_nu_prior


@dataclass
class RobitData:
    """Binary outcomes ``y`` of shape ``(n, p)`` and designs ``x`` of shape ``(n, p, K)``."""

    y: np.ndarray
    x: np.ndarray

    def __post_init__(self):
        self.y = np.atleast_2d(np.asarray(self.y)).astype(int)
        self.x = np.ascontiguousarray(self.x, dtype=float)
        if self.x.ndim == 2:
            self.x = self.x[:, None, :]
        if self.x.shape[:2] != self.y.shape:
            raise ValueError("x must have shape (n, p, K) matching y of shape (n, p)")
        if not np.all(np.isin(self.y, (0, 1))):
            raise ValueError("outcomes must be binary")
        if not np.all(np.isfinite(self.x)):
            bad = int(np.flatnonzero(~np.all(np.isfinite(self.x), axis=(1, 2)))[0])
            raise ValueError(f"non-finite covariate in row {bad}")

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.y.shape[1]

    @property
    def k(self) -> int:
        return self.x.shape[2]


@dataclass
class RobitState:
    beta: np.ndarray
    omega: np.ndarray
    nu: np.ndarray
    ystar: np.ndarray
    q: np.ndarray
    counters: dict = field(default_factory=dict)


def _coordinate_weights(state_q, blocks: BlockSpec):
    return blocks.expand(state_q)


def impute_latent_y(data: RobitData, state: RobitState, blocks: BlockSpec, rng):
    """Coordinate-wise truncated-Normal draws of the latent outcomes.

    Coordinates are visited in order; each conditions on the current values
    of the others. Bounds are ``(0, inf)`` where ``y = 1`` and ``(-inf, 0)``
    otherwise.
    """
    p = data.p
    mean = data.x @ state.beta
    qc = _coordinate_weights(state.q, blocks)
    sq = np.sqrt(qc)
    ystar = state.ystar.copy()
    lower = np.where(data.y == 1, 0.0, -np.inf)
    upper = np.where(data.y == 1, np.inf, 0.0)
    for j in range(p):
        if p > 1:
            rest = np.r_[0:j, j + 1:p]
            coef = np.linalg.solve(state.omega[np.ix_(rest, rest)], state.omega[rest, j])
            cvar = state.omega[j, j] - state.omega[j, rest] @ coef
            scaled = sq[:, rest] * (ystar[:, rest] - mean[:, rest])
            cmean = mean[:, j] + (scaled @ coef) / sq[:, j]
        else:
            cvar = state.omega[0, 0]
            cmean = mean[:, 0]
        ystar[:, j] = sample_truncated_normal(cmean, cvar / qc[:, j], lower[:, j], upper[:, j], rng)
    return ystar


def robit_residuals(data: RobitData, state: RobitState):
    return state.ystar - data.x @ state.beta


def impute_q_robit(data: RobitData, state: RobitState, blocks: BlockSpec, rng, variant="nectd"):
    """Update the mixing weights (shape ``(n, s)``; one column for shared-t)."""
    variant = check_variant(variant)
    if variant == "normal":
        return state.q
    resid = robit_residuals(data, state)
    prec = np.linalg.inv(state.omega)
    if variant == "shared-t":
        q = draw_shared_weight(resid, prec, state.nu[0], rng)
        return np.repeat(q[:, None], blocks.s, axis=1)
    ctrs = [state.counters.get(f"q.{j + 1}") for j in range(blocks.s)] if state.counters else None
    return mis_sweep_blocks(resid, prec, state.q, state.nu, blocks.sizes, rng, ctrs)


def draw_beta_robit(data: RobitData, state: RobitState, blocks: BlockSpec, prior: RegressionPrior, rng):
    """Conjugate Normal draw of the shared coefficient vector."""
    K = data.k
    prec0 = prior.coef_precision(K)
    prec = prec0.copy()
    lin = prec0 @ prior.coef_mean_vector(K)
    if data.n:
        P = np.linalg.inv(state.omega)
        sq = np.sqrt(_coordinate_weights(state.q, blocks))
        a = (data.x * sq[:, :, None]).reshape(-1, K)
        pa = (P @ (data.x * sq[:, :, None])).reshape(-1, K)
        prec += a.T @ pa
        lin += pa.T @ (sq * state.ystar).ravel()
    return sample_gaussian_precision(prec, lin, rng)


def rescale_robit(data: RobitData, state: RobitState, blocks: BlockSpec, prior: RegressionPrior, rng,
                  counter=None):
    """Jointly rescale ``(beta, y*)``; returns the new pair."""
    e = robit_residuals(data, state) * np.sqrt(_coordinate_weights(state.q, blocks))
    P = np.linalg.inv(state.omega)
    var, mean = prior.coef_variance, prior.coef_mean
    quad = float(np.einsum("ik,kl,il->", e, P, e)) + float(state.beta @ state.beta) / var
    cross = -mean * float(state.beta.sum()) / var
    c = draw_latent_scale(quad, cross, data.n * data.p + data.k, rng, counter)
    return c * state.beta, c * state.ystar


def shift_nu_robit(data: RobitData, state: RobitState, blocks: BlockSpec, prior: RegressionPrior, rng,
                   variant="nectd"):
    """Non-centred updates of the degrees of freedom with their weights."""
    resid = robit_residuals(data, state)
    P = np.linalg.inv(state.omega)
    args = (prior.theta0, prior.phi0, rng, shift_step_size(data.n))
    ctr = state.counters or {}
    if variant == "shared-t":
        quad = np.einsum("ik,kl,il->i", resid, P, resid)
        nu, q = nu_shift_step(state.nu[0], state.q[:, 0], quad, 0.0, data.p, *args, ctr.get("nu.1.shift"))
        state.nu[:] = nu
        state.q = np.repeat(q[:, None], blocks.s, axis=1)
        return state
    q = state.q.copy()
    for j, size in enumerate(blocks.sizes):
        u, c = block_terms(resid, P, q, blocks.sizes, j)
        state.nu[j], q[:, j] = nu_shift_step(state.nu[j], q[:, j], u, c, size, *args,
                                             ctr.get(f"nu.{j + 1}.shift"))
    state.q = q
    return state


def draw_omega_px_robit(data: RobitData, state: RobitState, blocks: BlockSpec, nu0: float, rng,
                        literal=False, counter=None):
    """Parameter-expanded update of the correlation matrix."""
    resid = robit_residuals(data, state) * np.sqrt(_coordinate_weights(state.q, blocks))
    cross = resid.T @ resid
    mask = np.ones(data.p, dtype=bool)
    return draw_restricted_scale(cross, data.n, state.omega, nu0, mask, rng, literal, counter)


def check_separation(data: RobitData):
    """Warn when some outcome coordinate is constant across rows."""
    for j in range(data.p):
        col = data.y[:, j]
        if col.size and (col.min() == col.max()):
            warnings.warn(f"outcome {j + 1} has no variation; its coefficients are not identified",
                          RuntimeWarning, stacklevel=2)


class RobitSampler:
    def __init__(self, data: RobitData, blocks: BlockSpec = None, prior: RegressionPrior = RegressionPrior(),
                 variant="nectd", fix_nu=None, literal_expansion=False):
        self.data = data
        self.blocks = blocks or BlockSpec.singletons(data.p)
        if self.blocks.p != data.p:
            raise ValueError("block structure does not match the number of outcomes")
        self.prior = prior
        self.variant = check_variant(variant)
        self.nu0 = prior.iw_df(data.p + 1)
        self.fix_nu = None if fix_nu is None else np.atleast_1d(np.asarray(fix_nu, dtype=float))
        self.literal_expansion = literal_expansion
        p = data.p
        names = [f"beta.{k + 1}" for k in range(data.k)]
        names += [f"omega.{i + 1}.{j + 1}" for i in range(p) for j in range(i + 1, p)]
        if self.variant == "nectd":
            names += [f"nu.{j + 1}" for j in range(self.blocks.s)]
        elif self.variant == "shared-t":
            names += ["nu"]
        self.param_names = names

    def _n_nu(self):
        return {"nectd": self.blocks.s, "shared-t": 1, "normal": 0}[self.variant]

    def _counters(self):
        ctr = {"omega": AcceptanceCounter(), "scale": AcceptanceCounter()}
        if self.variant == "nectd":
            ctr.update({f"q.{j + 1}": AcceptanceCounter() for j in range(self.blocks.s)})
        for j in range(self._n_nu()):
            ctr[f"nu.{j + 1}"] = AcceptanceCounter()
            ctr[f"nu.{j + 1}.shift"] = AcceptanceCounter()
        return ctr

    def _initial_nu(self):
        s = self.blocks.s
        if self.fix_nu is not None:
            return np.resize(self.fix_nu, s).astype(float)
        return np.full(s, self.prior.theta0 / self.prior.phi0)

    def initial_state(self, rng) -> RobitState:
        d = self.data
        xs = d.x.reshape(-1, d.k)
        beta, *_ = np.linalg.lstsq(xs, (2.0 * d.y - 1.0).ravel(), rcond=None)
        ystar = np.where(d.y == 1, 1.0, -1.0)
        return RobitState(beta, np.eye(d.p), self._initial_nu(), ystar, np.ones((d.n, self.blocks.s)),
                          self._counters())

    def sweep(self, state: RobitState, rng):
        d, bl = self.data, self.blocks
        state.ystar = impute_latent_y(d, state, bl, rng)
        if self.variant != "normal":
            state.q = impute_q_robit(d, state, bl, rng, self.variant)
        state.beta = draw_beta_robit(d, state, bl, self.prior, rng)
        state.beta, state.ystar = rescale_robit(d, state, bl, self.prior, rng, state.counters["scale"])
        state.omega = draw_omega_px_robit(d, state, bl, self.nu0, rng, self.literal_expansion,
                                          state.counters["omega"])
        if self.fix_nu is None:
            if self.variant == "nectd":
                for j in range(bl.s):
                    state.nu[j] = mis_step_nu(state.nu[j], state.q[:, j], self.prior.theta0,
                                              self.prior.phi0, rng, state.counters[f"nu.{j + 1}"])
            elif self.variant == "shared-t":
                state.nu[:] = mis_step_nu(state.nu[0], state.q[:, 0], self.prior.theta0, self.prior.phi0,
                                          rng, state.counters["nu.1"])
            if self.variant != "normal":
                shift_nu_robit(d, state, bl, self.prior, rng, self.variant)
        return state

    def record(self, state: RobitState):
        iu = np.triu_indices(self.data.p, 1)
        return np.concatenate([state.beta, state.omega[iu], state.nu[: self._n_nu()]])

    # joint-distribution checks
    def sample_prior(self, rng) -> RobitState:
        pr = self.prior
        p = self.data.p
        beta = pr.coef_mean + np.sqrt(pr.coef_variance) * rng.standard_normal(self.data.k)
        sigma = sample_inverse_wishart(self.nu0, np.eye(p), rng)
        sd = np.sqrt(np.diag(sigma))
        omega = sigma / np.outer(sd, sd)
        np.fill_diagonal(omega, 1.0)
        state = self.initial_state(rng)
        state.beta, state.omega = beta, omega
        if self.fix_nu is None and self.variant != "normal":
            nu = sample_nu_prior(pr.theta0, pr.phi0, rng, size=self._n_nu())
            state.nu = np.resize(nu, self.blocks.s)
        return state

    def simulate_data(self, state: RobitState, rng):
        n, s = self.data.n, self.blocks.s
        if self.variant == "nectd":
            q = rng.gamma(state.nu / 2.0, 2.0 / state.nu, size=(n, s))
        elif self.variant == "shared-t":
            q = np.repeat(rng.gamma(state.nu[0] / 2.0, 2.0 / state.nu[0], size=(n, 1)), s, axis=1)
        else:
            q = np.ones((n, s))
        chol = np.linalg.cholesky(state.omega)
        e = (rng.standard_normal((n, self.data.p)) @ chol.T) / np.sqrt(self.blocks.expand(q))
        ystar = self.data.x @ state.beta + e
        self.data = RobitData((ystar > 0).astype(int), self.data.x)
        state.q, state.ystar = q, ystar
        return state


def fit_robit(data: RobitData, blocks: BlockSpec = None, prior: RegressionPrior = RegressionPrior(),
              cfg: McmcConfig = McmcConfig(), variant="nectd", fix_nu=None, literal_expansion=False,
              workers=1) -> ChainStore:
    """Fit the multivariate binary model; see :class:`RobitSampler`."""
    check_separation(data)
    sampler = RobitSampler(data, blocks, prior, variant, fix_nu, literal_expansion)
    return run_chains(sampler, cfg, workers, meta={"model": "robit", "variant": sampler.variant})
