"""
Data-augmentation Gibbs sampler for i.i.d. NECTD observations.

Each sweep updates the mixing weights by MIS, then the location and the
scale matrix from their conjugate conditionals, then each block's degrees
of freedom by MIS followed by a non-centred shift of the degrees of freedom
together with the block's weights.
"""

from dataclasses import dataclass, field

import numpy as np

from .chains import ChainStore, McmcConfig, run_chains
from .distribution import BlockSpec, NectdParams, sample_nectd
from .kernels import sample_gaussian_precision, sample_inverse_wishart
from .mis import AcceptanceCounter, block_terms, mis_step_nu, mis_sweep_blocks, nu_shift_step, shift_step_size
from .priors import sample_nu_prior


@dataclass(frozen=True)
class NectdPrior:
    """Priors ``mu ~ N(mu0, sigma0)``, ``Sigma ~ IW(nu0, I)``, ``nu_j ~ Gamma(theta0, phi0)``.

    ``None`` fields take defaults that depend on the dimension: zero mean,
    covariance ``100 I`` and ``nu0 = p + 1``.
    """

    mu0: np.ndarray = None
    sigma0: np.ndarray = None
    nu0: float = None
    theta0: float = 1.0
    phi0: float = 0.1

    def resolved(self, p: int) -> "NectdPrior":
        mu0 = np.zeros(p) if self.mu0 is None else np.asarray(self.mu0, dtype=float)
        sigma0 = 100.0 * np.eye(p) if self.sigma0 is None else np.asarray(self.sigma0, dtype=float)
        nu0 = p + 1.0 if self.nu0 is None else float(self.nu0)
        if mu0.shape != (p,) or sigma0.shape != (p, p):
            raise ValueError("prior mean/covariance do not match the data dimension")
        if not nu0 > p - 1:
            raise ValueError("nu0 must exceed p - 1")
        return NectdPrior(mu0, sigma0, nu0, self.theta0, self.phi0)


@dataclass
class NectdState:
    mu: np.ndarray
    sigma: np.ndarray
    nu: np.ndarray
    q: np.ndarray
    counters: dict = field(default_factory=dict)


def _weights_by_coordinate(q, blocks: BlockSpec):
    return np.sqrt(blocks.expand(q))


def impute_q_nectd(X, params: NectdParams, q, rng, counters=None):
    """One MIS sweep over the weights of every row, block by block.

    Returns a new ``(n, s)`` weight array. ``counters`` is an optional
    per-block list of acceptance tallies.
    """
    prec = np.linalg.inv(params.sigma)
    prec = 0.5 * (prec + prec.T)
    resid = np.asarray(X, dtype=float) - params.mu
    return mis_sweep_blocks(resid, prec, q, params.nu, params.blocks.sizes, rng, counters)


def draw_mu(X, q, sigma, prior: NectdPrior, rng, blocks: BlockSpec = None):
    """Conjugate Normal draw of the location given weights and scale."""
    X = np.asarray(X, dtype=float)
    p = sigma.shape[0]
    prior = prior.resolved(p)
    blocks = blocks or BlockSpec.singletons(p)
    prior_prec = np.linalg.inv(prior.sigma0)
    lin = prior_prec @ prior.mu0
    prec = prior_prec.copy()
    if X.shape[0]:
        s = _weights_by_coordinate(q, blocks)
        sig_inv = np.linalg.inv(sigma)
        prec += sig_inv * (s.T @ s)
        lin += np.sum(s * ((s * X) @ sig_inv), axis=0)
    return sample_gaussian_precision(prec, lin, rng)


def draw_sigma_nectd(X, q, mu, prior: NectdPrior, rng, blocks: BlockSpec = None):
    """Conjugate inverse-Wishart draw of the scale matrix."""
    X = np.asarray(X, dtype=float)
    p = mu.shape[0]
    prior = prior.resolved(p)
    blocks = blocks or BlockSpec.singletons(p)
    scale = np.eye(p)
    if X.shape[0]:
        r = (X - mu) * _weights_by_coordinate(q, blocks)
        scale = scale + r.T @ r
    return sample_inverse_wishart(X.shape[0] + prior.nu0, 0.5 * (scale + scale.T), rng)


def shift_nu_nectd(X, state: NectdState, blocks: BlockSpec, prior: NectdPrior, rng):
    """Non-centred updates of each block's degrees of freedom with its weights."""
    prec = np.linalg.inv(state.sigma)
    prec = 0.5 * (prec + prec.T)
    resid = np.asarray(X, dtype=float) - state.mu
    args = (prior.theta0, prior.phi0, rng, shift_step_size(resid.shape[0]))
    ctr = state.counters or {}
    q = state.q.copy()
    for j, size in enumerate(blocks.sizes):
        u, c = block_terms(resid, prec, q, blocks.sizes, j)
        state.nu[j], q[:, j] = nu_shift_step(state.nu[j], q[:, j], u, c, size, *args,
                                             ctr.get(f"nu.{j + 1}.shift"))
    state.q = q
    return state


class NectdSampler:
    """Gibbs sampler over ``(q, mu, Sigma, nu)``.

    ``fix_q`` pins every weight at one and skips the ``nu`` update, which
    turns the sampler into the Normal-model Gibbs sampler.
    """

    def __init__(self, X, blocks: BlockSpec, prior: NectdPrior = NectdPrior(), fix_q: bool = False):
        X = np.ascontiguousarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != blocks.p:
            raise ValueError("data must be an (n, p) array matching the block structure")
        if not np.all(np.isfinite(X)):
            bad = int(np.flatnonzero(~np.all(np.isfinite(X), axis=1))[0])
            raise ValueError(f"non-finite data in row {bad}")
        self.X = X
        self.blocks = blocks
        self.prior = prior.resolved(blocks.p)
        self.fix_q = fix_q
        p = blocks.p
        self.param_names = (
            [f"mu.{i + 1}" for i in range(p)]
            + [f"sigma.{i + 1}.{j + 1}" for i in range(p) for j in range(i, p)]
            + [f"nu.{j + 1}" for j in range(blocks.s)]
        )

    def initial_state(self, rng) -> NectdState:
        n, p = self.X.shape
        mu = self.X.mean(axis=0)
        sigma = np.atleast_2d(np.cov(self.X, rowvar=False)) + 1e-6 * np.eye(p)
        nu = np.full(self.blocks.s, self.prior.theta0 / self.prior.phi0)
        q = np.ones((n, self.blocks.s))
        counters = {f"q.{j + 1}": AcceptanceCounter() for j in range(self.blocks.s)}
        counters.update({f"nu.{j + 1}": AcceptanceCounter() for j in range(self.blocks.s)})
        counters.update({f"nu.{j + 1}.shift": AcceptanceCounter() for j in range(self.blocks.s)})
        return NectdState(mu, sigma, nu, q, counters)

    def sweep(self, state: NectdState, rng):
        s = self.blocks.s
        if not self.fix_q:
            params = NectdParams(state.mu, state.sigma, self.blocks, state.nu)
            ctrs = [state.counters[f"q.{j + 1}"] for j in range(s)]
            state.q = impute_q_nectd(self.X, params, state.q, rng, ctrs)
        state.mu = draw_mu(self.X, state.q, state.sigma, self.prior, rng, self.blocks)
        state.sigma = draw_sigma_nectd(self.X, state.q, state.mu, self.prior, rng, self.blocks)
        if not self.fix_q:
            for j in range(s):
                state.nu[j] = mis_step_nu(
                    state.nu[j], state.q[:, j], self.prior.theta0, self.prior.phi0, rng,
                    state.counters[f"nu.{j + 1}"],
                )
            shift_nu_nectd(self.X, state, self.blocks, self.prior, rng)
        return state

    def record(self, state: NectdState):
        iu = np.triu_indices(self.blocks.p)
        return np.concatenate([state.mu, state.sigma[iu], state.nu])

    # prior and data simulation, used by the joint-distribution checks
    def sample_prior(self, rng) -> NectdState:
        pr = self.prior
        p = self.blocks.p
        mu = rng.multivariate_normal(pr.mu0, pr.sigma0)
        sigma = sample_inverse_wishart(pr.nu0, np.eye(p), rng)
        nu = sample_nu_prior(pr.theta0, pr.phi0, rng, size=self.blocks.s)
        state = self.initial_state(rng)
        state.mu, state.sigma, state.nu = mu, sigma, nu
        return state

    def simulate_data(self, state: NectdState, rng):
        params = NectdParams(state.mu, state.sigma, self.blocks, state.nu)
        X, q = sample_nectd(params, self.X.shape[0], rng, return_q=True)
        self.X = X
        state.q = q
        return state


def fit_nectd(X, blocks: BlockSpec, prior: NectdPrior = NectdPrior(), cfg: McmcConfig = McmcConfig(),
              workers: int = 1) -> ChainStore:
    """Run the NECTD sampler; returns retained ``mu``, ``sigma`` and ``nu`` draws."""
    X = np.asarray(X, dtype=float)
    if X.shape[0] < 2:
        raise ValueError("need at least two observations")
    sampler = NectdSampler(X, blocks, prior)
    return run_chains(sampler, cfg, workers, meta={"model": "nectd", "variant": "nectd"})
