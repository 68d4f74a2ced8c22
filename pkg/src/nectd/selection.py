"""
Gibbs sampler for the sample-selection model with a bivariate NECTD error.

Outcome ``y* = x'beta + e1`` is observed only when the selection latent
``u* = w'gamma + e2`` is positive. The error scale matrix is
``Omega = [[sigma1^2, rho sigma1], [rho sigma1, 1]]``. Variants:

``nectd``
    one mixing weight per equation, each with its own ``nu``;
``shared-t``
    one weight shared by both equations and a single ``nu``;
``normal``
    all weights fixed at one (the Heckman-Normal model).
"""

from dataclasses import dataclass, field

import numpy as np

from .chains import ChainStore, McmcConfig, run_chains
from .expansion import draw_latent_scale, draw_restricted_scale
from .kernels import sample_gaussian_precision, sample_inverse_wishart, sample_truncated_normal
from .mis import (AcceptanceCounter, block_terms, draw_shared_weight, mis_step_nu, mis_sweep_blocks,
                  nu_shift_step, shift_step_size)
from .priors import RegressionPrior, check_variant, sample_nu_prior

SELECTION_NU0 = 3.0
EXPAND = np.array([False, True])


class DegenerateDataError(ValueError):
    """The data cannot identify the model (e.g. every row selected)."""


@dataclass
class SelectionData:
    """Rows of a selection data set; ``y`` is NaN exactly where ``u == 0``."""

    x: np.ndarray
    w: np.ndarray
    u: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.x = np.atleast_2d(np.ascontiguousarray(self.x, dtype=float))
        self.w = np.atleast_2d(np.ascontiguousarray(self.w, dtype=float))
        self.u = np.asarray(self.u).astype(int).ravel()
        self.y = np.asarray(self.y, dtype=float).ravel()
        n = self.u.size
        if self.x.shape[0] != n or self.w.shape[0] != n or self.y.size != n:
            raise ValueError("x, w, u and y must have the same number of rows")
        if not np.all(np.isin(self.u, (0, 1))):
            raise ValueError("u must be binary")
        if np.any(np.isnan(self.y) != (self.u == 0)):
            bad = int(np.flatnonzero(np.isnan(self.y) != (self.u == 0))[0])
            raise ValueError(f"row {bad}: y must be missing exactly when u == 0")
        for name, arr in (("x", self.x), ("w", self.w)):
            if not np.all(np.isfinite(arr)):
                bad = int(np.flatnonzero(~np.all(np.isfinite(arr), axis=1))[0])
                raise ValueError(f"non-finite {name} in row {bad}")

    @property
    def n(self) -> int:
        return self.u.size

    @property
    def selected(self) -> np.ndarray:
        return self.u == 1


@dataclass
class SelectionState:
    beta: np.ndarray
    gamma: np.ndarray
    sigma1: float
    rho: float
    nu: np.ndarray
    ystar: np.ndarray
    ustar: np.ndarray
    q: np.ndarray
    counters: dict = field(default_factory=dict)

    @property
    def omega(self) -> np.ndarray:
        s = self.sigma1
        return np.array([[s * s, self.rho * s], [self.rho * s, 1.0]])

    def set_omega(self, omega):
        self.sigma1 = float(np.sqrt(omega[0, 0]))
        self.rho = float(omega[0, 1] / self.sigma1)


def impute_selection_latents(data: SelectionData, state: SelectionState, rng):
    """Draw ``(y*, u*)`` for every row given parameters and weights.

    Selected rows keep ``y* = y`` and draw ``u* > 0`` from its conditional
    given the outcome residual; unselected rows draw ``u* < 0`` from its
    marginal and then ``y*`` given ``u*``.
    """
    q1, q2 = state.q[:, 0], state.q[:, 1]
    s1, rho = state.sigma1, state.rho
    xb = data.x @ state.beta
    wg = data.w @ state.gamma
    sel = data.selected
    ystar = np.where(sel, data.y, 0.0)
    ustar = np.empty(data.n)
    if np.any(sel):
        e1 = data.y[sel] - xb[sel]
        mean = wg[sel] + np.sqrt(q1[sel] / q2[sel]) * rho * e1 / s1
        ustar[sel] = sample_truncated_normal(mean, (1.0 - rho * rho) / q2[sel], 0.0, np.inf, rng)
    uns = ~sel
    if np.any(uns):
        ustar[uns] = sample_truncated_normal(wg[uns], 1.0 / q2[uns], -np.inf, 0.0, rng)
        mean = xb[uns] + np.sqrt(q2[uns] / q1[uns]) * rho * s1 * (ustar[uns] - wg[uns])
        sd = s1 * np.sqrt((1.0 - rho * rho) / q1[uns])
        ystar[uns] = mean + sd * rng.standard_normal(int(uns.sum()))
    return ystar, ustar


def selection_residuals(data: SelectionData, state: SelectionState):
    return np.column_stack([state.ystar - data.x @ state.beta, state.ustar - data.w @ state.gamma])


def impute_q_selection(data: SelectionData, state: SelectionState, rng, variant="nectd"):
    """Update the mixing weights; returns an ``(n, 2)`` array (columns equal
    for the shared variant, ones for the Normal variant)."""
    variant = check_variant(variant)
    if variant == "normal":
        return np.ones((data.n, 2))
    resid = selection_residuals(data, state)
    prec = np.linalg.inv(state.omega)
    if variant == "shared-t":
        q = draw_shared_weight(resid, prec, state.nu[0], rng)
        return np.column_stack([q, q])
    ctrs = [state.counters.get("q.1"), state.counters.get("q.2")] if state.counters else None
    return mis_sweep_blocks(resid, prec, state.q, state.nu, (1, 1), rng, ctrs)


def draw_delta(data: SelectionData, state: SelectionState, prior: RegressionPrior, rng):
    """Joint conjugate draw of ``(beta, gamma)``."""
    K, L = data.x.shape[1], data.w.shape[1]
    prec0 = prior.coef_precision(K + L)
    prec = prec0.copy()
    lin = prec0 @ prior.coef_mean_vector(K + L)
    if data.n:
        P = np.linalg.inv(state.omega)
        s1, s2 = np.sqrt(state.q[:, 0]), np.sqrt(state.q[:, 1])
        w11, w12, w22 = P[0, 0] * s1 * s1, P[0, 1] * s1 * s2, P[1, 1] * s2 * s2
        x, w = data.x, data.w
        prec[:K, :K] += (x * w11[:, None]).T @ x
        prec[:K, K:] += (x * w12[:, None]).T @ w
        prec[K:, :K] = prec[:K, K:].T
        prec[K:, K:] += (w * w22[:, None]).T @ w
        lin[:K] += x.T @ (w11 * state.ystar + w12 * state.ustar)
        lin[K:] += w.T @ (w12 * state.ystar + w22 * state.ustar)
    delta = sample_gaussian_precision(prec, lin, rng)
    return delta[:K], delta[K:]


def draw_omega_px(data: SelectionData, state: SelectionState, nu0: float, rng, literal=False, counter=None):
    """Parameter-expanded update of ``Omega`` (lower-right entry fixed at one)."""
    resid = selection_residuals(data, state) * np.sqrt(state.q)
    cross = resid.T @ resid
    return draw_restricted_scale(cross, data.n, state.omega, nu0, EXPAND, rng, literal, counter)


def rescale_selection(data: SelectionData, state: SelectionState, prior: RegressionPrior, rng, counter=None):
    """Jointly rescale ``(gamma, u*)``; returns the new pair."""
    e = selection_residuals(data, state) * np.sqrt(state.q)
    P = np.linalg.inv(state.omega)
    var, mean = prior.coef_variance, prior.coef_mean
    quad = P[1, 1] * float(e[:, 1] @ e[:, 1]) + float(state.gamma @ state.gamma) / var
    cross = P[0, 1] * float(e[:, 0] @ e[:, 1]) - mean * float(state.gamma.sum()) / var
    c = draw_latent_scale(quad, cross, data.n + state.gamma.size, rng, counter)
    return c * state.gamma, c * state.ustar


def shift_nu_selection(data: SelectionData, state: SelectionState, prior: RegressionPrior, rng, variant="nectd"):
    """Non-centred updates of the degrees of freedom with their weights."""
    resid = selection_residuals(data, state)
    P = np.linalg.inv(state.omega)
    step = shift_step_size(data.n)
    args = (prior.theta0, prior.phi0, rng, step)
    ctr = state.counters or {}
    if variant == "shared-t":
        quad = np.einsum("ik,kl,il->i", resid, P, resid)
        nu, q = nu_shift_step(state.nu[0], state.q[:, 0], quad, 0.0, 2, *args, ctr.get("nu.1.shift"))
        state.nu[:] = nu
        state.q = np.column_stack([q, q])
        return state
    q = state.q.copy()
    for j in range(2):
        u, c = block_terms(resid, P, q, (1, 1), j)
        state.nu[j], q[:, j] = nu_shift_step(state.nu[j], q[:, j], u, c, 1, *args, ctr.get(f"nu.{j + 1}.shift"))
    state.q = q
    return state


class SelectionSampler:
    def __init__(self, data: SelectionData, prior: RegressionPrior = RegressionPrior(), variant="nectd",
                 fix_nu=None, literal_expansion=False):
        self.data = data
        self.prior = prior
        self.variant = check_variant(variant)
        self.nu0 = prior.iw_df(SELECTION_NU0)
        self.fix_nu = None if fix_nu is None else np.atleast_1d(np.asarray(fix_nu, dtype=float))
        self.literal_expansion = literal_expansion
        K, L = data.x.shape[1], data.w.shape[1]
        names = [f"beta.{k + 1}" for k in range(K)] + [f"gamma.{k + 1}" for k in range(L)]
        names += ["sigma", "rho"]
        if self.variant == "nectd":
            names += ["nu.1", "nu.2"]
        elif self.variant == "shared-t":
            names += ["nu"]
        self.param_names = names

    def _n_nu(self):
        return {"nectd": 2, "shared-t": 1, "normal": 0}[self.variant]

    def _counters(self):
        ctr = {"omega": AcceptanceCounter(), "scale": AcceptanceCounter()}
        if self.variant == "nectd":
            ctr.update({"q.1": AcceptanceCounter(), "q.2": AcceptanceCounter()})
        for j in range(self._n_nu()):
            ctr[f"nu.{j + 1}"] = AcceptanceCounter()
            ctr[f"nu.{j + 1}.shift"] = AcceptanceCounter()
        return ctr

    def _initial_nu(self):
        if self.fix_nu is not None:
            return np.resize(self.fix_nu, max(self._n_nu(), 2)).astype(float)
        return np.full(2, self.prior.theta0 / self.prior.phi0)

    def initial_state(self, rng) -> SelectionState:
        d = self.data
        sel = d.selected
        beta, *_ = np.linalg.lstsq(d.x[sel], d.y[sel], rcond=None)
        resid = d.y[sel] - d.x[sel] @ beta
        sigma1 = float(np.std(resid)) if sel.sum() > 1 else 1.0
        # linear-probability fit on the +-1 selection indicator
        gamma, *_ = np.linalg.lstsq(d.w, 2.0 * d.u - 1.0, rcond=None)
        ystar = np.where(sel, d.y, d.x @ beta)
        ustar = np.where(sel, 1.0, -1.0)
        return SelectionState(beta, gamma, max(sigma1, 1e-3), 0.0, self._initial_nu(), ystar, ustar,
                              np.ones((d.n, 2)), self._counters())

    def sweep(self, state: SelectionState, rng):
        d = self.data
        state.ystar, state.ustar = impute_selection_latents(d, state, rng)
        if self.variant != "normal":
            state.q = impute_q_selection(d, state, rng, self.variant)
        state.beta, state.gamma = draw_delta(d, state, self.prior, rng)
        state.gamma, state.ustar = rescale_selection(d, state, self.prior, rng, state.counters["scale"])
        state.set_omega(draw_omega_px(d, state, self.nu0, rng, self.literal_expansion, state.counters["omega"]))
        if self.fix_nu is None:
            if self.variant == "nectd":
                for j in range(2):
                    state.nu[j] = mis_step_nu(state.nu[j], state.q[:, j], self.prior.theta0,
                                              self.prior.phi0, rng, state.counters[f"nu.{j + 1}"])
            elif self.variant == "shared-t":
                state.nu[0] = mis_step_nu(state.nu[0], state.q[:, 0], self.prior.theta0, self.prior.phi0,
                                          rng, state.counters["nu.1"])
                state.nu[1] = state.nu[0]
            if self.variant != "normal":
                shift_nu_selection(d, state, self.prior, rng, self.variant)
        return state

    def record(self, state: SelectionState):
        return np.concatenate([state.beta, state.gamma, [state.sigma1, state.rho], state.nu[: self._n_nu()]])

    # joint-distribution checks
    def sample_prior(self, rng) -> SelectionState:
        pr = self.prior
        K, L = self.data.x.shape[1], self.data.w.shape[1]
        sd = np.sqrt(pr.coef_variance)
        delta = pr.coef_mean + sd * rng.standard_normal(K + L)
        sigma = sample_inverse_wishart(self.nu0, np.eye(2), rng)
        omega = sigma / np.sqrt(np.outer([1.0, sigma[1, 1]], [1.0, sigma[1, 1]]))
        state = self.initial_state(rng)
        state.beta, state.gamma = delta[:K], delta[K:]
        state.set_omega(omega)
        if self.fix_nu is None and self.variant != "normal":
            nu = sample_nu_prior(pr.theta0, pr.phi0, rng, size=self._n_nu())
            state.nu = np.resize(nu, 2)
        return state

    def simulate_data(self, state: SelectionState, rng):
        """Regenerate weights, latents and the observed ``(u, y)``."""
        n = self.data.n
        if self.variant == "nectd":
            q = rng.gamma(state.nu / 2.0, 2.0 / state.nu, size=(n, 2))
        elif self.variant == "shared-t":
            q1 = rng.gamma(state.nu[0] / 2.0, 2.0 / state.nu[0], size=n)
            q = np.column_stack([q1, q1])
        else:
            q = np.ones((n, 2))
        chol = np.linalg.cholesky(state.omega)
        e = (rng.standard_normal((n, 2)) @ chol.T) / np.sqrt(q)
        ystar = self.data.x @ state.beta + e[:, 0]
        ustar = self.data.w @ state.gamma + e[:, 1]
        u = (ustar > 0).astype(int)
        self.data = SelectionData(self.data.x, self.data.w, u, np.where(u == 1, ystar, np.nan))
        state.q, state.ystar, state.ustar = q, ystar, ustar
        return state


def fit_selection(data: SelectionData, prior: RegressionPrior = RegressionPrior(), cfg: McmcConfig = McmcConfig(),
                  variant="nectd", fix_nu=None, literal_expansion=False, workers=1) -> ChainStore:
    """Fit the selection model; see :class:`SelectionSampler` for options."""
    n_sel = int(data.selected.sum())
    if n_sel == 0 or n_sel == data.n:
        raise DegenerateDataError("need at least one selected and one unselected row")
    sampler = SelectionSampler(data, prior, variant, fix_nu, literal_expansion)
    return run_chains(sampler, cfg, workers, meta={"model": "selection", "variant": sampler.variant})
