"""
Gibbs sampler for the linear mixed model with NECTD random effects and
errors.

Group ``i`` has ``y_i = x_i beta + z_i b_i + e_i`` with
``b_i ~ N(0, Omega / q_i1)`` and ``e_i ~ N(0, sigma2 I / q_i2)``. Every
full conditional is conjugate except the degrees of freedom. Groups of
unequal size are stored padded; ``mask`` marks real observations.
"""

from dataclasses import dataclass, field

import numpy as np

from .chains import ChainStore, McmcConfig, run_chains
from .kernels import sample_gaussian_precision, sample_inverse_wishart
from .mis import AcceptanceCounter, mis_step_nu, nu_shift_step, shift_step_size
from .priors import RegressionPrior, check_variant, sample_nu_prior


@dataclass
class LmmData:
    """Padded group arrays: ``y (m, nmax)``, ``x (m, nmax, K)``, ``z (m, nmax, L)``."""

    y: np.ndarray
    x: np.ndarray
    z: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)
        self.y = np.where(self.mask, np.asarray(self.y, dtype=float), 0.0)
        self.x = np.where(self.mask[..., None], np.asarray(self.x, dtype=float), 0.0)
        self.z = np.where(self.mask[..., None], np.asarray(self.z, dtype=float), 0.0)
        if not (self.y.shape == self.mask.shape == self.x.shape[:2] == self.z.shape[:2]):
            raise ValueError("inconsistent group array shapes")
        if np.any(self.mask.sum(axis=1) < 1):
            raise ValueError("every group needs at least one observation")
        for name, arr in (("y", self.y), ("x", self.x), ("z", self.z)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite values in {name}")

    @classmethod
    def from_arrays(cls, y, x, z):
        y = np.asarray(y, dtype=float)
        return cls(y, x, z, np.ones(y.shape, dtype=bool))

    @classmethod
    def from_groups(cls, groups):
        """Build from a list of ``(y_i, x_i, z_i)`` tuples of varying length."""
        m = len(groups)
        nmax = max(len(g[0]) for g in groups)
        K = np.asarray(groups[0][1]).shape[1]
        L = np.asarray(groups[0][2]).shape[1]
        y = np.zeros((m, nmax))
        x = np.zeros((m, nmax, K))
        z = np.zeros((m, nmax, L))
        mask = np.zeros((m, nmax), dtype=bool)
        for i, (yi, xi, zi) in enumerate(groups):
            k = len(yi)
            y[i, :k], x[i, :k], z[i, :k], mask[i, :k] = yi, xi, zi, True
        return cls(y, x, z, mask)

    @property
    def m(self) -> int:
        return self.y.shape[0]

    @property
    def sizes(self) -> np.ndarray:
        return self.mask.sum(axis=1)

    @property
    def k(self) -> int:
        return self.x.shape[2]

    @property
    def l(self) -> int:
        return self.z.shape[2]


@dataclass
class LmmState:
    beta: np.ndarray
    omega: np.ndarray
    sigma2: float
    nu: np.ndarray
    b: np.ndarray
    q: np.ndarray
    counters: dict = field(default_factory=dict)


def _residuals(data: LmmData, state: LmmState):
    fit = data.x @ state.beta + np.einsum("gil,gl->gi", data.z, state.b)
    return np.where(data.mask, data.y - fit, 0.0)


def _weight_terms(data: LmmData, state: LmmState):
    """Quadratic forms of the random effects and of the errors, per group."""
    bq = np.einsum("gl,lk,gk->g", state.b, np.linalg.inv(state.omega), state.b)
    r = _residuals(data, state)
    return bq, np.sum(r * r, axis=1) / state.sigma2


def impute_q_lmm(data: LmmData, state: LmmState, rng, variant="nectd"):
    """Conjugate draws of the group weights; returns ``(m, 2)``."""
    variant = check_variant(variant)
    if variant == "normal":
        return np.ones((data.m, 2))
    bq, rq = _weight_terms(data, state)
    n_i = data.sizes
    if variant == "shared-t":
        nu = state.nu[0]
        q = rng.gamma(0.5 * (data.l + n_i + nu), 2.0 / (bq + rq + nu))
        return np.column_stack([q, q])
    nu1, nu2 = state.nu
    q1 = rng.gamma(0.5 * (data.l + nu1), 2.0 / (bq + nu1))
    q2 = rng.gamma(0.5 * (n_i + nu2), 2.0 / (rq + nu2))
    return np.column_stack([q1, q2])


def impute_b(data: LmmData, state: LmmState, rng):
    """Conjugate draws of the random effects of every group."""
    L = data.l
    w = state.q[:, 1] / state.sigma2
    om_inv = np.linalg.inv(state.omega)
    prec = w[:, None, None] * np.einsum("gil,gik->glk", data.z, data.z) + state.q[:, 0, None, None] * om_inv
    partial = np.where(data.mask, data.y - data.x @ state.beta, 0.0)
    lin = w[:, None] * np.einsum("gil,gi->gl", data.z, partial)
    chol = np.linalg.cholesky(prec)
    mean = np.linalg.solve(prec, lin[..., None])[..., 0]
    noise = rng.standard_normal((data.m, L))
    # solve L^T v = noise for every group
    v = np.linalg.solve(np.swapaxes(chol, 1, 2), noise[..., None])[..., 0]
    return mean + v


def draw_variance_components(data: LmmData, state: LmmState, prior: RegressionPrior, rng, nu0=None):
    """Conjugate draws of ``Omega`` and ``sigma2``."""
    L = data.l
    nu0 = prior.iw_df(L + 1) if nu0 is None else nu0
    scale = np.eye(L) + np.einsum("g,gl,gk->lk", state.q[:, 0], state.b, state.b)
    omega = sample_inverse_wishart(nu0 + data.m, 0.5 * (scale + scale.T), rng)
    r = _residuals(data, state)
    ss = float(np.sum(state.q[:, 1] * np.sum(r * r, axis=1)))
    n_total = int(data.sizes.sum())
    if prior.strict_sigma2:
        sigma2 = (2.0 * prior.sigma2_rate + ss) / rng.chisquare(n_total + 2.0 * prior.sigma2_shape - 0.5)
    else:
        sigma2 = (prior.sigma2_rate + 0.5 * ss) / rng.gamma(prior.sigma2_shape + 0.5 * n_total)
    return omega, float(sigma2)


def draw_beta_lmm(data: LmmData, state: LmmState, prior: RegressionPrior, rng):
    """Conjugate draw of the fixed effects."""
    K = data.k
    prec0 = prior.coef_precision(K)
    w = state.q[:, 1] / state.sigma2
    prec = prec0 + np.einsum("g,gik,gil->kl", w, data.x, data.x)
    partial = np.where(data.mask, data.y - np.einsum("gil,gl->gi", data.z, state.b), 0.0)
    lin = prec0 @ prior.coef_mean_vector(K) + np.einsum("g,gik,gi->k", w, data.x, partial)
    return sample_gaussian_precision(prec, lin, rng)


def draw_nu_lmm(data: LmmData, state: LmmState, prior: RegressionPrior, rng):
    """One MIS step for each degrees-of-freedom parameter."""
    nu = state.nu.copy()
    for j in range(2):
        nu[j] = mis_step_nu(nu[j], state.q[:, j], prior.theta0, prior.phi0, rng,
                            state.counters.get(f"nu.{j + 1}") if state.counters else None)
    return nu


def shift_nu_lmm(data: LmmData, state: LmmState, prior: RegressionPrior, rng, variant="nectd"):
    """Non-centred updates of the degrees of freedom with their weights."""
    bq, rq = _weight_terms(data, state)
    args = (prior.theta0, prior.phi0, rng, shift_step_size(data.m))
    ctr = state.counters or {}
    if variant == "shared-t":
        nu, q = nu_shift_step(state.nu[0], state.q[:, 0], bq + rq, 0.0, data.l + data.sizes, *args,
                              ctr.get("nu.1.shift"))
        state.nu[:] = nu
        state.q = np.column_stack([q, q])
        return state
    q = state.q.copy()
    for j, (quad, dim) in enumerate(((bq, data.l), (rq, data.sizes))):
        state.nu[j], q[:, j] = nu_shift_step(state.nu[j], q[:, j], quad, 0.0, dim, *args,
                                             ctr.get(f"nu.{j + 1}.shift"))
    state.q = q
    return state


class LmmSampler:
    def __init__(self, data: LmmData, prior: RegressionPrior = RegressionPrior(), variant="nectd", fix_nu=None):
        self.data = data
        self.prior = prior
        self.variant = check_variant(variant)
        self.nu0 = prior.iw_df(data.l + 1)
        self.fix_nu = None if fix_nu is None else np.atleast_1d(np.asarray(fix_nu, dtype=float))
        L = data.l
        names = [f"beta.{k + 1}" for k in range(data.k)]
        names += [f"omega.{i + 1}.{j + 1}" for i in range(L) for j in range(i, L)]
        names += ["sigma2"]
        if self.variant == "nectd":
            names += ["nu.1", "nu.2"]
        elif self.variant == "shared-t":
            names += ["nu"]
        self.param_names = names

    def _n_nu(self):
        return {"nectd": 2, "shared-t": 1, "normal": 0}[self.variant]

    def initial_state(self, rng) -> LmmState:
        d = self.data
        xs, ys = d.x[d.mask], d.y[d.mask]
        beta, *_ = np.linalg.lstsq(xs, ys, rcond=None)
        dof = max(ys.size - d.k, 1)
        sigma2 = max(float(np.sum((ys - xs @ beta) ** 2)) / dof, 1e-6)
        if self.fix_nu is not None:
            nu = np.resize(self.fix_nu, 2).astype(float)
        else:
            nu = np.full(2, self.prior.theta0 / self.prior.phi0)
        counters = {}
        for j in range(self._n_nu()):
            counters[f"nu.{j + 1}"] = AcceptanceCounter()
            counters[f"nu.{j + 1}.shift"] = AcceptanceCounter()
        return LmmState(beta, np.eye(d.l), sigma2, nu, np.zeros((d.m, d.l)), np.ones((d.m, 2)), counters)

    def sweep(self, state: LmmState, rng):
        d = self.data
        if self.variant != "normal":
            state.q = impute_q_lmm(d, state, rng, self.variant)
        state.b = impute_b(d, state, rng)
        state.omega, state.sigma2 = draw_variance_components(d, state, self.prior, rng, self.nu0)
        state.beta = draw_beta_lmm(d, state, self.prior, rng)
        if self.fix_nu is None:
            if self.variant == "nectd":
                state.nu = draw_nu_lmm(d, state, self.prior, rng)
            elif self.variant == "shared-t":
                state.nu[:] = mis_step_nu(state.nu[0], state.q[:, 0], self.prior.theta0, self.prior.phi0,
                                          rng, state.counters["nu.1"])
            if self.variant != "normal":
                shift_nu_lmm(d, state, self.prior, rng, self.variant)
        return state

    def record(self, state: LmmState):
        iu = np.triu_indices(self.data.l)
        return np.concatenate([state.beta, state.omega[iu], [state.sigma2], state.nu[: self._n_nu()]])

    # joint-distribution checks
    def sample_prior(self, rng) -> LmmState:
        pr = self.prior
        d = self.data
        state = self.initial_state(rng)
        state.beta = pr.coef_mean + np.sqrt(pr.coef_variance) * rng.standard_normal(d.k)
        state.omega = sample_inverse_wishart(self.nu0, np.eye(d.l), rng)
        state.sigma2 = float(pr.sigma2_rate / rng.gamma(pr.sigma2_shape))
        if self.fix_nu is None and self.variant != "normal":
            state.nu = np.resize(sample_nu_prior(pr.theta0, pr.phi0, rng, size=self._n_nu()), 2)
        return state

    def simulate_data(self, state: LmmState, rng):
        d = self.data
        m = d.m
        if self.variant == "nectd":
            q = rng.gamma(state.nu / 2.0, 2.0 / state.nu, size=(m, 2))
        elif self.variant == "shared-t":
            q1 = rng.gamma(state.nu[0] / 2.0, 2.0 / state.nu[0], size=m)
            q = np.column_stack([q1, q1])
        else:
            q = np.ones((m, 2))
        b = (rng.standard_normal((m, d.l)) @ np.linalg.cholesky(state.omega).T) / np.sqrt(q[:, :1])
        eps = np.sqrt(state.sigma2) * rng.standard_normal(d.y.shape) / np.sqrt(q[:, 1:])
        y = d.x @ state.beta + np.einsum("gil,gl->gi", d.z, b) + eps
        self.data = LmmData(y, d.x, d.z, d.mask)
        state.q, state.b = q, b
        return state


def fit_lmm(data: LmmData, prior: RegressionPrior = RegressionPrior(), cfg: McmcConfig = McmcConfig(),
            variant="nectd", fix_nu=None, workers=1) -> ChainStore:
    """Fit the mixed model; see :class:`LmmSampler`."""
    if data.m < 2:
        raise ValueError("need at least two groups")
    sampler = LmmSampler(data, prior, variant, fix_nu)
    return run_chains(sampler, cfg, workers, meta={"model": "lmm", "variant": sampler.variant})
