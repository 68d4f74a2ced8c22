import numpy as np
import pytest
from scipy import stats

from nectd.chains import McmcConfig
from nectd.distribution import BlockSpec, NectdParams, sample_nectd
from nectd.fit_nectd import (
    NectdPrior,
    NectdSampler,
    draw_mu,
    draw_sigma_nectd,
    fit_nectd,
    impute_q_nectd,
)
from nectd.geweke import geweke_test
from nectd.kernels import make_rng, sample_gaussian_precision, sample_inverse_wishart
from nectd.mis import AcceptanceCounter, NU_LOWER, NU_UPPER


def _data(n=200, seed=0, blocks=BlockSpec((1, 1)), nu=(4.0, 15.0)):
    sigma = np.eye(blocks.p) + 0.3 * (1 - np.eye(blocks.p))
    params = NectdParams(np.arange(blocks.p, dtype=float), sigma, blocks, nu)
    return sample_nectd(params, n, make_rng(seed)), params


def test_weight_step_is_exact_with_diagonal_scale():
    X, _ = _data()
    params = NectdParams(np.zeros(2), np.diag([1.0, 2.0]), BlockSpec((1, 1)), [4.0, 15.0])
    ctrs = [AcceptanceCounter(), AcceptanceCounter()]
    q = impute_q_nectd(X, params, np.ones((X.shape[0], 2)), make_rng(1), ctrs)
    assert np.all(q > 0)
    assert ctrs[0].rate == 1.0 and ctrs[1].rate == 1.0


def test_weight_step_is_exact_in_one_dimension():
    X = make_rng(2).standard_normal((100, 1))
    params = NectdParams(np.zeros(1), np.eye(1), BlockSpec((1,)), [3.0])
    ctr = [AcceptanceCounter()]
    impute_q_nectd(X, params, np.ones((100, 1)), make_rng(3), ctr)
    assert ctr[0].rate == 1.0


def test_weight_conditional_is_gamma_without_cross_terms():
    # sigma^{12} = 0: q_ij | . ~ Gamma((nu + 1) / 2, rate (nu + e^2 / sigma_jj) / 2)
    X = np.tile([[1.5, -0.5]], (40_000, 1))
    params = NectdParams(np.zeros(2), np.diag([1.0, 2.0]), BlockSpec((1, 1)), [4.0, 15.0])
    q = impute_q_nectd(X, params, np.ones((40_000, 2)), make_rng(4))
    for j, (e2, nu) in enumerate(((1.5**2, 4.0), (0.25 / 2.0, 15.0))):
        ref = stats.gamma(0.5 * (nu + 1.0), scale=2.0 / (nu + e2))
        assert stats.kstest(q[:, j], ref.cdf).pvalue > 1e-3


def test_fixed_weights_give_the_normal_gibbs_sampler():
    X, _ = _data(n=50)
    prior = NectdPrior()
    sampler = NectdSampler(X, BlockSpec((1, 1)), prior, fix_q=True)
    rng = make_rng(5)
    state = sampler.initial_state(rng)
    # hand-written Normal-model Gibbs sampler on the same stream
    ref_rng = make_rng(5)
    sampler.initial_state(ref_rng)
    pr = prior.resolved(2)
    sigma = state.sigma.copy()
    for _ in range(20):
        sampler.sweep(state, rng)
        sig_inv = np.linalg.inv(sigma)
        prec = np.linalg.inv(pr.sigma0) + X.shape[0] * sig_inv
        lin = np.linalg.inv(pr.sigma0) @ pr.mu0 + sig_inv @ X.sum(axis=0)
        mu = sample_gaussian_precision(prec, lin, ref_rng)
        r = X - mu
        scale = np.eye(2) + r.T @ r
        sigma = sample_inverse_wishart(X.shape[0] + pr.nu0, 0.5 * (scale + scale.T), ref_rng)
        # same stream consumption; values agree up to summation order
        assert np.allclose(state.mu, mu, rtol=1e-10, atol=0)
        assert np.allclose(state.sigma, sigma, rtol=1e-10, atol=0)
    assert np.all(state.q == 1.0)


def test_conditionals_reduce_with_unit_weights():
    X, _ = _data(n=30)
    q = np.ones((30, 2))
    pr = NectdPrior()
    a = draw_mu(X, q, np.eye(2), pr, make_rng(6))
    b = sample_gaussian_precision(np.eye(2) / 100 + 30 * np.eye(2), X.sum(axis=0), make_rng(6))
    assert np.allclose(a, b)
    s = draw_sigma_nectd(X, q, a, pr, make_rng(7))
    r = X - a
    assert np.allclose(s, sample_inverse_wishart(33.0, np.eye(2) + r.T @ r, make_rng(7)))


def test_outlying_rows_get_small_weights():
    X, params = _data(n=300, seed=8)
    sampler = NectdSampler(X, params.blocks)
    rng = make_rng(9)
    state = sampler.initial_state(rng)
    state.mu, state.sigma, state.nu = params.mu, params.sigma, np.array(params.nu, dtype=float)
    total = np.zeros_like(state.q)
    for _ in range(400):
        state.q = impute_q_nectd(X, params, state.q, rng)
        total += 1.0 / state.q
    z = np.abs((X - params.mu) / np.sqrt(np.diag(params.sigma)))
    for j in range(2):
        assert stats.spearmanr(z[:, j], total[:, j]).correlation > 0.5


def test_fit_is_deterministic_and_valid():
    X, params = _data(n=150, seed=10)
    cfg = McmcConfig(iterations=400, burnin=100, chains=2, seed=3)
    a = fit_nectd(X, params.blocks, cfg=cfg)
    b = fit_nectd(X, params.blocks, cfg=cfg, workers=2)
    assert a.names == b.names
    for name in a.names:
        assert np.array_equal(a.draws[name], b.draws[name])
    for c in range(2):
        for k in range(a.n_draws):
            s = np.array([[a.draws["sigma.1.1"][c, k], a.draws["sigma.1.2"][c, k]],
                          [a.draws["sigma.1.2"][c, k], a.draws["sigma.2.2"][c, k]]])
            np.linalg.cholesky(s)
    for j in (1, 2):
        nu = a.pooled(f"nu.{j}")
        assert np.all((nu >= NU_LOWER) & (nu <= NU_UPPER))
    assert set(a.acceptance[0]) >= {"q.1", "q.2", "nu.1", "nu.2", "nu.1.shift", "nu.2.shift"}


def test_fit_recovers_location_and_heavier_tail():
    X, params = _data(n=2000, seed=11, nu=(3.0, 40.0))
    store = fit_nectd(X, params.blocks, cfg=McmcConfig(iterations=1500, burnin=500, chains=1, seed=1))
    assert abs(store.pooled("mu.1").mean() - 0.0) < 0.1
    assert abs(store.pooled("mu.2").mean() - 1.0) < 0.1
    assert np.median(store.pooled("nu.1")) < np.median(store.pooled("nu.2"))


def test_fit_rejects_bad_data():
    with pytest.raises(ValueError, match="two observations"):
        fit_nectd(np.zeros((1, 2)), BlockSpec((1, 1)))
    X = np.zeros((5, 2))
    X[3, 1] = np.nan
    with pytest.raises(ValueError, match="row 3"):
        NectdSampler(X, BlockSpec((1, 1)))
    with pytest.raises(ValueError):
        NectdSampler(np.zeros((5, 3)), BlockSpec((1, 1)))
    with pytest.raises(ValueError):
        NectdPrior(nu0=0.5).resolved(2)


@pytest.mark.parametrize("sizes", [(1, 1), (2, 1)])
def test_getting_it_right_short(sizes):
    blocks = BlockSpec(sizes)
    sampler = NectdSampler(np.zeros((20, blocks.p)), blocks,
                           NectdPrior(sigma0=np.eye(blocks.p), nu0=blocks.p + 3.0, theta0=10.0, phi0=1.0))
    result = geweke_test(sampler, 4000, make_rng(12))
    assert result.passed, result.failures()
