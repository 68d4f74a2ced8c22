import numpy as np
import pytest
from scipy import stats

from nectd.chains import McmcConfig
from nectd.geweke import geweke_test
from nectd.kernels import make_rng
from nectd.lmm import (
    LmmData,
    LmmSampler,
    LmmState,
    draw_variance_components,
    fit_lmm,
    impute_b,
    impute_q_lmm,
)
from nectd.priors import RegressionPrior
from nectd.simgen import SimDesign, gen_lmm


def _data(m=6, ni=3, seed=0):
    rng = np.random.default_rng(seed)
    x = np.concatenate([np.ones((m, ni, 1)), rng.standard_normal((m, ni, 1))], axis=2)
    z = np.concatenate([np.ones((m, ni, 1)), rng.standard_normal((m, ni, 1))], axis=2)
    return LmmData.from_arrays(rng.standard_normal((m, ni)), x, z)


def _state(data, b=None, q=None):
    b = np.zeros((data.m, data.l)) if b is None else b
    q = np.ones((data.m, 2)) if q is None else q
    return LmmState(np.array([0.2, -0.1]), np.array([[1.0, 0.3], [0.3, 0.8]]), 0.7, np.array([5.0, 9.0]), b, q, {})


def test_groups_of_unequal_size():
    g = [(np.array([1.0, 2.0]), np.ones((2, 1)), np.ones((2, 1))), (np.array([3.0]), np.ones((1, 1)), np.ones((1, 1)))]
    data = LmmData.from_groups(g)
    assert data.sizes.tolist() == [2, 1]
    assert data.mask.tolist() == [[True, True], [True, False]]
    with pytest.raises(ValueError):
        LmmData(np.zeros((2, 2)), np.zeros((2, 2, 1)), np.zeros((2, 2, 1)), np.array([[True, True], [False, False]]))
    with pytest.raises(ValueError, match="y"):
        LmmData.from_arrays(np.array([[np.nan]]), np.ones((1, 1, 1)), np.ones((1, 1, 1)))


def test_weights_with_zero_random_effects():
    data = _data(m=200_000, ni=1)
    state = _state(data)
    q = impute_q_lmm(data, state, make_rng(1))
    # b = 0: q1 ~ chi^2_{L + nu1} / nu1
    assert stats.kstest(q[:, 0] * 5.0, stats.chi2(2 + 5.0).cdf).pvalue > 1e-3


def test_weight_means_follow_gamma_identity():
    data = _data(m=1, ni=3)
    b = np.array([[0.8, -1.1]])
    state = _state(data, b=b)
    om_inv = np.linalg.inv(state.omega)
    bq = float(b[0] @ om_inv @ b[0])
    r = data.y[0] - data.x[0] @ state.beta - data.z[0] @ b[0]
    rq = float(r @ r) / state.sigma2
    rng = make_rng(2)
    draws = np.array([impute_q_lmm(data, state, rng)[0] for _ in range(100_000)])
    expected = np.array([(2 + 5.0) / (bq + 5.0), (3 + 9.0) / (rq + 9.0)])
    se = draws.std(axis=0) / np.sqrt(draws.shape[0])
    assert np.all(np.abs(draws.mean(axis=0) - expected) < 4 * se)


def test_shared_weight_variant():
    data = _data()
    q = impute_q_lmm(data, _state(data), make_rng(3), "shared-t")
    assert np.array_equal(q[:, 0], q[:, 1])
    assert np.all(impute_q_lmm(data, _state(data), make_rng(3), "normal") == 1.0)


def test_random_effects_match_dense_conditional():
    data = _data(m=3, ni=4)
    q = np.array([[0.5, 2.0], [1.0, 1.0], [3.0, 0.4]])
    state = _state(data, q=q)
    draws = np.array([impute_b(data, state, make_rng(300 + k)) for k in range(4000)])
    om_inv = np.linalg.inv(state.omega)
    for g in range(3):
        w = q[g, 1] / state.sigma2
        prec = w * data.z[g].T @ data.z[g] + q[g, 0] * om_inv
        cov = np.linalg.inv(prec)
        mean = cov @ (w * data.z[g].T @ (data.y[g] - data.x[g] @ state.beta))
        assert np.all(np.abs(draws[:, g].mean(axis=0) - mean) < 4 * np.sqrt(np.diag(cov) / 4000))
        cov_se = np.sqrt((np.outer(np.diag(cov), np.diag(cov)) + cov**2) / 4000)
        assert np.all(np.abs(np.cov(draws[:, g].T) - cov) < 4 * cov_se)


def test_random_effects_shrink_as_weight_grows():
    data = _data(m=1, ni=4, seed=4)
    state = _state(data)
    norms = []
    for q1 in (0.1, 0.5, 1.0, 4.0, 20.0):
        state.q = np.array([[q1, 1.0]])
        # conditional mean estimated from many draws
        draws = np.array([impute_b(data, state, make_rng(k)) for k in range(2000)])
        norms.append(np.linalg.norm(draws.mean(axis=0)))
    assert all(a > b for a, b in zip(norms, norms[1:]))


def test_error_variance_conditional_and_strict_flag():
    data = _data(m=5, ni=3)
    state = _state(data, q=make_rng(5).gamma(2.0, 0.5, (5, 2)))
    r = data.y - data.x @ state.beta - np.einsum("gil,gl->gi", data.z, state.b)
    ss = float(np.sum(state.q[:, 1] * np.sum(r * r, axis=1)))
    prior = RegressionPrior()
    draws = np.array([draw_variance_components(data, state, prior, make_rng(k))[1] for k in range(20_000)])
    ref = stats.invgamma(0.5 + 7.5, scale=0.1 + 0.5 * ss)
    assert stats.kstest(draws, ref.cdf).pvalue > 1e-3
    strict = RegressionPrior(strict_sigma2=True)
    draws = np.array([draw_variance_components(data, state, strict, make_rng(k))[1] for k in range(20_000)])
    # literal form: (0.2 + ss) / chi^2_{15 + 0.5}
    ref = stats.invgamma(0.5 * 15.5, scale=0.5 * (0.2 + ss))
    assert stats.kstest(draws, ref.cdf).pvalue > 1e-3


def test_fit_is_deterministic_and_named():
    data, truth = gen_lmm(SimDesign("lmm", size=60, seed=1))
    cfg = McmcConfig(iterations=200, burnin=50, chains=2, seed=6)
    a = fit_lmm(data, cfg=cfg)
    b = fit_lmm(data, cfg=cfg)
    assert a.names == ["beta.1", "beta.2", "beta.3", "omega.1.1", "omega.1.2", "omega.2.2", "sigma2",
                       "nu.1", "nu.2"]
    assert set(truth) == set(a.names)
    for name in a.names:
        assert np.array_equal(a.draws[name], b.draws[name])
    assert np.all(a.pooled("sigma2") > 0)


def test_fit_needs_two_groups():
    data = _data(m=1)
    with pytest.raises(ValueError, match="two groups"):
        fit_lmm(data, cfg=McmcConfig(iterations=10, burnin=0, chains=1))


@pytest.mark.parametrize("variant", ["nectd", "shared-t", "normal"])
def test_getting_it_right_short(variant):
    rng = np.random.default_rng(0)
    m = 10
    data = LmmData.from_arrays(np.zeros((m, 2)), np.concatenate([np.ones((m, 2, 1)), rng.normal(size=(m, 2, 1))], axis=2),
                               rng.normal(size=(m, 2, 1)))
    prior = RegressionPrior(coef_scale=1.0, scale_mode="covariance", theta0=10, phi0=1, sigma2_shape=3, sigma2_rate=2)
    result = geweke_test(LmmSampler(data, prior, variant), 3000, make_rng(15))
    assert result.passed, result.failures()
