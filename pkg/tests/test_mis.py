import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats
from scipy.special import gammaln

from nectd.kernels import make_rng
from nectd.mis import (
    AcceptanceCounter,
    GammaProposal,
    NU_LOWER,
    NU_UPPER,
    NuTarget,
    ProposalError,
    QTarget,
    block_terms,
    draw_shared_weight,
    gamma_proposal_for_nu,
    gamma_proposal_for_q,
    mis_step_nu,
    mis_step_q,
    nu_proposal,
    nu_shift_step,
    q_mode,
    run_mis_chain,
    shift_step_size,
)


def grid_cdf(logpdf, lo, hi, size=20_001):
    """Normalised CDF of an unnormalised log density on a fine grid."""
    x = np.linspace(lo, hi, size)
    lp = logpdf(x)
    w = np.exp(lp - lp.max())
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (w[1:] + w[:-1]) * np.diff(x))])
    cdf /= cdf[-1]
    return lambda v: np.interp(v, x, cdf)


@settings(max_examples=100, deadline=None)
@given(u=st.floats(0.01, 50.0), c=st.floats(-5.0, 5.0), kappa=st.floats(0.01, 40.0))
def test_q_mode_is_stationary(u, c, kappa):
    m = float(q_mode(u, c, kappa))
    t = QTarget(u, c, 2.0 * (kappa + 1.0) - 1.0, 1)
    assert m > 0
    assert abs(t.dlogpdf(m)) * m < 1e-8 * (1.0 + u * m + abs(c) * math.sqrt(m) + kappa)


def test_q_proposal_matches_mode_and_curvature():
    t = QTarget(u=3.0, c=-0.7, nu=6.0, d=2)
    prop = gamma_proposal_for_q(t)
    m = float(q_mode(t.u, t.c, t.kappa))
    assert (prop.alpha - 1.0) / prop.beta == pytest.approx(m, rel=1e-12)
    assert -(prop.alpha - 1.0) / m**2 == pytest.approx(t.d2logpdf(m), rel=1e-12)


def test_q_proposal_is_exact_without_cross_term():
    t = QTarget(u=2.5, c=0.0, nu=4.0, d=3)
    prop = gamma_proposal_for_q(t)
    assert prop.alpha == pytest.approx(0.5 * (t.nu + t.d), rel=1e-12)
    assert prop.beta == pytest.approx(0.5 * t.u, rel=1e-12)
    _, rate = run_mis_chain(t.logpdf, prop, 5000, 1.0, make_rng(0))
    assert rate == 1.0


def test_q_proposal_falls_back_to_exponential():
    t = QTarget(u=2.0, c=0.3, nu=0.5, d=1)
    prop = gamma_proposal_for_q(t)
    assert (prop.alpha, prop.beta) == (1.0, 1.0)


def test_gamma_proposal_rejects_bad_parameters():
    with pytest.raises(ProposalError):
        GammaProposal(0.0, 1.0)
    with pytest.raises(ValueError):
        QTarget(u=0.0, c=0.0, nu=3.0)


@pytest.mark.parametrize("u, c, nu, d", [(1.5, 0.8, 5.0, 1), (4.0, -2.0, 3.0, 2), (0.2, 0.1, 30.0, 1)])
def test_run_mis_chain_targets_weight_density(u, c, nu, d):
    t = QTarget(u, c, nu, d)
    path, rate = run_mis_chain(t.logpdf, gamma_proposal_for_q(t), 200_000, 1.0, make_rng(1))
    assert 0.5 < rate < 1.0
    cdf = grid_cdf(t.logpdf, 1e-9, path.max() * 1.5)
    thinned = path[::20]
    assert stats.kstest(thinned, cdf).pvalue > 1e-3


def test_vectorised_q_step_keeps_target():
    # many independent copies started at one; after 60 steps they follow the target
    rng = make_rng(2)
    u, c, nu, d = 2.0, 1.2, 4.0, 2
    q = np.ones(20_000)
    ctr = AcceptanceCounter()
    for _ in range(60):
        q = mis_step_q(q, u, c, nu, d, rng, ctr)
    t = QTarget(u, c, nu, d)
    assert stats.kstest(q, grid_cdf(t.logpdf, 1e-9, 40.0)).pvalue > 1e-3
    assert 0.5 < ctr.rate < 1.0


def test_nu_target_from_weights():
    q = np.array([0.5, 1.2, 2.0])
    t = NuTarget.from_weights(q, theta0=1.0, phi0=0.1)
    assert t.n == 3
    assert t.eta == pytest.approx(0.1 + 0.5 * np.sum(q - np.log(q)))
    # the target equals the product of Gamma(nu/2, nu/2) densities times the prior, up to a constant
    nus = np.array([2.0, 5.0, 17.0])
    direct = [np.sum(stats.gamma.logpdf(q, v / 2, scale=2 / v)) + stats.gamma.logpdf(v, 1.0, scale=10.0)
              for v in nus]
    diff = np.asarray(direct) - t.logpdf(nus)
    assert np.allclose(diff, diff[0])


def test_nu_proposal_is_matched_at_the_mode():
    rng = make_rng(3)
    t = NuTarget.from_weights(rng.gamma(4.0, 0.25, 300), 1.0, 0.1)
    prop = gamma_proposal_for_nu(t)
    mode = (prop.alpha - 1.0) / prop.beta
    assert abs(t.dlogpdf(mode)) < 1e-8
    assert -(prop.alpha - 1.0) / mode**2 == pytest.approx(t.d2logpdf(mode), rel=1e-10)


def test_nu_proposal_falls_back_to_prior_shape():
    # no weights: with theta0 = 1 the target decreases everywhere
    t = NuTarget(0, 0.1, 1.0)
    prop = nu_proposal(t, 0.1)
    assert (prop.alpha, prop.beta) == (1.0, 0.1)


def test_mis_step_nu_targets_truncated_density():
    rng = make_rng(4)
    q = rng.gamma(2.5, 0.4, 50)
    t = NuTarget.from_weights(q, 2.0, 0.1)
    nu, path = 5.0, np.empty(40_000)
    ctr = AcceptanceCounter()
    for k in range(path.size):
        nu = mis_step_nu(nu, q, 2.0, 0.1, rng, ctr)
        path[k] = nu
    assert np.all((path >= NU_LOWER) & (path <= NU_UPPER))
    cdf = grid_cdf(t.logpdf, 0.05, 200.0, 100_001)
    assert stats.kstest(path[::10], cdf).pvalue > 1e-3
    assert ctr.rate > 0.8


def test_acceptance_counter_tallies():
    ctr = AcceptanceCounter()
    assert math.isnan(ctr.rate)
    ctr.update(np.array([True, False, True, True]))
    ctr.update(False)
    assert ctr.rate == pytest.approx(3 / 5)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), sizes=st.sampled_from([(1, 1), (2, 1), (1, 2, 1)]), w=st.floats(0.05, 5.0))
def test_block_terms_reproduce_the_quadratic_form(seed, sizes, w):
    rng = np.random.default_rng(seed)
    p, s = sum(sizes), len(sizes)
    a = rng.standard_normal((p, p))
    prec = a @ a.T + p * np.eye(p)
    resid = rng.standard_normal((5, p))
    q = rng.gamma(2.0, 0.5, (5, s))
    index = np.repeat(np.arange(s), sizes)
    for j in range(s):
        u, c = block_terms(resid, prec, q, sizes, j)

        def quad(weight):
            qq = q.copy()
            qq[:, j] = weight
            z = resid * np.sqrt(qq[:, index])
            return np.einsum("ik,kl,il->i", z, prec, z)

        # the part of the quadratic form that depends on block j's weight
        assert np.allclose(quad(w) - quad(0.0), u * w + 2.0 * c * math.sqrt(w), rtol=1e-10, atol=1e-10)


def test_shared_weight_is_conjugate_gamma():
    rng = make_rng(5)
    resid = np.tile([[1.0, -0.5]], (50_000, 1))
    q = draw_shared_weight(resid, np.eye(2), 6.0, rng)
    ref = stats.gamma(0.5 * 8.0, scale=2.0 / (6.0 + 1.25))
    assert stats.kstest(q, ref.cdf).pvalue > 1e-3


def test_shift_step_size_shrinks_with_weights():
    assert shift_step_size(1) == 1.0
    assert shift_step_size(10_000) == pytest.approx(0.1)


def _collapsed_nu_logpdf(nu, n, u, d, theta0, phi0):
    # weights integrated out: each contributes (nu/2)^(nu/2) Gamma((nu+d)/2) / (Gamma(nu/2) ((nu+u)/2)^((nu+d)/2))
    h = 0.5 * nu
    per = h * np.log(h) + gammaln(h + 0.5 * d) - gammaln(h) - (h + 0.5 * d) * np.log(h + 0.5 * u)
    return n * per + (theta0 - 1.0) * np.log(nu) - phi0 * nu


@pytest.mark.parametrize("u, d", [(0.0, 0), (3.0, 2), (0.4, 1)])
def test_nu_shift_keeps_joint_target(u, d):
    # alternate exact weight draws with the shift; nu must follow its collapsed marginal
    rng = make_rng(6)
    n, theta0, phi0 = 30, 2.0, 0.2
    nu = 8.0
    q = rng.gamma(0.5 * (nu + d), 2.0 / (nu + u), n)
    ctr = AcceptanceCounter()
    path = np.empty(60_000)
    for k in range(path.size):
        q = rng.gamma(0.5 * (nu + d), 2.0 / (nu + u), n)
        nu, q = nu_shift_step(nu, q, u, 0.0, d, theta0, phi0, rng, 0.5, ctr)
        path[k] = nu
    assert 0.2 < ctr.rate < 0.95
    cdf = grid_cdf(lambda v: _collapsed_nu_logpdf(v, n, u, d, theta0, phi0), NU_LOWER, NU_UPPER, 200_001)
    assert stats.kstest(path[::15], cdf).pvalue > 1e-3


def test_nu_shift_rejects_outside_bounds():
    # a degenerate bracket rejects every proposal, so the state must not move
    rng = make_rng(7)
    q = rng.gamma(2.0, 0.5, 10)
    nu, q_new = nu_shift_step(4.0, q, 1.0, 0.5, 1, 1.0, 0.1, rng, 0.5, lower=4.0, upper=4.0)
    assert nu == 4.0 and np.array_equal(q, q_new)


def test_collapsed_oracle_normalises():
    # sanity check of the oracle itself: the per-weight factor integrates the Gamma mixture correctly
    nu, u, d = 5.0, 2.0, 3
    val, _ = integrate.quad(
        lambda w: stats.gamma.pdf(w, nu / 2, scale=2 / nu) * math.exp(-u * w / 2) * w ** (d / 2), 0, np.inf)
    h = nu / 2
    closed = math.exp(h * math.log(h) + gammaln(h + d / 2) - gammaln(h) - (h + d / 2) * math.log(h + u / 2))
    assert val == pytest.approx(closed, rel=1e-8)
