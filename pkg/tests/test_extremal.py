import math
import warnings

import numpy as np
import pytest
from scipy import stats

from lrsm.correlation import MaternParams
from lrsm.errors import InvalidArgument
from lrsm.extremal import (
    GevParams,
    anderson_darling_gof,
    ad_pvalue,
    empirical_chi,
    gev_cdf,
    gev_fit_mle,
    gev_logpdf,
    gev_quantile,
    gumbel_location_mle,
    max_stability_test,
    pit_to_uniform,
)
from lrsm.fields import simulate_lrsm
from lrsm.marginal import chi_limit
from lrsm.sites import SiteSet, sample_uniform_sites
from oracles import chi_u_exact


def line_sites(n_pairs, h):
    """Pairs of sites exactly h apart, far from every other pair."""
    pts = []
    for k in range(n_pairs):
        x = 10.0 * k
        pts += [[x, 0.0], [x + h, 0.0]]
    return SiteSet(pts)


# ------------------------------------------------------------------ chi


def test_chi_perfect_dependence_is_one():
    rng = np.random.default_rng(0)
    col = rng.uniform(size=200)
    U = np.vstack([col, col])
    est = empirical_chi(U, line_sites(1, 0.1), 0.1, n_boot=50, seed=1)
    np.testing.assert_allclose(est.chi_hat, 1.0)


def test_chi_independence_is_one_minus_u():
    rng = np.random.default_rng(2)
    U = rng.uniform(size=(20, 500))
    est = empirical_chi(U, line_sites(10, 0.1), 0.1, u_grid=[0.5, 0.7, 0.9], n_boot=300, seed=3)
    truth = 1 - est.u_grid
    assert np.all((est.ci_low <= truth) & (truth <= est.ci_high))


def test_chi_rank_invariance():
    rng = np.random.default_rng(4)
    U = rng.uniform(size=(6, 100))
    s = line_sites(3, 0.2)
    a = empirical_chi(U, s, 0.2, n_boot=0)
    b = empirical_chi(np.exp(5 * U) - 2, s, 0.2, n_boot=0)
    np.testing.assert_array_equal(a.chi_hat, b.chi_hat)


def test_chi_errors():
    U = np.random.default_rng(0).uniform(size=(2, 50))
    with pytest.raises(InvalidArgument):
        empirical_chi(U, line_sites(1, 0.1), 0.5)
    with pytest.raises(InvalidArgument):
        empirical_chi(U[:, :10], line_sites(1, 0.1), 0.1)


def test_chi_matches_exact_finite_threshold_value():
    # at u = 0.95 the pair is still well above its limit, so compare with the exact chi_u
    s = line_sites(30, 0.005)
    C = math.exp(-0.05)
    sim = simulate_lrsm(s, MaternParams(0.1, 0.5), 0.7, 2000, 5)
    est = empirical_chi(sim.U, s, 0.005, tol=1e-9, u_grid=[0.95], n_boot=200, seed=6)
    assert abs(est.chi_hat[0] - chi_u_exact(C, 0.7, 0.95)) < 3 * est.se[0]


def test_exact_chi_u_decreases_to_limit():
    C = math.exp(-0.05)
    vals = [chi_u_exact(C, 0.7, u) for u in (0.95, 0.99, 0.999, 0.9999)]
    lim = chi_limit(C, 0.7, n_mc=200_000, seed=7)
    assert np.all(np.diff(vals) < 0)
    assert vals[-1] - lim.chi < 0.01
    assert vals[0] - lim.chi > 10 * lim.se


def test_chi_csv(tmp_path):
    rng = np.random.default_rng(0)
    est = empirical_chi(rng.uniform(size=(2, 40)), line_sites(1, 0.1), 0.1, u_grid=[0.6, 0.8], n_boot=10)
    est.to_csv(tmp_path / "c.csv")
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == "u,chi,lo,hi" and len(lines) == 3


# ------------------------------------------------------------------ GEV


def test_gev_examples():
    assert gev_cdf(5.0, GevParams(5.0, 2.0, 0.0)) == pytest.approx(math.exp(-1))
    p = GevParams(30.0, 2.0, 0.2)
    assert gev_cdf(gev_quantile(0.99, p), p) == pytest.approx(0.99, abs=1e-12)
    for xi in (-0.3, 0.0, 0.25):
        q = GevParams(1.0, 0.5, xi)
        z = gev_quantile(np.linspace(0.001, 0.999, 200), q)
        np.testing.assert_allclose(gev_quantile(gev_cdf(z, q), q), z, atol=1e-10)
    assert gev_logpdf(0.0, GevParams(5.0, 1.0, 0.5)) == -math.inf  # below the lower endpoint


def test_gev_branch_continuity_and_scipy():
    z = np.linspace(-3, 8, 100)
    a = gev_cdf(z, GevParams(0.0, 1.0, 0.0))
    b = gev_cdf(z, GevParams(0.0, 1.0, 1e-8))
    assert np.max(np.abs(a - b)) < 1e-6
    # scipy's genextreme uses c = -xi
    p = GevParams(2.0, 1.5, 0.15)
    np.testing.assert_allclose(gev_logpdf(z, p), stats.genextreme.logpdf(z, -0.15, 2.0, 1.5), atol=1e-10)


def _hessian(f, x, eps=1e-4):
    k = len(x)
    H = np.empty((k, k))
    for i in range(k):
        for j in range(k):
            e_i, e_j = np.eye(k)[i] * eps, np.eye(k)[j] * eps
            H[i, j] = (f(x + e_i + e_j) - f(x + e_i - e_j) - f(x - e_i + e_j) + f(x - e_i - e_j)) / (4 * eps**2)
    return H


def test_gev_fit_recovers_truth():
    y = stats.genextreme.rvs(-0.1, 30.0, 2.0, size=10_000, random_state=8)
    est = gev_fit_mle(y)
    th = np.array([est.mu, est.sigma, est.xi])
    nll = lambda t: -np.sum(gev_logpdf(y, GevParams(t[0], t[1], t[2])))
    se = np.sqrt(np.diag(np.linalg.inv(_hessian(nll, th))))
    assert np.all(np.abs(th - [30.0, 2.0, 0.1]) < 3 * se)


def test_gev_fit_equivariance():
    y = stats.genextreme.rvs(-0.1, 30.0, 2.0, size=500, random_state=9)
    a = gev_fit_mle(y)
    b = gev_fit_mle(y + 7.0)
    c = gev_fit_mle(3.0 * y)
    assert b.mu == pytest.approx(a.mu + 7.0, abs=1e-3)
    assert b.sigma == pytest.approx(a.sigma, abs=1e-3) and b.xi == pytest.approx(a.xi, abs=1e-3)
    assert c.mu == pytest.approx(3 * a.mu, abs=3e-3) and c.sigma == pytest.approx(3 * a.sigma, abs=3e-3)
    assert c.xi == pytest.approx(a.xi, abs=1e-3)


def test_gev_fit_needs_enough_data():
    with pytest.raises(InvalidArgument):
        gev_fit_mle(np.arange(10.0))


def test_pit_to_uniform():
    rng = np.random.default_rng(10)
    truth = [GevParams(10 + i, 1 + 0.1 * i, 0.1) for i in range(4)]
    y = np.vstack([gev_quantile(rng.uniform(size=300), p) for p in truth])
    fits = [gev_fit_mle(row) for row in y]
    U = pit_to_uniform(y, fits).values
    assert stats.kstest(U.ravel(), "uniform").pvalue > 0.01
    for i in range(4):
        order = np.argsort(y[i])
        assert np.all(np.diff(U[i, order]) >= 0)
        np.testing.assert_allclose(gev_quantile(U[i], fits[i]), y[i], atol=1e-8)


# ------------------------------------------------------------- AD GOF


def test_ad_null_calibration():
    ok = 0
    for seed in range(50):
        ok += anderson_darling_gof(np.random.default_rng(seed).uniform(size=10_000)).p_value > 0.01
    assert ok >= 49


def test_ad_misfit_and_contract():
    u = 0.5 + 0.01 * np.random.default_rng(0).standard_normal(500)
    assert anderson_darling_gof(u).p_value < 0.001
    with pytest.raises(InvalidArgument):
        anderson_darling_gof(np.linspace(0.1, 0.9, 7))
    with pytest.warns(RuntimeWarning):
        anderson_darling_gof(np.r_[np.full(5, 0.3), np.linspace(0.1, 0.9, 10)])


def test_ad_pvalue_matches_known_quantiles():
    # asymptotic A^2 critical values: 1.933 (10%), 2.492 (5%), 3.857 (1%)
    assert ad_pvalue(1.933) == pytest.approx(0.10, abs=0.002)
    assert ad_pvalue(2.492) == pytest.approx(0.05, abs=0.002)
    assert ad_pvalue(3.857) == pytest.approx(0.01, abs=0.001)


# ------------------------------------------------------ max stability


def test_gumbel_location_closed_form():
    y = 2.5 + np.random.default_rng(1).gumbel(size=5000)
    mu = gumbel_location_mle(y)
    assert np.sum(np.exp(-(y - mu))) == pytest.approx(y.size, rel=1e-10)
    assert mu == pytest.approx(2.5, abs=0.05)


def _frechet_null(seed, n=10, T=100):
    u = np.random.default_rng(seed).uniform(size=T)
    return np.tile(u, (n, 1))


def test_max_stability_null_mostly_accepted():
    rej = sum(max_stability_test(_frechet_null(s), n_bootstrap=100, seed=s).p_value < 0.05 for s in range(20))
    assert rej <= 4


def test_max_stability_permutation_invariant_and_contract():
    U = _frechet_null(3)
    a = max_stability_test(U, n_bootstrap=50, seed=1)
    b = max_stability_test(U[:, np.random.default_rng(0).permutation(100)], n_bootstrap=50, seed=1)
    assert a.p_value == b.p_value
    with pytest.raises(InvalidArgument):
        max_stability_test(U, n_bootstrap=0)
    with pytest.raises(InvalidArgument):
        max_stability_test(U, site_subset=[0])
    with pytest.raises(InvalidArgument):
        max_stability_test(U[:, :10])


def test_max_stability_rejects_weakly_dependent_lrsm():
    s = sample_uniform_sites(50, 4)
    rej = 0
    for seed in range(10):
        sim = simulate_lrsm(s, MaternParams(0.25, 0.5), 0.05, 100, seed)
        rej += max_stability_test(sim.U, n_bootstrap=200, seed=seed).p_value < 0.05
    assert rej >= 6


def test_max_stability_clamps_boundary_values():
    U = _frechet_null(0)
    U[0, 0] = 1.0
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        res = max_stability_test(U, n_bootstrap=20, seed=0)
    assert any("clamped" in str(x.message) for x in w)
    assert np.isfinite(res.ad_statistic)
