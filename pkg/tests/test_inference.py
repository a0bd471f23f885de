import math

import numpy as np
import pytest
from scipy import stats

from lrsm.correlation import MaternParams, covariance_matrix
from lrsm.errors import InvalidArgument
from lrsm.fields import simulate_lrsm
from lrsm.inference import (
    InitializationError,
    McmcConfig,
    McmcState,
    PosteriorChain,
    batch_means_se,
    log_posterior,
    run_mcmc,
    summarize,
    summarize_draws,
    summary_json,
)
from lrsm.likelihood import FullGP, Vecchia, loglik_full
from lrsm.marginal import LEVY_MEDIAN
from lrsm.sites import sample_uniform_sites

from oracles import gaussian_copula_loglik


@pytest.fixture(scope="module")
def small():
    s = sample_uniform_sites(30, 21)
    sim = simulate_lrsm(s, MaternParams(0.1, 0.5), 0.3, 10, 4)
    return s, sim


@pytest.fixture(scope="module")
def short_chain(small):
    s, sim = small
    cfg = McmcConfig(n_iter=3000, seed=3, thin_r=10)
    return run_mcmc(sim.U, FullGP(s), s, cfg=cfg)


def test_zero_iterations_returns_initial_state(small):
    s, sim = small
    ch = run_mcmc(sim.U, FullGP(s), s, cfg=McmcConfig(n_iter=0))
    assert ch.alpha_draws.tolist() == [0.5]
    assert ch.rho_draws.tolist() == [0.25]
    np.testing.assert_allclose(ch.r_draws[:, 0], LEVY_MEDIAN)


def test_bad_initial_state(small):
    s, sim = small
    with pytest.raises(InitializationError):
        run_mcmc(sim.U, FullGP(s), s, cfg=McmcConfig(n_iter=5, init_alpha=1.5))
    with pytest.raises(InvalidArgument):
        run_mcmc(sim.U, FullGP(sample_uniform_sites(5, 0)), cfg=McmcConfig(n_iter=5))


def test_config_validation():
    with pytest.raises(InvalidArgument):
        McmcConfig(n_iter=-1)
    with pytest.raises(InvalidArgument):
        McmcConfig(target_accept=1.0)
    with pytest.raises(InvalidArgument):
        McmcConfig(burn_in=1.0)
    assert McmcConfig(n_iter=1000, burn_in=0.5).n_burn == 500


def test_out_of_support_is_minus_infinity(small):
    s, sim = small
    b = FullGP(s)
    r = np.full(10, 1.0)
    for a, rho in ((1.2, 0.1), (-0.1, 0.1), (0.3, 0.6), (0.3, 0.0)):
        assert log_posterior(McmcState(a, rho, r), sim.U, b) == -math.inf
    assert log_posterior(McmcState(0.3, 0.1, -r), sim.U, b) == -math.inf


def test_log_posterior_differences_are_likelihood_differences(small):
    s, sim = small
    b = FullGP(s)
    st = McmcState(0.35, 0.12, sim.R.r)
    u2 = sim.U.values[:, ::-1].copy()
    d_post = log_posterior(st, sim.U, b) - log_posterior(st, u2, b)
    p = MaternParams(0.12, 0.5)
    d_lik = loglik_full(sim.U, sim.R, 0.35, p, b).loglik - loglik_full(u2, sim.R, 0.35, p, b).loglik
    assert d_post == pytest.approx(d_lik, abs=1e-8)


def test_tiny_alpha_reduces_to_gaussian_copula(small):
    s, sim = small
    p = MaternParams(0.1, 0.5)
    ll = loglik_full(sim.U, sim.R, 1e-8, p, FullGP(s)).loglik
    ref = gaussian_copula_loglik(sim.U.values, covariance_matrix(s, p))
    assert ll == pytest.approx(ref, abs=1e-4)


def test_deterministic_for_fixed_seed(small):
    s, sim = small
    cfg = McmcConfig(n_iter=300, seed=11, thin_r=7)
    a = run_mcmc(sim.U, FullGP(s), s, cfg=cfg)
    b = run_mcmc(sim.U, FullGP(s), s, cfg=cfg)
    np.testing.assert_array_equal(a.alpha_draws, b.alpha_draws)
    np.testing.assert_array_equal(a.rho_draws, b.rho_draws)
    np.testing.assert_array_equal(a.r_draws, b.r_draws)


def test_chain_stays_in_support_and_adapts(short_chain):
    ch = short_chain
    assert np.all((ch.alpha_draws > 0) & (ch.alpha_draws < 1))
    assert np.all((ch.rho_draws > 0) & (ch.rho_draws < 0.5))
    assert np.all(ch.r_draws > 0)
    # one adaptation per batch inside the burn-in, none afterwards
    assert ch.log_sd_history.shape == (1500 // 200, 3)
    for key in ("alpha", "rho", "r"):
        assert 0.2 <= ch.accept_rates[key] <= 0.7, (key, ch.accept_rates)


def test_r_draws_thinned(short_chain):
    ch = short_chain
    assert ch.r_iters[0] == 0 and ch.r_iters[-1] == 3000
    assert np.all(np.diff(ch.r_iters) == 10)
    a, r, R = ch.retained(50)
    assert a.size == r.size == R.shape[1] == 50
    assert R.shape[0] == 10


def test_prior_only_sampler_recovers_uniform_prior(small):
    s, sim = small
    cfg = McmcConfig(n_iter=40_000, seed=2, thin_r=1000)
    ch = run_mcmc(sim.U, FullGP(s), s, cfg=cfg, prior_only=True)
    kept = ch.kept(ch.alpha_draws)[::2]
    assert stats.kstest(kept, "uniform").pvalue > 0.01
    kept_r = ch.kept(ch.rho_draws)[::2]
    assert stats.kstest(kept_r / 0.5, "uniform").pvalue > 0.01


def test_vecchia_backend_runs(small):
    s, sim = small
    ch = run_mcmc(sim.U, Vecchia(s, m=5), s, cfg=McmcConfig(n_iter=200, seed=1))
    assert ch.backend == {"kind": "Vecchia", "m": 5}


def test_batch_means_examples():
    assert batch_means_se(np.full(400, 2.0)) == 0.0
    rng = np.random.default_rng(0)
    N = 10_000
    se = batch_means_se(rng.standard_normal(N))
    assert abs(se - 1 / math.sqrt(N)) < 0.3 / math.sqrt(N)
    e = rng.standard_normal(N)
    x = np.empty(N)
    x[0] = e[0]
    for i in range(1, N):
        x[i] = 0.9 * x[i - 1] + e[i]
    assert batch_means_se(x) > x.std() / math.sqrt(N)
    with pytest.raises(InvalidArgument):
        batch_means_se(np.zeros(99))


def test_summary_examples():
    c = summarize_draws(np.full(200, 0.3))
    assert (c.mean, c.median, c.ci_low, c.ci_high) == (0.3, 0.3, 0.3, 0.3)
    sym = summarize_draws(np.linspace(-1, 1, 1001))
    assert sym.mean == pytest.approx(sym.median, abs=1e-12)
    u = summarize_draws(np.random.default_rng(1).uniform(size=100_000))
    assert abs(u.ci_low - 0.025) < 0.005 and abs(u.ci_high - 0.975) < 0.005
    assert u.covers(0.5) and not u.covers(0.99)


def test_summarize_discards_burn_in():
    a = np.concatenate([[0.5], np.full(100, 0.9), np.full(100, 0.2)])
    ch = PosteriorChain(a, np.full(201, 0.1), np.ones((2, 2)), np.array([0, 200]), {},
                        np.zeros((0, 3)), 0.5, 100)
    assert summarize(ch)["alpha"].median == 0.2


def test_chain_csv_roundtrip(short_chain, tmp_path):
    short_chain.to_csv(tmp_path)
    assert (tmp_path / "chain.csv").read_text().splitlines()[0] == "iter,alpha,rho"
    back = PosteriorChain.from_csv(tmp_path)
    np.testing.assert_array_equal(back.alpha_draws, short_chain.alpha_draws)
    np.testing.assert_array_equal(back.r_draws, short_chain.r_draws)
    np.testing.assert_array_equal(back.r_iters, short_chain.r_iters)
    assert back.n_burn == short_chain.n_burn
    js = summary_json(back)
    assert {"mean", "median", "ci_low", "ci_high", "accept_rates", "bm_se", "walltime_sec"} <= set(js)
