import numpy as np
import pytest
from scipy import stats

from lrsm.correlation import MaternParams, eigenbasis
from lrsm.errors import InvalidArgument
from lrsm.fields import simulate_lrsm
from lrsm.inference import McmcConfig, PosteriorChain, run_mcmc
from lrsm.likelihood import FullGP, LowRank, Taper, Vecchia
from lrsm.correlation import TaperSpec
from lrsm.marginal import h_inv
from lrsm.prediction import (
    PredictiveSamples,
    _Conditioner,
    conditional_simulate,
    holdout_split,
    twcrps_inputs,
)
from lrsm.scoring import LowerTail, mean_twcrps
from lrsm.sites import SiteSet, sample_uniform_sites
from oracles import knn_brute, matern_loop


def fixed_chain(alpha, rho, r, nu=0.5):
    """A two-row chain whose only retained draw is (alpha, rho, r)."""
    r = np.asarray(r, dtype=float)
    return PosteriorChain(np.array([alpha, alpha]), np.array([rho, rho]), np.stack([r, r], axis=1),
                          np.array([0, 1]), {}, np.zeros((0, 3)), nu, 0)


class ZeroNoise:
    def standard_normal(self, shape):
        return np.zeros(shape)


@pytest.fixture(scope="module")
def field():
    s = sample_uniform_sites(60, 31)
    sim = simulate_lrsm(s, MaternParams(0.1, 0.5), 0.4, 8, 2)
    return s, sim


def test_near_coincident_target_reproduces_observation(field):
    s, sim = field
    new = SiteSet(s.coords[[5]] + [1e-6, 0.0])
    pred = conditional_simulate(sim.U, s, new, fixed_chain(0.4, 0.1, sim.R.r), FullGP(s), M=20, seed=1)
    dev = np.abs(pred.values[0] - sim.U.values[5][:, None])
    assert dev.mean() < 0.01


def test_coincident_target_rejected(field):
    s, sim = field
    with pytest.raises(InvalidArgument):
        conditional_simulate(sim.U, s, SiteSet(s.coords[:1]), fixed_chain(0.4, 0.1, sim.R.r), FullGP(s))


def test_independent_field_predicts_uniform_margins():
    # u* is uniform only after integrating over R, so pool many Lévy-scaled replicates
    s = sample_uniform_sites(10, 3)
    sim = simulate_lrsm(s, MaternParams(0.1, 0.5), 0.4, 400, 8)
    new = sample_uniform_sites(3, 99)
    pred = conditional_simulate(sim.U, s, new, fixed_chain(0.4, 1e-6, sim.R.r), FullGP(s), seed=3)
    assert stats.kstest(pred.values.ravel(), "uniform").pvalue > 0.01


def test_unconditional_draws_are_uniform():
    s = sample_uniform_sites(10, 3)
    sim = simulate_lrsm(s, MaternParams(0.1, 0.5), 0.6, 400, 9)
    new = SiteSet([[0.5, 0.5], [0.52, 0.5]])
    for backend in (FullGP(s), Vecchia(s, m=5)):
        pred = conditional_simulate(sim.U, s, new, fixed_chain(0.6, 0.1, sim.R.r), backend, seed=4,
                                    condition=False)
        assert stats.kstest(pred.values[0].ravel(), "uniform").pvalue > 0.01
        assert stats.kstest(pred.values[1].ravel(), "uniform").pvalue > 0.01


def test_full_kriging_mean_matches_dense_oracle(field):
    s, sim = field
    new = sample_uniform_sites(5, 77)
    p = MaternParams(0.1, 0.5)
    z_obs = h_inv(sim.U.values, sim.R.r[None, :], 0.4)
    got = _Conditioner(FullGP(s), new).sample(z_obs, p, ZeroNoise())
    allc = np.vstack([s.coords, new.coords])
    c = matern_loop(allc, 0.1, 0.5)
    c_oo, c_no = c[:60, :60], c[60:, :60]
    np.testing.assert_allclose(got, c_no @ np.linalg.solve(c_oo, z_obs), atol=1e-8)


def test_vecchia_mean_uses_nearest_neighbours(field):
    s, sim = field
    target = np.array([0.37, 0.61])
    p = MaternParams(0.1, 0.5)
    z_obs = h_inv(sim.U.values, sim.R.r[None, :], 0.4)
    for m in (7, s.n - 1):
        got = _Conditioner(Vecchia(s, m=m), SiteSet([target])).sample(z_obs, p, ZeroNoise())
        nb = knn_brute(s.coords, target, m)
        c = matern_loop(np.vstack([s.coords[nb], target]), 0.1, 0.5)
        expect = c[m, :m] @ np.linalg.solve(c[:m, :m], z_obs[nb])
        np.testing.assert_allclose(got[0], expect, atol=1e-8)


def test_taper_and_lowrank_predictions(field):
    s, sim = field
    new = sample_uniform_sites(4, 5)
    ch = fixed_chain(0.4, 0.1, sim.R.r)
    for b in (Taper(s, TaperSpec(0.3)), LowRank(eigenbasis(s, 10))):
        pred = conditional_simulate(sim.U, s, new, ch, b, M=3, seed=0)
        assert pred.values.shape == (4, 8, 3)
        assert np.all((pred.values > 0) & (pred.values < 1))


def test_lowrank_mean_is_basis_regression(field):
    s, sim = field
    new = sample_uniform_sites(3, 8)
    z_obs = h_inv(sim.U.values, sim.R.r[None, :], 0.4)
    basis = eigenbasis(s, 12, nugget_tau2=0.01)
    got = _Conditioner(LowRank(basis), new).sample(z_obs, None, ZeroNoise())
    # E[z_new | z_obs] = B_new B^T (B B^T + tau2 I)^-1 z_obs, computed densely
    expect = basis.extend(new) @ basis.B.T @ np.linalg.solve(basis.covariance(), z_obs)
    np.testing.assert_allclose(got, expect, atol=1e-8)


def test_holdout_calibration_fullgp():
    s = sample_uniform_sites(100, 41)
    sim = simulate_lrsm(s, MaternParams(0.05, 0.5), 0.3, 50, 6)
    train, test = holdout_split(100, 0.25, 0)
    s_tr, s_te = SiteSet(s.coords[train]), SiteSet(s.coords[test])
    u_tr = sim.U.values[train]
    chain = run_mcmc(u_tr, FullGP(s_tr), s_tr, cfg=McmcConfig(n_iter=2000, seed=1, thin_r=20))
    pred = conditional_simulate(u_tr, s_tr, s_te, chain, FullGP(s_tr), M=2, seed=2, max_draws=50)
    lo, hi = np.quantile(pred.values, [0.025, 0.975], axis=2)
    truth = sim.U.values[test]
    cover = np.mean((lo <= truth) & (truth <= hi))
    assert 0.90 <= cover <= 1.0


def test_twcrps_inputs_shapes_and_order_invariance():
    rng = np.random.default_rng(0)
    pred = PredictiveSamples(rng.uniform(size=(5, 3, 100)), np.arange(5))
    truth = rng.uniform(size=(5, 3))
    units = twcrps_inputs(pred, truth)
    assert len(units) == 15 and units.samples.shape == (15, 100)
    assert units.truth[4] == truth[1, 1] and units.site_ids[4] == 1 and units.t[4] == 1
    shuffled = twcrps_inputs(PredictiveSamples(pred.values[:, :, rng.permutation(100)], np.arange(5)), truth)
    w = LowerTail(0.5)
    assert mean_twcrps(units, w) == pytest.approx(mean_twcrps(shuffled, w), rel=1e-12)
    one = twcrps_inputs(PredictiveSamples(np.full((1, 1, 1), 0.4), np.array([7])), np.array([[0.3]]))
    assert len(one) == 1
    with pytest.raises(InvalidArgument):
        twcrps_inputs(pred, truth[:4])


def test_predictive_samples_csv_and_validation(tmp_path):
    vals = np.random.default_rng(1).uniform(size=(2, 3, 4))
    pred = PredictiveSamples(vals, np.array([10, 11]))
    pred.to_csv(tmp_path / "p.csv")
    assert (tmp_path / "p.csv").read_text().splitlines()[0] == "site_id,t,draw,value"
    back = PredictiveSamples.from_csv(tmp_path / "p.csv")
    np.testing.assert_array_equal(back.values, vals)
    np.testing.assert_array_equal(back.site_ids, [10, 11])
    with pytest.raises(InvalidArgument):
        PredictiveSamples(np.full((1, 1, 1), 1.0))
    x = pred.back_transform(lambda u: -np.log1p(-u))
    np.testing.assert_allclose(x, -np.log1p(-vals))


def test_holdout_split():
    tr, te = holdout_split(100, 0.25, 3)
    assert len(te) == 25 and len(tr) == 75
    assert sorted(np.concatenate([tr, te])) == list(range(100))
    np.testing.assert_array_equal(te, holdout_split(100, 0.25, 3)[1])
    with pytest.raises(InvalidArgument):
        holdout_split(2, 0.1, 0)
