"""Posterior-predictive conditional simulation at held-out sites.

Given one posterior draw (alpha, rho, R_1..R_T) the latent field is Gaussian,
so prediction maps observed u to z, draws z at the targets from the Gaussian
conditional implied by the backend, and maps back with h.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla

from .correlation import MaternParams, matern, spherical_taper
from .errors import DataError, InvalidArgument, NumericalError
from .fields import ReplicateMatrix
from .inference import PosteriorChain
from .likelihood import FullGP, LikelihoodBackend, LowRank, Taper, Vecchia, clamp_uniform
from .marginal import MarginalTable, _z_from_logx, h
from .sites import SiteSet, distance_matrix, knn_to_targets

_JITTER = 1e-10


@dataclass
class PredictiveSamples:
    """``values[j, t, d]``: draw d at target j and replicate t, on the uniform scale."""

    values: np.ndarray
    site_ids: np.ndarray = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 3 or self.values.shape[2] < 1:
            raise InvalidArgument("predictive samples must be (targets, T, draws) with draws >= 1")
        if not np.all((self.values > 0) & (self.values < 1)):
            raise InvalidArgument("predictive samples must lie strictly inside (0, 1)")
        if self.site_ids is None:
            self.site_ids = np.arange(self.values.shape[0])
        self.site_ids = np.asarray(self.site_ids, dtype=int)

    @property
    def n_targets(self):
        return self.values.shape[0]

    @property
    def T(self):
        return self.values.shape[1]

    @property
    def n_draws(self):
        return self.values.shape[2]

    def back_transform(self, quantile_fn):
        """Apply a marginal quantile function (for instance a GEV quantile) to every draw."""
        return quantile_fn(self.values)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["site_id", "t", "draw", "value"])
            for j, sid in enumerate(self.site_ids):
                for t in range(self.T):
                    for d in range(self.n_draws):
                        w.writerow([int(sid), t, d, repr(float(self.values[j, t, d]))])

    @classmethod
    def from_csv(cls, path) -> "PredictiveSamples":
        a = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        sids, sj = np.unique(a[:, 0].astype(int), return_inverse=True)
        T = int(a[:, 1].max()) + 1
        D = int(a[:, 2].max()) + 1
        vals = np.full((sids.size, T, D), np.nan)
        vals[sj, a[:, 1].astype(int), a[:, 2].astype(int)] = a[:, 3]
        if np.any(np.isnan(vals)):
            raise DataError(f"{path}: missing (site, t, draw) entries")
        return cls(vals, sids)


def _psd_factor(cov, what):
    """Lower factor of a conditional covariance; tiny negative eigenvalues are rounding."""
    n = cov.shape[0]
    if n == 0:
        return cov
    cov = 0.5 * (cov + cov.T)
    scale = max(1.0, float(np.max(np.abs(np.diag(cov)))))
    try:
        return np.linalg.cholesky(cov + _JITTER * scale * np.eye(n))
    except np.linalg.LinAlgError:
        pass
    w, v = np.linalg.eigh(cov)
    if w.min() < -1e-8 * scale:
        raise NumericalError(f"{what}: conditional covariance is not positive semidefinite "
                             f"(min eigenvalue {w.min():.3e})")
    return v * np.sqrt(np.clip(w, 0.0, None))


class _Conditioner:
    """Gaussian conditional of z at targets given z at observed sites, per backend."""

    def __init__(self, backend: LikelihoodBackend, s_new: SiteSet):
        self.backend = backend
        self.s_new = s_new
        s_obs = backend.s
        if isinstance(backend, FullGP):  # FullGP and Taper
            self.d_oo = distance_matrix(s_obs)
            self.d_no = distance_matrix(s_new, s_obs)
            self.d_nn = distance_matrix(s_new)
        elif isinstance(backend, Vecchia):
            m = min(backend.plan.m, s_obs.n)
            self.nbrs = knn_to_targets(s_obs, s_new, m)
            self.d_no = distance_matrix(s_new, s_obs)
            self.d_oo = distance_matrix(s_obs)
        elif isinstance(backend, LowRank):
            self.B_new = backend.basis.extend(s_new)
        else:
            raise InvalidArgument(f"no prediction rule for backend {backend.kind}")

    def _cov(self, d, p):
        c = matern(d, p)
        if isinstance(self.backend, Taper):
            c = c * spherical_taper(d, self.backend.spec)
        return np.atleast_2d(c)

    def sample(self, z_obs, p: MaternParams, rng):
        """Return one conditional draw of z at the targets for each column of z_obs."""
        T = z_obs.shape[1]
        n_new = self.s_new.n
        b = self.backend
        if isinstance(b, FullGP):
            c_oo = self._cov(self.d_oo, p)
            np.fill_diagonal(c_oo, 1.0)
            c_no = self._cov(self.d_no, p)
            c_nn = self._cov(self.d_nn, p)
            np.fill_diagonal(c_nn, 1.0)
            L = b.factor(p)[0]
            a = sla.solve_triangular(L, c_no.T, lower=True, check_finite=False)
            w = sla.solve_triangular(L, z_obs, lower=True, check_finite=False)
            mean = a.T @ w
            chol = _psd_factor(c_nn - a.T @ a, b.kind)
            return mean + chol @ rng.standard_normal((n_new, T))
        if isinstance(b, Vecchia):
            out = np.empty((n_new, T))
            eps = rng.standard_normal((n_new, T))
            for j in range(n_new):
                nb = self.nbrs[j]
                c_oo = matern(self.d_oo[np.ix_(nb, nb)], p)
                c_oo = np.atleast_2d(c_oo)
                np.fill_diagonal(c_oo, 1.0)
                c_no = np.atleast_1d(matern(self.d_no[j, nb], p))
                L = np.linalg.cholesky(c_oo)
                a = sla.solve_triangular(L, c_no, lower=True)
                mean = a @ sla.solve_triangular(L, z_obs[nb], lower=True)
                var = 1.0 - a @ a
                if var < -1e-8:
                    raise NumericalError(f"{b.kind}: negative conditional variance {var:.3e}")
                out[j] = mean + np.sqrt(max(var, 0.0)) * eps[j]
            return out
        # LowRank: draw the basis coefficients given z_obs, then the target nugget
        B, tau2 = b.basis.B, b.basis.nugget_tau2
        Lm = b.factor(p)[0]  # chol(B'B + tau2 I)
        mean_d = sla.cho_solve((Lm, True), B.T @ z_obs, check_finite=False)
        # coefficient covariance tau2 (B'B + tau2 I)^-1 = (G G^T) with G = sqrt(tau2) Lm^-T
        k = B.shape[1]
        e = rng.standard_normal((k, T))
        delta = mean_d + np.sqrt(tau2) * sla.solve_triangular(Lm.T, e, lower=False, check_finite=False)
        nug = np.sqrt(tau2) * rng.standard_normal((n_new, T))
        return self.B_new @ delta + nug

    def sample_unconditional(self, p, T, rng):
        b = self.backend
        n_new = self.s_new.n
        if isinstance(b, FullGP):
            c_nn = self._cov(self.d_nn, p)
            np.fill_diagonal(c_nn, 1.0)
            return _psd_factor(c_nn, b.kind) @ rng.standard_normal((n_new, T))
        if isinstance(b, Vecchia):
            return rng.standard_normal((n_new, T))
        B, tau2 = self.B_new, b.basis.nugget_tau2
        return B @ rng.standard_normal((B.shape[1], T)) + np.sqrt(tau2) * rng.standard_normal((n_new, T))


def conditional_simulate(U_obs, s_obs: SiteSet, s_new: SiteSet, chain: PosteriorChain,
                         backend: LikelihoodBackend, nu=None, M: int = 1, seed=None,
                         max_draws: int = 500, condition: bool = True,
                         site_ids=None) -> PredictiveSamples:
    """Posterior-predictive uniform-scale draws at ``s_new``.

    For each retained posterior draw, ``M`` conditional draws are made per
    replicate. With ``condition=False`` the observed data are ignored, which
    gives the unconditional (marginal) predictive law.
    """
    if M < 1:
        raise InvalidArgument("M must be >= 1")
    u = np.asarray(getattr(U_obs, "values", U_obs), dtype=float)
    if u.ndim == 1:
        u = u[:, None]
    if u.shape[0] != s_obs.n or backend.n != s_obs.n:
        raise InvalidArgument("observed data, sites and backend disagree on n")
    if np.any(distance_matrix(s_new, s_obs) == 0.0):
        raise InvalidArgument("target sites must differ from observed sites")
    nu = chain.nu if nu is None else float(nu)
    alphas, rhos, rs = chain.retained(max_draws)
    if alphas.size == 0:
        raise InvalidArgument("posterior chain is empty")
    if rs.shape[0] != u.shape[1]:
        raise InvalidArgument(f"chain has {rs.shape[0]} replicates, data has {u.shape[1]}")
    u, _ = clamp_uniform(u)
    T = u.shape[1]
    cond = _Conditioner(backend, s_new)
    rng = np.random.default_rng(seed)
    out = np.empty((s_new.n, T, alphas.size * M))
    lo, hi = float(u.min()), float(u.max())
    for d, (a, rho) in enumerate(zip(alphas, rhos)):
        p = MaternParams(float(rho), nu)
        r = rs[:, d]
        if condition:
            t = MarginalTable(a, lo, hi).log_quantile(u)
            z_obs = _z_from_logx(t, a * np.log(r)[None, :])
        for k in range(M):
            zs = cond.sample(z_obs, p, rng) if condition else cond.sample_unconditional(p, T, rng)
            us = h(zs, r[None, :], a)
            out[:, :, d * M + k] = np.clip(us, 1e-12, 1.0 - 1e-12)
    meta = {"backend": backend.describe(), "nu": nu, "M": M, "n_posterior": int(alphas.size)}
    return PredictiveSamples(out, site_ids, meta)


@dataclass
class ScoringUnits:
    """Predictive sample sets paired with realized values, one row per (site, t)."""

    samples: np.ndarray  # (units, draws)
    truth: np.ndarray  # (units,)
    site_ids: np.ndarray
    t: np.ndarray

    def __len__(self):
        return self.truth.size


def twcrps_inputs(pred: PredictiveSamples, truth) -> ScoringUnits:
    truth = np.asarray(getattr(truth, "values", truth), dtype=float)
    if truth.ndim == 1:
        truth = truth[:, None]
    if truth.shape != pred.values.shape[:2]:
        raise InvalidArgument(f"truth has shape {truth.shape}, predictions {pred.values.shape[:2]}")
    nj, T, D = pred.values.shape
    jj, tt = np.meshgrid(np.arange(nj), np.arange(T), indexing="ij")
    return ScoringUnits(
        samples=pred.values.reshape(nj * T, D),
        truth=truth.reshape(-1),
        site_ids=pred.site_ids[jj.reshape(-1)],
        t=tt.reshape(-1),
    )


def holdout_split(n: int, fraction: float, seed) -> tuple[np.ndarray, np.ndarray]:
    """Random (train, test) site indices with round(fraction * n) held out."""
    if not 0.0 < fraction < 1.0:
        raise InvalidArgument("holdout fraction must lie in (0, 1)")
    n_test = int(round(fraction * n))
    if n_test < 1 or n_test >= n:
        raise InvalidArgument(f"holdout of {fraction} leaves an empty split for n={n}")
    perm = np.random.default_rng(seed).permutation(n)
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])


def as_truth(U: ReplicateMatrix, idx):
    return np.asarray(U.values)[np.asarray(idx)]
