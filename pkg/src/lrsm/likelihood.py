"""Copula log-likelihood of uniform-scale replicates under four Gaussian backends.

log f_U(u | R, alpha, theta) = sum_t [ log f_Z(z_t; theta) + sum_i log dz_ti/du_ti ],
with z_t = h^{-1}(u_t; R_t, alpha). Only the Gaussian term depends on the
backend; the transform depends on alpha (through F_X^{-1} and f_X) and R_t.
"""

from __future__ import annotations

import math
import warnings
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .correlation import (
    BasisExpansion,
    MaternParams,
    TaperSpec,
    cholesky,
    covariance_matrix,
    matern,
    spherical_taper,
)
from .errors import DegenerateCovariance, InvalidArgument
from .marginal import (
    DEFAULT_QUAD,
    MarginalTable,
    QuadratureConfig,
    _check_alpha,
    _log_jacobian_from_logx,
    _z_from_logx,
)
from .sites import SiteSet, VecchiaPlan, build_vecchia_plan, distance_matrix

_LOG_2PI = math.log(2.0 * math.pi)
U_CLAMP = 1e-12


def clamp_uniform(u):
    """Clamp into [1e-12, 1 - 1e-12]; returns the clamped copy and how many moved."""
    u = np.asarray(u, dtype=float)
    out = np.clip(u, U_CLAMP, 1.0 - U_CLAMP)
    moved = int(np.count_nonzero(out != u))
    if moved:
        warnings.warn(f"{moved} uniform value(s) clamped away from 0/1", RuntimeWarning, stacklevel=2)
    return out, moved


# ------------------------------------------------------------- transforms


@dataclass
class MarginalState:
    """alpha-level part of the transform: log F_X^{-1}(u) and log f_X at it."""

    alpha: float
    logx: np.ndarray
    log_fx: np.ndarray


def marginal_state(u, alpha, q: QuadratureConfig = DEFAULT_QUAD, table: MarginalTable | None = None,
                   dt=0.05) -> MarginalState:
    alpha = _check_alpha(alpha)
    u = np.asarray(u, dtype=float)
    if np.any((u <= 0) | (u >= 1)):
        raise InvalidArgument("uniform values must lie strictly inside (0, 1); clamp first")
    if table is None:
        table = MarginalTable(alpha, u_min=float(u.min()), u_max=float(u.max()), dt=dt, q=q)
    t = table.log_quantile(u)
    return MarginalState(alpha, t, table.logpdf_at_log(t))


def latent_from_state(ms: MarginalState, R):
    """z and per-entry log|dz/du| given the scales R (broadcast over columns)."""
    R = np.asarray(R, dtype=float)
    if np.any(R <= 0):
        raise InvalidArgument("Lévy scale R must be positive")
    ls = ms.alpha * np.log(R)
    z = _z_from_logx(ms.logx, ls)
    lj = _log_jacobian_from_logx(ms.logx, ls, ms.log_fx, z)
    return z, lj


def transform_replicate(u_t, R_t, alpha, q: QuadratureConfig = DEFAULT_QUAD, table=None):
    """Return (z_t, sum_i log dz/du) for one replicate column."""
    u_t = np.atleast_1d(np.asarray(u_t, dtype=float))
    if np.any((u_t <= 0) | (u_t >= 1)):
        raise InvalidArgument("u must lie strictly inside (0, 1)")
    if R_t <= 0:
        raise InvalidArgument("R_t must be positive")
    ms = marginal_state(u_t, alpha, q, table)
    z, lj = latent_from_state(ms, R_t)
    return z, float(lj.sum())


# --------------------------------------------------------------- backends


class _Backend:
    kind = "?"
    theta_free = False  # True when the Gaussian part ignores (rho, nu)

    def __init__(self, s: SiteSet):
        self.s = s
        self._cache = OrderedDict()

    @property
    def n(self):
        return self.s.n

    def factor(self, p: MaternParams):
        key = (float(p.rho), float(p.nu)) if not self.theta_free else None
        hit = self._cache.get(key)
        if hit is not None:
            self._cache.move_to_end(key)
            return hit
        f = self._build(p)
        self._cache[key] = f
        if len(self._cache) > 4:
            self._cache.popitem(last=False)
        return f

    def _build(self, p):
        raise NotImplementedError

    def logdensity(self, z, p: MaternParams):
        """Gaussian log-density of each column of ``z`` (shape (n,) or (n, T))."""
        z = np.asarray(z, dtype=float)
        single = z.ndim == 1
        zz = z[:, None] if single else z
        if zz.shape[0] != self.n:
            raise InvalidArgument(f"{self.kind}: expected {self.n} rows, got {zz.shape[0]}")
        out = self._logdensity(zz, self.factor(p))
        return float(out[0]) if single else out

    def label(self):
        return self.kind

    def describe(self) -> dict:
        return {"kind": self.kind}


class FullGP(_Backend):
    kind = "FullGP"

    def __init__(self, s):
        super().__init__(s)
        self._d = distance_matrix(s)

    def covariance(self, p):
        return covariance_matrix(self.s, p, d=self._d)

    def _build(self, p):
        L = cholesky(self.covariance(p), backend=self.kind)
        return L, 2.0 * np.sum(np.log(np.diag(L)))

    def _logdensity(self, z, fac):
        L, logdet = fac
        y = sla.solve_triangular(L, z, lower=True, check_finite=False)
        return -0.5 * (np.sum(y * y, axis=0) + logdet + self.n * _LOG_2PI)


class Taper(FullGP):
    """Matérn times spherical taper. Factorized dense; the zero pattern is exact."""

    kind = "Taper"

    def __init__(self, s, spec: TaperSpec):
        super().__init__(s)
        self.spec = spec
        self._t = spherical_taper(self._d, spec)

    def covariance(self, p):
        c = matern(self._d, p) * self._t
        np.fill_diagonal(c, 1.0)
        return c

    def label(self):
        return f"Taper(psi={self.spec.psi:.4g})"

    def describe(self):
        return {"kind": self.kind, "psi": self.spec.psi}


class Vecchia(_Backend):
    """Vecchia product of conditionals under a max-min ordering."""

    kind = "Vecchia"

    def __init__(self, s, plan: VecchiaPlan | None = None, m: int | None = None):
        super().__init__(s)
        if plan is None:
            if m is None:
                raise InvalidArgument("Vecchia needs a plan or a conditioning size m")
            plan = build_vecchia_plan(s, m)
        if plan.n != s.n:
            raise InvalidArgument("Vecchia plan does not match the site set")
        self.plan = plan
        self.order = plan.ordering
        xy = s.coords[self.order]
        nb = plan.padded()  # positions in ordered coordinates, -1 = empty
        self._mask = nb >= 0
        nbi = np.where(self._mask, nb, 0)
        self._nb = nbi
        nxy = xy[nbi]  # (n, w, 2)
        self._d_nn = np.linalg.norm(nxy[:, :, None, :] - nxy[:, None, :, :], axis=-1)
        self._d_ni = np.linalg.norm(nxy - xy[:, None, :], axis=-1)
        pair = self._mask[:, :, None] & self._mask[:, None, :]
        self._pair = pair
        w = nb.shape[1]
        self._eye = np.broadcast_to(np.eye(w, dtype=bool), pair.shape)

    def _build(self, p):
        c_nn = np.where(self._pair, matern(self._d_nn, p), 0.0)
        c_nn[self._eye] = 1.0  # unit diagonal, also for padded slots
        c_ni = np.where(self._mask, matern(self._d_ni, p), 0.0)
        try:
            chol = np.linalg.cholesky(c_nn)
        except np.linalg.LinAlgError as exc:
            raise DegenerateCovariance(0, self.kind) from exc
        y = np.linalg.solve(chol, c_ni[..., None])
        b = np.linalg.solve(np.swapaxes(chol, -1, -2), y)[..., 0]
        var = 1.0 - np.sum(y[..., 0] ** 2, axis=1)
        if np.any(var <= 0):
            bad = int(np.flatnonzero(var <= 0)[0]) + 1
            raise DegenerateCovariance(bad, self.kind)
        return b, var

    def _logdensity(self, z, fac):
        b, var = fac
        zo = z[self.order]  # (n, T) in ordered coordinates
        mean = np.einsum("iw,iwt->it", b, zo[self._nb])
        e = zo - mean
        return -0.5 * (np.sum(e * e / var[:, None], axis=0) + np.sum(np.log(var)) + self.n * _LOG_2PI)

    def label(self):
        return f"Vecchia(m={self.plan.m})"

    def describe(self):
        return {"kind": self.kind, "m": self.plan.m}


class LowRank(_Backend):
    """Covariance B B^T + tau^2 I with a fixed basis; cost O(n k^2) per replicate set."""

    kind = "LowRank"
    theta_free = True

    def __init__(self, basis: BasisExpansion):
        super().__init__(basis.sites)
        self.basis = basis

    def _build(self, p):
        B, tau2 = self.basis.B, self.basis.nugget_tau2
        n, k = B.shape
        if tau2 <= 0 and k < n:
            raise DegenerateCovariance(k + 1, self.kind)
        M = B.T @ B + tau2 * np.eye(k)
        Lm = cholesky(M, backend=self.kind)
        # matrix determinant lemma
        logdet = (n - k) * math.log(tau2) if n > k else 0.0
        logdet += 2.0 * np.sum(np.log(np.diag(Lm)))
        return Lm, logdet

    def _logdensity(self, z, fac):
        Lm, logdet = fac
        B, tau2 = self.basis.B, self.basis.nugget_tau2
        delta = sla.cho_solve((Lm, True), B.T @ z, check_finite=False)
        resid = z - B @ delta
        # ridge identity: z'(BB'+t2 I)^-1 z = (|z - B d|^2 + t2 |d|^2) / t2
        quad = (np.sum(resid * resid, axis=0) + tau2 * np.sum(delta * delta, axis=0)) / tau2
        return -0.5 * (quad + logdet + self.n * _LOG_2PI)

    def label(self):
        return f"LowRank(k={self.basis.k})"

    def describe(self):
        return {"kind": self.kind, "k": self.basis.k, "tau2": self.basis.nugget_tau2}


LikelihoodBackend = _Backend


def gaussian_logdensity(z_t, backend: LikelihoodBackend, s: SiteSet | None = None,
                        p: MaternParams | None = None):
    if s is not None and s.n != backend.n:
        raise InvalidArgument("backend and site set disagree on n")
    if p is None and not backend.theta_free:
        raise InvalidArgument(f"{backend.kind} needs Matérn parameters")
    return backend.logdensity(z_t, p)


@dataclass(frozen=True)
class LogLikResult:
    loglik: float
    gaussian_part: float
    jacobian_part: float


def loglik_full(U, R, alpha, p: MaternParams | None, backend: LikelihoodBackend,
                q: QuadratureConfig = DEFAULT_QUAD, table=None) -> LogLikResult:
    """Conditional log-density of all replicates given (R, alpha, theta)."""
    u = getattr(U, "values", U)
    r = getattr(R, "r", R)
    u = np.asarray(u, dtype=float)
    r = np.atleast_1d(np.asarray(r, dtype=float))
    if u.ndim == 1:
        u = u[:, None]
    if u.shape[1] != r.size:
        raise InvalidArgument(f"U has {u.shape[1]} replicates but R has {r.size}")
    u, _ = clamp_uniform(u)
    ms = marginal_state(u, alpha, q, table)
    z, lj = latent_from_state(ms, r[None, :])
    gp = backend.logdensity(z, p)
    g = float(np.sum(gp))
    j = float(np.sum(lj))
    return LogLikResult(g + j, g, j)
