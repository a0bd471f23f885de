"""Matérn correlation, covariance assembly, spherical taper, eigenbasis."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.special import gammaln, kv

from .errors import DegenerateCovariance, InvalidArgument, NumericalError
from .sites import SiteSet, distance_matrix

DEFAULT_NUGGET = 1e-6


@dataclass(frozen=True)
class MaternParams:
    rho: float
    nu: float

    def __post_init__(self):
        if not (self.rho > 0 and np.isfinite(self.rho)):
            raise InvalidArgument(f"rho must be positive, got {self.rho}")
        if not (self.nu > 0 and np.isfinite(self.nu)):
            raise InvalidArgument(f"nu must be positive, got {self.nu}")


@dataclass(frozen=True)
class TaperSpec:
    psi: float

    def __post_init__(self):
        if not self.psi > 0:
            raise InvalidArgument(f"taper range psi must be positive, got {self.psi}")


def matern_bessel(h, p: MaternParams):
    """Matérn correlation through the modified Bessel function K_nu.

    Uses the unscaled argument h/rho. Valid for any nu > 0.
    """
    h = np.asarray(h, dtype=float)
    u = h / p.rho
    out = np.ones_like(u)
    pos = u > 0
    up = u[pos]
    with np.errstate(over="ignore", under="ignore", invalid="ignore"):
        logc = (1.0 - p.nu) * np.log(2.0) - gammaln(p.nu)
        val = np.exp(logc + p.nu * np.log(up)) * kv(p.nu, up)
    # kv underflows to 0 far out, which is the right limit
    out[pos] = np.nan_to_num(val, nan=0.0)
    return out


def matern(h, p: MaternParams):
    """Matérn correlation at distance(s) ``h``.

    Closed forms are used for nu in {0.5, 1.5, 2.5}; other smoothness values go
    through :func:`matern_bessel`.
    """
    h = np.asarray(h, dtype=float)
    if not np.all(np.isfinite(h)):
        raise InvalidArgument("distances must be finite")
    if np.any(h < 0):
        raise InvalidArgument("distances must be non-negative")
    u = h / p.rho
    if p.nu == 0.5:
        out = np.exp(-u)
    elif p.nu == 1.5:
        out = (1.0 + u) * np.exp(-u)
    elif p.nu == 2.5:
        out = (1.0 + u + u * u / 3.0) * np.exp(-u)
    else:
        out = matern_bessel(h, p)
    return out if out.ndim else float(out)


def cholesky(a, backend=None):
    """Lower Cholesky factor; raises DegenerateCovariance naming the failed minor."""
    c, info = sla.lapack.dpotrf(np.asarray(a, dtype=float), lower=1, clean=1)
    if info > 0:
        raise DegenerateCovariance(int(info), backend)
    if info < 0:
        raise NumericalError(f"dpotrf: illegal argument {-info}")
    return c


def covariance_matrix(s: SiteSet, p: MaternParams, d=None) -> np.ndarray:
    """Dense Matérn correlation matrix over ``s`` (pass ``d`` to reuse distances)."""
    if d is None:
        d = distance_matrix(s)
    c = matern(d, p)
    c = np.atleast_2d(c)
    np.fill_diagonal(c, 1.0)
    return c


def spherical_taper(h, t: TaperSpec):
    h = np.asarray(h, dtype=float)
    r = h / t.psi
    out = np.where(r < 1.0, (1.0 - r) ** 2 * (1.0 + 0.5 * r), 0.0)
    return out if out.ndim else float(out)


def tapered_covariance(s: SiteSet, p: MaternParams, t: TaperSpec, d=None) -> sp.csc_matrix:
    """Matérn times spherical taper, stored sparse (zero beyond ``psi``)."""
    if d is None:
        d = distance_matrix(s)
    i, j = np.nonzero(d < t.psi)
    vals = matern(d[i, j], p) * spherical_taper(d[i, j], t)
    vals = np.atleast_1d(vals)
    vals[i == j] = 1.0
    return sp.csc_matrix((vals, (i, j)), shape=d.shape)


def sparsity(a) -> float:
    """Fraction of off-diagonal entries that are exactly zero."""
    n = a.shape[0]
    if n < 2:
        return 0.0
    if sp.issparse(a):
        a = a.toarray()
    off = ~np.eye(n, dtype=bool)
    return float(np.mean(a[off] == 0.0))


def taper_range_for_sparsity(s: SiteSet, target_sparsity: float) -> float:
    """Taper range whose covariance has about ``target_sparsity`` zero off-diagonals.

    When all pairwise distances coincide the achievable sparsity is 0 or 1 only;
    the shared distance is returned and every off-diagonal entry is zero.
    """
    if not 0.0 < target_sparsity < 1.0:
        raise InvalidArgument("target_sparsity must lie in (0, 1)")
    if s.n < 2:
        raise InvalidArgument("need at least two sites to choose a taper range")
    d = distance_matrix(s)
    pairs = np.sort(d[np.triu_indices(s.n, 1)])
    n_pairs = pairs.size
    # psi = pairs[j] zeroes the n_pairs - j pairs with distance >= psi
    j = int(round((1.0 - target_sparsity) * n_pairs))
    if j >= n_pairs:
        return float(np.nextafter(pairs[-1], np.inf))
    return float(pairs[j])


@dataclass(frozen=True)
class BasisExpansion:
    """Row-normalized low-rank basis ``B`` with nugget ``nugget_tau2``.

    ``vectors``/``values`` keep the raw eigenpairs of the reference covariance
    so the basis can be extended to new sites.
    """

    B: np.ndarray
    nugget_tau2: float
    vectors: np.ndarray
    values: np.ndarray
    sites: SiteSet
    reference: MaternParams

    @property
    def k(self) -> int:
        return self.B.shape[1]

    @property
    def n(self) -> int:
        return self.B.shape[0]

    def covariance(self) -> np.ndarray:
        return self.B @ self.B.T + self.nugget_tau2 * np.eye(self.n)

    def extend(self, new: SiteSet) -> np.ndarray:
        """Basis rows at new sites (Nyström extension, then row-normalized)."""
        c = matern(distance_matrix(new, self.sites), self.reference)
        raw = np.atleast_2d(c) @ self.vectors / self.values
        return _row_normalize(raw)


def _row_normalize(a):
    norms = np.linalg.norm(a, axis=1)
    if np.any(norms == 0):
        raise NumericalError("basis row with zero norm cannot be normalized")
    return a / norms[:, None]


def eigenbasis(
    s: SiteSet,
    k: int,
    reference: MaternParams = MaternParams(rho=0.5, nu=0.5),
    nugget_tau2: float = DEFAULT_NUGGET,
) -> BasisExpansion:
    """Leading ``k`` eigenvectors of the reference covariance, rows scaled to unit norm."""
    if not 1 <= k <= s.n:
        raise InvalidArgument(f"rank k must satisfy 1 <= k <= n={s.n}, got {k}")
    if nugget_tau2 < 0:
        raise InvalidArgument("nugget must be non-negative")
    c = covariance_matrix(s, reference)
    try:
        vals, vecs = sla.eigh(c, subset_by_index=[s.n - k, s.n - 1])
    except (np.linalg.LinAlgError, sla.LinAlgError) as exc:
        raise NumericalError(f"eigendecomposition failed: {exc}") from exc
    vals, vecs = vals[::-1], vecs[:, ::-1]
    # fix signs so the basis is reproducible across LAPACK builds
    flip = np.sign(vecs[np.argmax(np.abs(vecs), axis=0), np.arange(k)])
    vecs = vecs * flip
    return BasisExpansion(
        B=_row_normalize(vecs),
        nugget_tau2=float(nugget_tau2),
        vectors=vecs,
        values=vals,
        sites=s,
        reference=reference,
    )
