"""Empirical tail dependence, a bootstrap max-stability test and GEV margins."""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.stats import rankdata

from .errors import EstimationError, InvalidArgument
from .fields import ReplicateMatrix, Scale
from .sites import SiteSet, distance_matrix

_XI_EPS = 1e-8


# ------------------------------------------------------------- chi estimates


@dataclass
class ChiEstimate:
    u_grid: np.ndarray
    chi_hat: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    se: np.ndarray
    lag_h: float
    lag_tol: float
    n_pairs: int

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("u,chi,lo,hi\n")
            for row in zip(self.u_grid, self.chi_hat, self.ci_low, self.ci_high):
                fh.write(",".join(repr(float(v)) for v in row) + "\n")


def _pair_index(s: SiteSet, h, tol):
    d = distance_matrix(s)
    i, j = np.nonzero(np.triu(np.abs(d - h) <= tol, k=1))
    return i, j


def _chi_counts(r, i, j, u_grid):
    """Joint and marginal exceedance counts, summed over pairs, per replicate column."""
    ex = r[:, None, :] > u_grid[None, :, None]  # (n, U, T)
    joint = np.sum(ex[i] & ex[j], axis=0)  # (U, T)
    marg = 0.5 * np.sum(ex[i].astype(float) + ex[j], axis=0)
    return joint, marg


def empirical_chi(U, s: SiteSet, h, tol=0.02, u_grid=None, n_boot=200, seed=None,
                  level=0.95) -> ChiEstimate:
    """Pooled estimate of chi_u at lag ``h`` (pairs with |d - h| <= tol).

    Each site is first mapped to its empirical ranks / (T + 1), so the result
    does not depend on the marginal scale. The ratio pools every qualifying
    pair: joint exceedances over marginal exceedances. Bands come from
    resampling replicate columns with replacement.
    """
    x = np.asarray(getattr(U, "values", U), dtype=float)
    n, T = x.shape
    if n != s.n:
        raise InvalidArgument("sites and data disagree on n")
    if T < 20:
        raise InvalidArgument(f"need at least 20 replicates, got {T}")
    i, j = _pair_index(s, h, tol)
    if i.size == 0:
        raise InvalidArgument(f"no site pairs with distance within {tol} of {h}")
    u_grid = np.linspace(0.5, 0.98, 25) if u_grid is None else np.asarray(u_grid, dtype=float)
    if np.any((u_grid <= 0) | (u_grid >= 1)):
        raise InvalidArgument("u_grid must lie inside (0, 1)")
    r = rankdata(x, axis=1) / (T + 1.0)
    joint, marg = _chi_counts(r, i, j, u_grid)

    def ratio(jt, mg):
        num, den = jt.sum(axis=-1), mg.sum(axis=-1)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(den > 0, num / np.where(den > 0, den, 1.0), np.nan)

    chi = ratio(joint, marg)
    if n_boot > 0:
        rng = np.random.default_rng(seed)
        idx = rng.integers(0, T, size=(n_boot, T))
        boot = np.stack([ratio(joint[:, b], marg[:, b]) for b in idx])
        tail = 0.5 * (1.0 - level)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            lo, hi = np.nanquantile(boot, [tail, 1.0 - tail], axis=0)
            se = np.nanstd(boot, axis=0, ddof=1)
        lo, hi = np.minimum(lo, chi), np.maximum(hi, chi)
    else:
        lo = hi = chi.copy()
        se = np.full_like(chi, np.nan)
    return ChiEstimate(u_grid, chi, lo, hi, se, float(h), float(tol), int(i.size))


# ------------------------------------------------------------------ GEV


@dataclass(frozen=True)
class GevParams:
    mu: float
    sigma: float
    xi: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise InvalidArgument(f"GEV scale must be positive, got {self.sigma}")


def _gev_t(z, p: GevParams):
    """Return (y, inside) with y = -log G(z), the reduced variate."""
    w = (np.asarray(z, dtype=float) - p.mu) / p.sigma
    if abs(p.xi) < _XI_EPS:
        return np.exp(-w), np.ones(w.shape, dtype=bool)
    a = 1.0 + p.xi * w
    inside = a > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        y = np.where(inside, np.power(np.where(inside, a, 1.0), -1.0 / p.xi), 0.0)
    return y, inside


def gev_cdf(z, p: GevParams):
    y, inside = _gev_t(z, p)
    w = (np.asarray(z, dtype=float) - p.mu) / p.sigma
    # outside the support the cdf is 0 below (xi > 0) or 1 above (xi < 0)
    out = np.where(inside, np.exp(-y), 0.0 if p.xi > 0 else 1.0)
    if abs(p.xi) >= _XI_EPS:
        out = np.where(~inside & (w * np.sign(p.xi) > 0), 1.0, out)
    return out if out.ndim else float(out)


def gev_quantile(q, p: GevParams):
    q = np.asarray(q, dtype=float)
    if np.any((q <= 0) | (q >= 1)):
        raise InvalidArgument("GEV quantile level must lie in (0, 1)")
    y = -np.log(q)
    if abs(p.xi) < _XI_EPS:
        out = p.mu - p.sigma * np.log(y)
    else:
        out = p.mu + p.sigma * np.expm1(-p.xi * np.log(y)) / p.xi
    return out if out.ndim else float(out)


def gev_logpdf(z, p: GevParams):
    z = np.asarray(z, dtype=float)
    w = (z - p.mu) / p.sigma
    if abs(p.xi) < _XI_EPS:
        out = -math.log(p.sigma) - w - np.exp(-w)
    else:
        a = 1.0 + p.xi * w
        inside = a > 0
        with np.errstate(divide="ignore", invalid="ignore"):
            la = np.log(np.where(inside, a, 1.0))
            out = -math.log(p.sigma) - (1.0 + 1.0 / p.xi) * la - np.exp(-la / p.xi)
        out = np.where(inside, out, -np.inf)
    return out if out.ndim else float(out)


def gev_fit_mle(block_maxima, init: GevParams | None = None) -> GevParams:
    """Maximum likelihood by Nelder-Mead on (mu, log sigma, xi)."""
    y = np.asarray(block_maxima, dtype=float).ravel()
    if y.size < 20:
        raise InvalidArgument(f"GEV fit needs at least 20 maxima, got {y.size}")
    if not np.all(np.isfinite(y)):
        raise InvalidArgument("block maxima must be finite")
    sd = float(np.std(y))
    if sd == 0:
        raise EstimationError("constant block maxima: GEV scale is not identifiable")
    if init is None:
        sig0 = sd * math.sqrt(6.0) / math.pi
        init = GevParams(float(np.mean(y)) - 0.5772 * sig0, sig0, 0.1)
    # work on a standardized copy so the simplex is well scaled
    loc, scl = float(np.mean(y)), sd
    ys = (y - loc) / scl

    def nll(th):
        p = GevParams(th[0], math.exp(th[1]), th[2])
        v = gev_logpdf(ys, p)
        s = float(np.sum(v))
        return -s if np.isfinite(s) else 1e300

    x0 = np.array([(init.mu - loc) / scl, math.log(init.sigma / scl), init.xi])
    if nll(x0) >= 1e300:
        x0[2] = 0.0
    best = None
    for _ in range(3):  # restart from the last simplex optimum
        res = minimize(nll, x0, method="Nelder-Mead",
                       options={"maxiter": 1500, "xatol": 1e-9, "fatol": 1e-10})
        if best is None or res.fun <= best.fun:
            best = res
        if np.allclose(res.x, x0, atol=1e-7):
            break
        x0 = res.x
    th = best.x
    est = GevParams(loc + scl * th[0], scl * math.exp(th[1]), float(th[2]))
    if not best.success:
        raise EstimationError(f"GEV fit did not converge: {best.message}", best=est)
    return est


def fit_sites(block_maxima) -> list[GevParams]:
    x = np.asarray(getattr(block_maxima, "values", block_maxima), dtype=float)
    return [gev_fit_mle(row) for row in x]


def pit_to_uniform(block_maxima, fits) -> ReplicateMatrix:
    x = np.asarray(getattr(block_maxima, "values", block_maxima), dtype=float)
    if len(fits) != x.shape[0]:
        raise InvalidArgument("need one GEV fit per site")
    u = np.vstack([gev_cdf(row, p) for row, p in zip(x, fits)])
    return ReplicateMatrix(np.clip(u, 1e-12, 1.0 - 1e-12), Scale.UNIFORM)


# ------------------------------------------------------- goodness of fit


def _ad_statistic(logF, logS):
    """A^2 from log F and log(1 - F) at the sorted sample."""
    n = logF.size
    i = np.arange(1, n + 1)
    return float(-n - np.sum((2 * i - 1) * (logF + logS[::-1])) / n)


def ad_pvalue(a2) -> float:
    """Upper tail of the asymptotic A^2 law (Marsaglia and Marsaglia, 2004)."""
    z = float(a2)
    if z <= 0:
        return 1.0
    if z < 2.0:
        cdf = math.exp(-1.2337141 / z) / math.sqrt(z) * (
            2.00012 + (0.247105 - (0.0649821 - (0.0347962 - (0.011672 - 0.00168691 * z) * z) * z) * z) * z)
    else:
        cdf = math.exp(-math.exp(1.0776 - (2.30695 - (0.43424 - (0.082433 - (0.008056 - 0.0003146 * z)
                                                                 * z) * z) * z) * z))
    return float(min(1.0, max(0.0, 1.0 - cdf)))


@dataclass(frozen=True)
class GofResult:
    statistic: float
    p_value: float


def anderson_darling_gof(u) -> GofResult:
    """Anderson-Darling test of PIT values against Uniform(0, 1)."""
    u = np.sort(np.asarray(u, dtype=float).ravel())
    if u.size < 8:
        raise InvalidArgument(f"Anderson-Darling needs at least 8 values, got {u.size}")
    if np.any((u < 0) | (u > 1)):
        raise InvalidArgument("PIT values must lie in [0, 1]")
    if np.any(np.diff(u) <= 1e-12):
        warnings.warn("tied PIT values", RuntimeWarning, stacklevel=2)
    u = np.clip(u, 1e-300, 1.0 - 1e-16)
    a2 = _ad_statistic(np.log(u), np.log1p(-u))
    return GofResult(a2, ad_pvalue(a2))


# --------------------------------------------------------- max-stability


@dataclass(frozen=True)
class MaxStabTestResult:
    ad_statistic: float
    p_value: float
    n_bootstrap: int
    gumbel_location_hat: float

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, indent=2)
            fh.write("\n")


def gumbel_location_mle(y) -> float:
    """MLE of mu for Gumbel(mu, 1): solves sum exp(-(y - mu)) = n."""
    y = np.asarray(y, dtype=float)
    m = y.min()
    return float(m + math.log(y.size) - math.log(np.sum(np.exp(-(y - m)))))


def gumbel_ad(y, mu) -> float:
    e = np.exp(-(np.sort(y) - mu))
    return _ad_statistic(-e, np.log(-np.expm1(-e)))


def max_stability_statistics(U, site_subset=None):
    """Per-replicate max over the subset of log unit-Fréchet values."""
    x = np.asarray(getattr(U, "values", U), dtype=float)
    if site_subset is not None:
        x = x[np.asarray(site_subset)]
    if np.any(x >= 1.0) or np.any(x <= 0.0):
        warnings.warn("uniform values at 0 or 1 clamped", RuntimeWarning, stacklevel=2)
        x = np.clip(x, 1e-300, np.nextafter(1.0, 0.0))
    # log of x_F = -1/log u
    return np.max(-np.log(-np.log(x)), axis=0)


def max_stability_test(U, site_subset=None, n_bootstrap=200, seed=None) -> MaxStabTestResult:
    """Bootstrap test that site-wise maxima over a subset are max-stable.

    Under max-stability with unit Fréchet margins the per-replicate statistic
    max_d log X(s_d) is Gumbel with unit scale. The location is fitted by
    maximum likelihood and the fit is judged by the Anderson-Darling distance.
    The null law of that distance (with the location re-estimated) is obtained
    by parametric bootstrap from the fitted Gumbel.
    """
    if n_bootstrap < 1:
        raise InvalidArgument("n_bootstrap must be >= 1")
    x = np.asarray(getattr(U, "values", U), dtype=float)
    idx = np.arange(x.shape[0]) if site_subset is None else np.asarray(site_subset)
    if idx.size < 2:
        raise InvalidArgument("max-stability test needs at least two sites")
    if x.shape[1] < 20:
        raise InvalidArgument("max-stability test needs at least 20 replicates")
    y = max_stability_statistics(x, idx)
    mu = gumbel_location_mle(y)
    a2 = gumbel_ad(y, mu)
    rng = np.random.default_rng(seed)
    T = y.size
    boot = np.empty(n_bootstrap)
    for b in range(n_bootstrap):
        yb = mu + rng.gumbel(size=T)
        boot[b] = gumbel_ad(yb, gumbel_location_mle(yb))
    return MaxStabTestResult(a2, float(np.mean(boot >= a2)), int(n_bootstrap), mu)
