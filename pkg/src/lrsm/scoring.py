"""Coverage, interval score and tail-weighted CRPS."""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import ndtr

from .errors import InvalidArgument


def empirical_coverage(intervals, truth) -> float:
    """Fraction of intervals [l, u] containing the truth (scalar or one per interval)."""
    iv = np.atleast_2d(np.asarray(intervals, dtype=float))
    if iv.size == 0:
        raise InvalidArgument("no intervals given")
    if iv.shape[1] != 2:
        raise InvalidArgument("intervals must be (l, u) pairs")
    lo, hi = iv[:, 0], iv[:, 1]
    if np.any(lo > hi):
        raise InvalidArgument("interval with l > u")
    th = np.broadcast_to(np.asarray(truth, dtype=float), lo.shape)
    return float(np.mean((lo <= th) & (th <= hi)))


def interval_score(lo, hi, truth, alpha_star=0.05):
    """Width plus 2/alpha* times the distance by which the truth falls outside."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    th = np.asarray(truth, dtype=float)
    if np.any(lo > hi):
        raise InvalidArgument("interval with l > u")
    if not 0.0 < alpha_star < 1.0:
        raise InvalidArgument("alpha_star must lie in (0, 1)")
    k = 2.0 / alpha_star
    out = (hi - lo) + k * np.maximum(lo - th, 0.0) + k * np.maximum(th - hi, 0.0)
    return out if out.ndim else float(out)


def mean_interval_score(lo, hi, truth, alpha_star=0.05) -> float:
    """Reported average: (alpha*/2) * mean interval score."""
    return float(0.5 * alpha_star * np.mean(interval_score(lo, hi, truth, alpha_star)))


# ------------------------------------------------------------------ twCRPS


@dataclass(frozen=True)
class LowerTail:
    """w(z) = 1{z <= a}."""

    a: float

    def __call__(self, z):
        return (np.asarray(z) <= self.a).astype(float)

    def cuts(self):
        return [self.a]


@dataclass(frozen=True)
class GaussianCdf:
    """w(z) = Phi((z - mu) / sigma)."""

    mu: float
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise InvalidArgument("weight sigma must be positive")

    def __call__(self, z):
        return ndtr((np.asarray(z) - self.mu) / self.sigma)

    def cuts(self):
        return []


@dataclass(frozen=True)
class UpperTail:
    """w(z) = 1{z >= a}."""

    a: float

    def __call__(self, z):
        return (np.asarray(z) >= self.a).astype(float)

    def cuts(self):
        return [self.a]


@dataclass(frozen=True)
class Unweighted:
    def __call__(self, z):
        return np.ones(np.shape(z))

    def cuts(self):
        return []


def twcrps(samples, truth, weight, n_nodes=1000) -> float:
    """Weighted CRPS of the empirical predictive law of ``samples``.

    The integrand w(z) (F(z) - 1{z >= y})^2 is integrated by the trapezoid
    rule over [min - 3 range, max + 3 range] of samples and truth. The grid
    holds at least ``n_nodes`` points plus every sample, the truth and the
    weight's cut points, so with an indicator (or no) weight the piecewise
    constant integrand is integrated exactly.
    """
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    if x.size < 2:
        raise InvalidArgument("twCRPS needs at least 2 samples")
    y = float(truth)
    lo = min(x[0], y)
    hi = max(x[-1], y)
    span = hi - lo
    if span == 0:
        return 0.0
    a, b = lo - 3.0 * span, hi + 3.0 * span
    cuts = [c for c in weight.cuts() if np.isfinite(c)]
    for c in cuts:
        if not a <= c <= b:
            warnings.warn(f"weight cut point {c} lies outside the integration grid", RuntimeWarning,
                          stacklevel=2)
    knots = np.unique(np.concatenate([np.linspace(a, b, n_nodes), x, [y],
                                      [c for c in cuts if a <= c <= b]]))
    # on each cell [k_i, k_{i+1}) F and the step are constant; evaluate at the left end
    left, right = knots[:-1], knots[1:]
    F = np.searchsorted(x, left, side="right") / x.size
    H = (left >= y).astype(float)
    g = (F - H) ** 2
    if isinstance(weight, (LowerTail, UpperTail, Unweighted)):
        mid = 0.5 * (left + right)
        return float(np.sum(g * weight(mid) * (right - left)))
    # smooth weight: trapezoid on w within each constant cell
    return float(np.sum(g * 0.5 * (weight(left) + weight(right)) * (right - left)))


def crps_sample(samples, truth) -> float:
    """Standard sample CRPS: mean|X - y| - 0.5 mean|X - X'|."""
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    n = x.size
    i = np.arange(1, n + 1)
    pair = 2.0 * np.sum((2 * i - n - 1) * x) / (n * n)  # mean |X - X'|
    return float(np.mean(np.abs(x - truth)) - 0.5 * pair)


def _mean_quiet(pairs):
    """Mean score over (samples, truth, weight) triples, with one summary warning."""
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", RuntimeWarning)
        vals = [twcrps(s, y, w) for s, y, w in pairs]
    if caught:
        warnings.warn(f"{len(caught)} of {len(vals)} units had a weight cut point outside "
                      "their integration grid", RuntimeWarning, stacklevel=3)
    return float(np.mean(vals))


def mean_twcrps(units, weight) -> float:
    """Average twCRPS over scored units (``samples`` (k, D), ``truth`` (k,))."""
    return _mean_quiet((s, y, weight) for s, y in zip(units.samples, units.truth))


def mean_twcrps_upper(units) -> float:
    """Upper-tail score with the cut at each unit's predictive 80th percentile."""
    return _mean_quiet((s, y, UpperTail(float(np.quantile(s, 0.8))))
                       for s, y in zip(units.samples, units.truth))


@dataclass
class ScoreReport:
    coverage_alpha: float
    coverage_rho: float
    interval_score_alpha: float
    interval_score_rho: float
    twcrps_1: float
    twcrps_2: float
    twcrps_3: float
    walltime_sec: float

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, indent=2)
            fh.write("\n")

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls(**json.load(fh))


COLUMNS = ["Cov a", "Cov Range", "IS a", "IS Range", "twCRPS 1", "twCRPS 2", "twCRPS 3", "Walltime (min)"]


def format_table(rows, title=None) -> str:
    """Aligned plain-text table; ``rows`` is a list of (label, [8 values])."""
    width = max([len(r[0]) for r in rows] + [10])
    head = " " * width + "  " + "  ".join(f"{c:>14s}" for c in COLUMNS)
    lines = [title] if title else []
    lines += [head, "-" * len(head)]
    for label, vals in rows:
        cells = []
        for v in vals:
            cells.append(f"{'':>14s}" if v is None or (isinstance(v, float) and np.isnan(v))
                         else f"{v:14.4f}")
        lines.append(f"{label:<{width}s}  " + "  ".join(cells))
    return "\n".join(lines)
