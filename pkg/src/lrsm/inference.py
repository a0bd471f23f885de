"""One-at-a-time adaptive random-walk Metropolis for (alpha, rho, R_1..R_T).

Random walks run on unconstrained scales: logit(alpha), logit(rho / rho_max)
and log R_t. Proposal log-sds follow the log-adaptive rule

    log sd <- log sd + b**-0.5 * (acceptance rate - target)

after every ``adapt_every`` iterations of batch b, and freeze after burn-in.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit, logit

from .correlation import MaternParams
from .errors import DataError, DegenerateCovariance, InvalidArgument, NumericalError
from .likelihood import (
    LikelihoodBackend,
    clamp_uniform,
    latent_from_state,
    marginal_state,
)
from .marginal import LEVY_MEDIAN, MarginalTable, levy_logpdf


class InitializationError(NumericalError):
    """The starting state has a non-finite log-posterior."""


@dataclass(frozen=True)
class Priors:
    """alpha ~ U(0, alpha_max), rho ~ U(0, rho_max), R_t ~ Lévy(0, 1/2)."""

    alpha_max: float = 1.0
    rho_max: float = 0.5

    def log_alpha(self, a):
        return -math.log(self.alpha_max) if 0.0 < a < self.alpha_max else -math.inf

    def log_rho(self, r):
        return -math.log(self.rho_max) if 0.0 < r < self.rho_max else -math.inf

    def log_r(self, r):
        return levy_logpdf(r)


@dataclass(frozen=True)
class McmcConfig:
    n_iter: int = 50_000
    adapt_every: int = 200
    target_accept: float = 0.44
    burn_in: float = 0.5
    seed: int = 0
    thin_r: int = 50
    init_alpha: float = 0.5
    init_rho: float = 0.25
    init_r: float = LEVY_MEDIAN
    init_log_sd: tuple = (math.log(0.3), math.log(0.3), math.log(0.5))

    def __post_init__(self):
        if self.n_iter < 0:
            raise InvalidArgument("n_iter must be >= 0")
        if not 0.0 < self.target_accept < 1.0:
            raise InvalidArgument("target_accept must lie in (0, 1)")
        if not 0.0 <= self.burn_in < 1.0:
            raise InvalidArgument("burn_in must lie in [0, 1)")
        if self.adapt_every < 1 or self.thin_r < 1:
            raise InvalidArgument("adapt_every and thin_r must be >= 1")

    @property
    def n_burn(self) -> int:
        return int(self.burn_in * self.n_iter)


@dataclass
class PosteriorChain:
    """Draws indexed by iteration; row 0 is the initial state.

    ``r_draws`` is ``(T, n_stored)`` with the iterations in ``r_iters``.
    ``log_sd_history`` has one row per adaptation batch: alpha, rho, then the
    mean of the T per-replicate log-sds.
    """

    alpha_draws: np.ndarray
    rho_draws: np.ndarray
    r_draws: np.ndarray
    r_iters: np.ndarray
    accept_rates: dict
    log_sd_history: np.ndarray
    nu: float
    n_burn: int
    walltime_sec: float = 0.0
    backend: dict = field(default_factory=dict)

    @property
    def n_iter(self):
        return self.alpha_draws.size - 1

    def kept(self, draws):
        return draws[self.n_burn + 1:] if draws.size > self.n_burn + 1 else draws[-1:]

    def retained(self, max_draws=500):
        """Evenly thinned post-burn-in draws that have R stored: (alpha, rho, R) rows."""
        ok = self.r_iters > self.n_burn
        if not np.any(ok):
            ok = self.r_iters == self.r_iters.max()
        cols = np.flatnonzero(ok)
        if cols.size > max_draws:
            cols = cols[np.linspace(0, cols.size - 1, max_draws).round().astype(int)]
        it = self.r_iters[cols]
        return self.alpha_draws[it], self.rho_draws[it], self.r_draws[:, cols]

    def to_csv(self, directory):
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        with open(d / "chain.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "alpha", "rho"])
            for i, (a, r) in enumerate(zip(self.alpha_draws, self.rho_draws)):
                w.writerow([i, repr(float(a)), repr(float(r))])
        with open(d / "chain_r.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iter"] + [f"r_{t}" for t in range(self.r_draws.shape[0])])
            for j, it in enumerate(self.r_iters):
                w.writerow([int(it)] + [repr(float(v)) for v in self.r_draws[:, j]])
        meta = {
            "nu": self.nu,
            "n_burn": self.n_burn,
            "walltime_sec": self.walltime_sec,
            "backend": self.backend,
            "accept_rates": self.accept_rates,
            "log_sd_history": self.log_sd_history.tolist(),
        }
        (d / "chain_meta.json").write_text(json.dumps(meta, indent=2) + "\n")

    @classmethod
    def from_csv(cls, directory) -> "PosteriorChain":
        d = Path(directory)
        try:
            meta = json.loads((d / "chain_meta.json").read_text())
            a = np.loadtxt(d / "chain.csv", delimiter=",", skiprows=1, ndmin=2)
            r = np.loadtxt(d / "chain_r.csv", delimiter=",", skiprows=1, ndmin=2)
        except (OSError, ValueError) as exc:
            raise DataError(f"cannot read chain from {d}: {exc}") from exc
        return cls(
            alpha_draws=a[:, 1],
            rho_draws=a[:, 2],
            r_draws=r[:, 1:].T.copy(),
            r_iters=r[:, 0].astype(int),
            accept_rates=meta["accept_rates"],
            log_sd_history=np.asarray(meta["log_sd_history"], dtype=float).reshape(-1, 3),
            nu=float(meta["nu"]),
            n_burn=int(meta["n_burn"]),
            walltime_sec=float(meta["walltime_sec"]),
            backend=meta.get("backend", {}),
        )


# ------------------------------------------------------------ log-posterior


@dataclass
class McmcState:
    alpha: float
    rho: float
    r: np.ndarray


class _Target:
    """Per-replicate pieces of the log-posterior, updated block by block."""

    def __init__(self, u, backend, nu, priors, prior_only=False):
        self.u = u
        self.backend = backend
        self.nu = nu
        self.priors = priors
        self.prior_only = prior_only
        self.lo, self.hi = float(u.min()), float(u.max())

    def marginal(self, alpha):
        if self.prior_only:
            return None
        return marginal_state(self.u, alpha, table=MarginalTable(alpha, self.lo, self.hi))

    def latent(self, ms, r):
        """Per-column (gaussian-ready z, summed log-Jacobian)."""
        if self.prior_only:
            return None, np.zeros(r.size)
        z, lj = latent_from_state(ms, r[None, :])
        return z, lj.sum(axis=0)

    def gaussian(self, z, rho, T):
        if self.prior_only:
            return np.zeros(T)
        return np.atleast_1d(self.backend.logdensity(z, MaternParams(rho, self.nu)))

    # log-Jacobians of the unconstrained proposal scales
    def extra_alpha(self, a):
        return self.priors.log_alpha(a) + math.log(a) + math.log1p(-a / self.priors.alpha_max)

    def extra_rho(self, r):
        return self.priors.log_rho(r) + math.log(r) + math.log1p(-r / self.priors.rho_max)

    def extra_r(self, r):
        return self.priors.log_r(r) + np.log(r)


def _in_support(state: McmcState, priors: Priors):
    return (0.0 < state.alpha < priors.alpha_max and 0.0 < state.rho < priors.rho_max
            and np.all(state.r > 0))


def log_posterior(state: McmcState, U, backend: LikelihoodBackend, priors: Priors = Priors(),
                  nu: float = 0.5) -> float:
    """Log-posterior on the sampler's unconstrained scales.

    Equals loglik + log priors + sum log f_R(R_t) plus the log-Jacobians of the
    logit/log reparameterizations, up to an additive constant.
    """
    r = np.atleast_1d(np.asarray(state.r, dtype=float))
    if not _in_support(McmcState(state.alpha, state.rho, r), priors):
        return -math.inf
    u = np.asarray(getattr(U, "values", U), dtype=float)
    u, _ = clamp_uniform(u)
    tg = _Target(u, backend, nu, priors)
    ms = tg.marginal(state.alpha)
    z, lj = tg.latent(ms, r)
    gp = tg.gaussian(z, state.rho, r.size)
    return float(np.sum(gp + lj + tg.extra_r(r)) + tg.extra_alpha(state.alpha)
                 + tg.extra_rho(state.rho))


# ------------------------------------------------------------------ sampler


def run_mcmc(U, backend: LikelihoodBackend, s=None, nu: float = 0.5,
             cfg: McmcConfig = McmcConfig(), priors: Priors = Priors(),
             prior_only: bool = False) -> PosteriorChain:
    """Sample (alpha, rho, R_1..R_T) given uniform-scale replicates ``U`` (n x T).

    Each iteration updates alpha, then rho, then every R_t. The R_t updates
    are independent Metropolis steps (the replicates are conditionally
    independent), so they are carried out together. ``prior_only`` drops the
    likelihood, which is useful to check the sampler against the prior.
    """
    u = np.asarray(getattr(U, "values", U), dtype=float)
    if u.ndim != 2:
        raise InvalidArgument("U must be an (n, T) matrix")
    if s is not None and s.n != u.shape[0]:
        raise InvalidArgument("site set and replicate matrix disagree on n")
    if backend.n != u.shape[0]:
        raise InvalidArgument("backend and replicate matrix disagree on n")
    u, _ = clamp_uniform(u)
    n_sites, T = u.shape
    rng = np.random.default_rng(cfg.seed)
    tg = _Target(u, backend, nu, priors, prior_only)

    alpha, rho = float(cfg.init_alpha), float(cfg.init_rho)
    r = np.full(T, float(cfg.init_r))
    if not _in_support(McmcState(alpha, rho, r), priors):
        raise InitializationError("initial state lies outside the prior support")
    try:
        ms = tg.marginal(alpha)
        z, lj = tg.latent(ms, r)
        gp = tg.gaussian(z, rho, T)
    except (NumericalError, FloatingPointError) as exc:
        raise InitializationError(f"cannot evaluate the initial state: {exc}") from exc
    if not np.all(np.isfinite(gp + lj)):
        raise InitializationError("initial log-posterior is not finite")

    n_iter = cfg.n_iter
    alphas = np.empty(n_iter + 1)
    rhos = np.empty(n_iter + 1)
    alphas[0], rhos[0] = alpha, rho
    r_store = [r.copy()]
    r_iters = [0]
    lsd_a, lsd_rho, lsd_r0 = cfg.init_log_sd
    lsd_r = np.full(T, float(lsd_r0))
    acc_a = acc_rho = 0
    acc_r = np.zeros(T)
    tot_a = tot_rho = 0
    tot_r = np.zeros(T)
    batch = 0
    history = []

    t0 = time.perf_counter()
    for it in range(1, n_iter + 1):
        # alpha
        a_new = float(expit(logit(alpha / priors.alpha_max) + math.exp(lsd_a) * rng.standard_normal())
                      * priors.alpha_max)
        ok = 0.0 < a_new < priors.alpha_max
        log_u = math.log(rng.uniform())
        if ok:
            try:
                ms_new = tg.marginal(a_new)
                z_new, lj_new = tg.latent(ms_new, r)
                gp_new = tg.gaussian(z_new, rho, T)
                diff = (np.sum(gp_new + lj_new) - np.sum(gp + lj)
                        + tg.extra_alpha(a_new) - tg.extra_alpha(alpha))
                if np.isfinite(diff) and log_u < diff:
                    alpha, ms, z, lj, gp = a_new, ms_new, z_new, lj_new, gp_new
                    acc_a += 1
            except (DegenerateCovariance, FloatingPointError):
                pass
        tot_a += 1

        # rho
        rho_new = float(expit(logit(rho / priors.rho_max) + math.exp(lsd_rho) * rng.standard_normal())
                        * priors.rho_max)
        log_u = math.log(rng.uniform())
        if 0.0 < rho_new < priors.rho_max:
            try:
                gp_new = tg.gaussian(z, rho_new, T)
                diff = np.sum(gp_new) - np.sum(gp) + tg.extra_rho(rho_new) - tg.extra_rho(rho)
                if np.isfinite(diff) and log_u < diff:
                    rho, gp = rho_new, gp_new
                    acc_rho += 1
            except DegenerateCovariance:
                pass
        tot_rho += 1

        # R_1..R_T
        r_new = r * np.exp(np.exp(lsd_r) * rng.standard_normal(T))
        log_u = np.log(rng.uniform(size=T))
        z_new, lj_new = tg.latent(ms, r_new)
        try:
            gp_new = tg.gaussian(z_new, rho, T)
        except DegenerateCovariance:
            gp_new = np.full(T, -np.inf)
        diff = gp_new + lj_new - gp - lj + tg.extra_r(r_new) - tg.extra_r(r)
        take = np.isfinite(diff) & (log_u < diff)
        if np.any(take):
            r = np.where(take, r_new, r)
            gp = np.where(take, gp_new, gp)
            lj = np.where(take, lj_new, lj)
            if z is not None:
                z = np.where(take[None, :], z_new, z)
        acc_r += take
        tot_r += 1

        alphas[it], rhos[it] = alpha, rho
        if it % cfg.thin_r == 0:
            r_store.append(r.copy())
            r_iters.append(it)

        if it <= cfg.n_burn and it % cfg.adapt_every == 0:
            batch += 1
            gamma = batch ** -0.5
            lsd_a += gamma * (acc_a / tot_a - cfg.target_accept)
            lsd_rho += gamma * (acc_rho / tot_rho - cfg.target_accept)
            lsd_r += gamma * (acc_r / tot_r - cfg.target_accept)
            history.append((lsd_a, lsd_rho, float(lsd_r.mean())))
            acc_a = acc_rho = 0
            acc_r[:] = 0
            tot_a = tot_rho = 0
            tot_r[:] = 0
        elif it == cfg.n_burn:
            # reset counters so reported rates cover frozen proposals only
            acc_a = acc_rho = 0
            acc_r[:] = 0
            tot_a = tot_rho = 0
            tot_r[:] = 0
    wall = time.perf_counter() - t0

    def rate(a, t):
        return float(np.sum(a) / np.sum(t)) if np.sum(t) else float("nan")

    rates = {
        "alpha": rate(acc_a, tot_a),
        "rho": rate(acc_rho, tot_rho),
        "r": rate(acc_r, tot_r),
        "r_min": float(np.min(acc_r / tot_r)) if np.all(tot_r) else float("nan"),
        "r_max": float(np.max(acc_r / tot_r)) if np.all(tot_r) else float("nan"),
    }
    if r_iters[-1] != n_iter:
        r_store.append(r.copy())
        r_iters.append(n_iter)
    return PosteriorChain(
        alpha_draws=alphas,
        rho_draws=rhos,
        r_draws=np.array(r_store).T,
        r_iters=np.array(r_iters),
        accept_rates=rates,
        log_sd_history=np.array(history, dtype=float).reshape(-1, 3),
        nu=float(nu),
        n_burn=cfg.n_burn,
        walltime_sec=wall,
        backend=backend.describe(),
    )


# -------------------------------------------------------------- summaries


def batch_means_se(draws) -> float:
    """Batch-means standard error with batch size floor(sqrt(N))."""
    x = np.asarray(draws, dtype=float).ravel()
    N = x.size
    if N < 100:
        raise InvalidArgument(f"batch means need at least 100 draws, got {N}")
    b = int(math.isqrt(N))
    nb = N // b
    means = x[: nb * b].reshape(nb, b).mean(axis=1)
    return float(means.std(ddof=1) / math.sqrt(nb))


@dataclass(frozen=True)
class ParamSummary:
    mean: float
    median: float
    ci_low: float
    ci_high: float
    bm_se: float

    def covers(self, value) -> bool:
        return self.ci_low <= value <= self.ci_high


def summarize_draws(draws, level=0.95) -> ParamSummary:
    x = np.asarray(draws, dtype=float).ravel()
    if x.size == 0:
        raise InvalidArgument("no draws to summarize")
    tail = 0.5 * (1.0 - level)
    lo, med, hi = np.quantile(x, [tail, 0.5, 1.0 - tail])  # type-7 (linear) interpolation
    se = batch_means_se(x) if x.size >= 100 else float("nan")
    mean = x[0] + np.mean(x - x[0])  # exact for a constant chain
    return ParamSummary(float(mean), float(med), float(lo), float(hi), se)


def summarize(chain: PosteriorChain, level=0.95) -> dict:
    """Posterior mean, median and equal-tailed interval after burn-in."""
    return {
        "alpha": summarize_draws(chain.kept(chain.alpha_draws), level),
        "rho": summarize_draws(chain.kept(chain.rho_draws), level),
    }


def summary_json(chain: PosteriorChain, level=0.95) -> dict:
    summ = summarize(chain, level)
    out = {}
    for key in ("mean", "median", "ci_low", "ci_high", "bm_se"):
        out[key] = {p: getattr(v, key) for p, v in summ.items()}
    out["level"] = level
    out["accept_rates"] = chain.accept_rates
    out["walltime_sec"] = chain.walltime_sec
    out["n_iter"] = chain.n_iter
    out["backend"] = chain.backend
    return out
