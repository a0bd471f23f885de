"""Simulation of Gaussian fields, Lévy scales and LRSM replicates."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
from scipy.special import ndtri

from .correlation import MaternParams, cholesky, covariance_matrix
from .errors import DataError, InvalidArgument
from .marginal import LEVY_SCALE, QuadratureConfig, DEFAULT_QUAD, h
from .sites import SiteSet


class Scale(str, Enum):
    UNIFORM = "UniformU"
    GAUSSIAN = "GaussianZ"
    RAW = "RawX"


@dataclass
class ReplicateMatrix:
    """An ``(n, T)`` block of replicates: rows are sites, columns are times."""

    values: np.ndarray
    scale: Scale = Scale.UNIFORM
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2:
            raise InvalidArgument("replicate values must be a 2-D (n, T) array")
        if np.any(np.isnan(v)):
            raise InvalidArgument("replicate matrix has missing values")
        self.scale = Scale(self.scale)
        if self.scale is Scale.UNIFORM and np.any((v <= 0) | (v >= 1)):
            raise InvalidArgument("uniform-scale values must lie strictly inside (0, 1)")
        self.values = v

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def T(self) -> int:
        return self.values.shape[1]

    def rows(self, idx) -> "ReplicateMatrix":
        return ReplicateMatrix(self.values[np.asarray(idx)], self.scale, dict(self.meta))

    def to_csv(self, path, meta_path=None):
        """Write long-format CSV ``site_id,t,value`` plus a JSON sidecar."""
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["site_id", "t", "value"])
            for i in range(self.n):
                for t in range(self.T):
                    w.writerow([i, t, repr(float(self.values[i, t]))])
        meta = {"n": self.n, "T": self.T, "scale": self.scale.value, **self.meta}
        meta_path = Path(meta_path) if meta_path else path.with_suffix(".json")
        meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")

    @classmethod
    def from_csv(cls, path, meta_path=None) -> "ReplicateMatrix":
        path = Path(path)
        meta_path = Path(meta_path) if meta_path else path.with_suffix(".json")
        try:
            meta = json.loads(meta_path.read_text())
            with open(path, newline="") as fh:
                rows = list(csv.reader(fh))
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read replicate files {path}: {exc}") from exc
        if not rows or [c.strip() for c in rows[0]] != ["site_id", "t", "value"]:
            raise DataError(f"{path}: expected header 'site_id,t,value'")
        n, T = int(meta["n"]), int(meta["T"])
        vals = np.full((n, T), np.nan)
        try:
            for i, t, v in rows[1:]:
                vals[int(i), int(t)] = float(v)
        except (ValueError, IndexError) as exc:
            raise DataError(f"{path}: malformed row") from exc
        if np.any(np.isnan(vals)):
            raise DataError(f"{path}: missing (site, t) entries")
        scale = meta.pop("scale")
        meta.pop("n")
        meta.pop("T")
        return cls(vals, Scale(scale), meta)


@dataclass(frozen=True)
class LevyDraws:
    r: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.r, dtype=float)
        if np.any(r <= 0):
            raise InvalidArgument("Lévy draws must be positive")
        object.__setattr__(self, "r", r)

    @property
    def T(self):
        return self.r.size


def sample_levy(T: int, seed) -> LevyDraws:
    """i.i.d. Lévy(0, 1/2) draws by inversion: R = c / Phi^{-1}(1 - u/2)^2."""
    if T < 1:
        raise InvalidArgument("T must be >= 1")
    rng = np.random.default_rng(seed)
    u = rng.uniform(size=T)
    q = ndtri(1.0 - 0.5 * u)
    return LevyDraws(LEVY_SCALE / q**2)


def sample_gp(s: SiteSet, p: MaternParams, T: int, seed, chol=None) -> ReplicateMatrix:
    """T independent N(0, C) columns via the lower Cholesky factor."""
    if T < 1:
        raise InvalidArgument("T must be >= 1")
    rng = np.random.default_rng(seed)
    if chol is None:
        chol = cholesky(covariance_matrix(s, p), backend="FullGP")
    eps = rng.standard_normal((s.n, T))
    return ReplicateMatrix(chol @ eps, Scale.GAUSSIAN)


@dataclass
class LRSMSample:
    U: ReplicateMatrix
    R: LevyDraws
    Z: ReplicateMatrix


def simulate_lrsm(s: SiteSet, p: MaternParams, alpha: float, T: int, seed,
                  q: QuadratureConfig = DEFAULT_QUAD) -> LRSMSample:
    """Simulate U_t(s_i) = h(Z_t(s_i); R_t, alpha) and return the latent truth too."""
    ss = np.random.SeedSequence(seed)
    gp_seed, levy_seed = ss.spawn(2)
    Z = sample_gp(s, p, T, gp_seed)
    R = sample_levy(T, levy_seed)
    u = h(Z.values, R.r[None, :], alpha, q)
    # F_X can round to exactly 0 or 1 in floating point for |z| > ~8
    u = np.clip(u, 1e-300, np.nextafter(1.0, 0.0))
    meta = {"alpha": float(alpha), "rho": p.rho, "nu": p.nu, "seed": _seed_repr(seed)}
    Z.meta.update(meta)
    return LRSMSample(ReplicateMatrix(u, Scale.UNIFORM, meta), R, Z)


def _seed_repr(seed):
    if isinstance(seed, (int, np.integer)):
        return int(seed)
    return str(seed)
