"""Site geometry: containers, distances, max-min ordering and neighbor search."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist

from .errors import DataError, InvalidArgument


@dataclass(frozen=True)
class SiteSet:
    """Planar coordinates of ``n`` distinct sites, stored as an ``(n, 2)`` array."""

    coords: np.ndarray

    def __post_init__(self):
        c = np.array(self.coords, dtype=float)
        if c.ndim == 1 and c.size == 2:
            c = c.reshape(1, 2)
        if c.ndim != 2 or c.shape[1] != 2:
            raise InvalidArgument(f"coords must have shape (n, 2), got {c.shape}")
        if c.shape[0] < 1:
            raise InvalidArgument("a SiteSet needs at least one site")
        if not np.all(np.isfinite(c)):
            raise InvalidArgument("site coordinates must be finite")
        if np.unique(c, axis=0).shape[0] != c.shape[0]:
            raise InvalidArgument("duplicate site coordinates are not allowed")
        c.setflags(write=False)
        object.__setattr__(self, "coords", c)

    @property
    def n(self) -> int:
        return self.coords.shape[0]

    def __len__(self):
        return self.n

    def subset(self, idx) -> "SiteSet":
        return SiteSet(self.coords[np.asarray(idx)])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y"])
            for x, y in self.coords:
                w.writerow([repr(float(x)), repr(float(y))])

    @classmethod
    def from_csv(cls, path) -> "SiteSet":
        path = Path(path)
        try:
            with open(path, newline="") as fh:
                rows = list(csv.reader(fh))
        except OSError as exc:
            raise DataError(f"cannot read sites file {path}: {exc}") from exc
        if not rows or [h.strip() for h in rows[0]] != ["x", "y"]:
            raise DataError(f"{path}: expected header 'x,y'")
        try:
            coords = [[float(a), float(b)] for a, b in rows[1:]]
        except ValueError as exc:
            raise DataError(f"{path}: malformed coordinate row") from exc
        return cls(np.array(coords))


def sample_uniform_sites(n: int, seed) -> SiteSet:
    """Draw ``n`` sites uniformly on the unit square."""
    if n < 1:
        raise InvalidArgument(f"n must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    coords = rng.uniform(0.0, 1.0, size=(n, 2))
    # exact duplicates have probability ~0 but would break the SiteSet contract
    while np.unique(coords, axis=0).shape[0] != n:
        coords = rng.uniform(0.0, 1.0, size=(n, 2))
    return SiteSet(coords)


def distance_matrix(s: SiteSet, other: SiteSet | None = None) -> np.ndarray:
    """Euclidean distances; square and symmetric when ``other`` is omitted."""
    if other is None:
        d = cdist(s.coords, s.coords)
        np.fill_diagonal(d, 0.0)
        return 0.5 * (d + d.T)
    return cdist(s.coords, other.coords)


def maxmin_ordering(s: SiteSet) -> np.ndarray:
    """Max-min ordering starting from the site nearest the centroid.

    Each next site maximizes its minimum distance to those already picked.
    Ties go to the lowest site index (``argmax``/``argmin`` return the first hit).
    """
    n = s.n
    centroid = s.coords.mean(axis=0)
    d0 = np.linalg.norm(s.coords - centroid, axis=1)
    first = int(np.argmin(d0))
    order = np.empty(n, dtype=int)
    order[0] = first
    mind = np.linalg.norm(s.coords - s.coords[first], axis=1)
    chosen = np.zeros(n, dtype=bool)
    chosen[first] = True
    for i in range(1, n):
        cand = np.where(chosen, -np.inf, mind)
        nxt = int(np.argmax(cand))
        order[i] = nxt
        chosen[nxt] = True
        mind = np.minimum(mind, np.linalg.norm(s.coords - s.coords[nxt], axis=1))
    return order


@dataclass(frozen=True)
class VecchiaPlan:
    """Ordering plus conditioning sets for a Vecchia factorization.

    ``neighbor_sets[i]`` holds *site indices* (not ordered positions) of the
    conditioning set for the site ``ordering[i]``, nearest first.
    """

    ordering: np.ndarray
    neighbor_sets: list = field(repr=False)
    m: int

    @property
    def n(self):
        return len(self.ordering)

    def padded(self):
        """Neighbor positions (in ordered coordinates) as an ``(n, m)`` array.

        Missing slots are filled with -1.
        """
        pos = np.empty(self.n, dtype=int)
        pos[self.ordering] = np.arange(self.n)
        width = max(1, min(self.m, self.n - 1))
        out = np.full((self.n, width), -1, dtype=int)
        for i, nb in enumerate(self.neighbor_sets):
            if len(nb):
                out[i, : len(nb)] = pos[np.asarray(nb)]
        return out


def build_vecchia_plan(s: SiteSet, m: int, ordering=None) -> VecchiaPlan:
    if m < 1:
        raise InvalidArgument(f"conditioning size m must be >= 1, got {m}")
    order = maxmin_ordering(s) if ordering is None else np.asarray(ordering, dtype=int)
    xy = s.coords[order]
    sets = [np.empty(0, dtype=int)]
    for i in range(1, s.n):
        d = np.linalg.norm(xy[:i] - xy[i], axis=1)
        # lexsort keys: last is primary -> distance, then ordered position
        pick = np.lexsort((np.arange(i), d))[: min(i, m)]
        sets.append(order[pick])
    return VecchiaPlan(ordering=order, neighbor_sets=sets, m=m)


def knn_to_targets(s: SiteSet, targets: SiteSet, k: int) -> np.ndarray:
    """Indices of the ``k`` nearest observed sites for each target, nearest first."""
    if k > s.n:
        raise InvalidArgument(f"k={k} exceeds the number of observed sites {s.n}")
    if k < 1:
        raise InvalidArgument("k must be >= 1")
    d = distance_matrix(targets, s)
    idx = np.arange(s.n)
    out = np.empty((targets.n, k), dtype=int)
    for j in range(targets.n):
        out[j] = np.lexsort((idx, d[j]))[:k]
    return out
