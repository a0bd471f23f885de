"""Line-oriented ``key = value`` configuration files.

Grammar: one ``key = value`` per line; ``#`` starts a comment; blank lines are
ignored; a value containing commas is a list. Scalars are read as int, then
float, then left as strings. Keys are case-sensitive and may not repeat.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from pathlib import Path

from .errors import DataError, InvalidArgument
from .inference import McmcConfig

_BACKENDS = ("full", "vecchia", "taper", "lowrank")


def _scalar(text):
    text = text.strip()
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    return text


def parse_config_text(text: str, source="<config>") -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidArgument(f"{source}:{lineno}: expected 'key = value'")
        key, value = (p.strip() for p in line.split("=", 1))
        if not key or not value:
            raise InvalidArgument(f"{source}:{lineno}: empty key or value")
        if key in out:
            raise InvalidArgument(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = [_scalar(v) for v in value.split(",")] if "," in value else _scalar(value)
    return out


def read_config(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DataError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text, str(path))


def _as_list(v):
    return v if isinstance(v, list) else [v]


@dataclass(frozen=True)
class BackendSpec:
    """A likelihood backend choice: full, vecchia:m, taper:sparsity or lowrank:k."""

    kind: str
    setting: float | None = None

    @classmethod
    def parse(cls, text) -> "BackendSpec":
        text = str(text).strip().lower()
        kind, _, arg = text.partition(":")
        if kind not in _BACKENDS:
            raise InvalidArgument(f"unknown backend {kind!r}; choose from {', '.join(_BACKENDS)}")
        if kind == "full":
            if arg:
                raise InvalidArgument("the full backend takes no setting")
            return cls(kind)
        if not arg:
            raise InvalidArgument(f"backend {kind} needs a setting, e.g. {kind}:10")
        val = float(arg)
        if kind in ("vecchia", "lowrank"):
            if val != int(val) or val < 1:
                raise InvalidArgument(f"{kind} setting must be a positive integer")
            val = int(val)
        elif not 0.0 < val < 1.0:
            raise InvalidArgument("taper setting is a target sparsity in (0, 1)")
        return cls(kind, val)

    @property
    def label(self):
        if self.kind == "full":
            return "Full GP"
        if self.kind == "vecchia":
            return f"Vecchia (M={self.setting})"
        if self.kind == "taper":
            return f"Taper ({round(100 * self.setting)}% sparse)"
        return f"Low Rank ({self.setting})"

    @property
    def slug(self):
        return self.kind if self.setting is None else f"{self.kind}-{self.setting}"


@dataclass(frozen=True)
class Scenario:
    n: int
    T: int
    alpha: float
    rho: float
    nu: float

    @property
    def slug(self):
        return f"n{self.n}_T{self.T}_a{self.alpha:g}_r{self.rho:g}_nu{self.nu:g}"


@dataclass(frozen=True)
class ScenarioConfig:
    scenarios: tuple
    holdout: float = 0.25
    backends: tuple = (BackendSpec("full"),)
    mcmc: McmcConfig = field(default_factory=McmcConfig)
    reps: int = 10
    seed: int = 0
    workers: int = 1

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        known = {"n", "T", "alpha", "rho", "nu", "holdout", "backends", "iters", "burn_in",
                 "adapt_every", "target_accept", "reps", "seed", "workers", "thin_r"}
        unknown = set(d) - known
        if unknown:
            raise InvalidArgument(f"unknown config keys: {', '.join(sorted(unknown))}")
        missing = {"n", "T", "alpha", "rho"} - set(d)
        if missing:
            raise InvalidArgument(f"missing config keys: {', '.join(sorted(missing))}")
        grid = itertools.product(_as_list(d["n"]), _as_list(d["T"]), _as_list(d["alpha"]),
                                 _as_list(d["rho"]), _as_list(d.get("nu", 0.5)))
        scen = []
        for n, T, a, r, nu in grid:
            if not (isinstance(n, int) and n >= 2 and isinstance(T, int) and T >= 1):
                raise InvalidArgument("n must be an integer >= 2 and T an integer >= 1")
            if not (0.0 <= float(a) <= 1.0 and 0.0 < float(r) < 0.5 and float(nu) > 0):
                raise InvalidArgument("need alpha in [0, 1], rho in (0, 0.5), nu > 0")
            scen.append(Scenario(n, T, float(a), float(r), float(nu)))
        holdout = float(d.get("holdout", 0.25))
        if not 0.0 < holdout < 1.0:
            raise InvalidArgument("holdout must lie in (0, 1)")
        iters = int(d.get("iters", 10_000))
        if iters < 1:
            raise InvalidArgument("iters must be >= 1")
        mcmc = McmcConfig(
            n_iter=iters,
            burn_in=float(d.get("burn_in", 0.5)),
            adapt_every=int(d.get("adapt_every", 200)),
            target_accept=float(d.get("target_accept", 0.44)),
            thin_r=int(d.get("thin_r", 50)),
        )
        backends = tuple(BackendSpec.parse(b) for b in _as_list(d.get("backends", "full")))
        reps = int(d.get("reps", 10))
        workers = int(d.get("workers", 1))
        if reps < 1 or workers < 1:
            raise InvalidArgument("reps and workers must be >= 1")
        return cls(tuple(scen), holdout, backends, mcmc, reps, int(d.get("seed", 0)), workers)
