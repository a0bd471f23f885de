"""Dataset pipeline (simulate, fit, predict, score) and the scenario runner."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import os
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import BackendSpec, Scenario, ScenarioConfig
from .correlation import MaternParams, TaperSpec, eigenbasis, taper_range_for_sparsity
from .errors import DataError, InvalidArgument, LRSMError
from .fields import ReplicateMatrix, simulate_lrsm
from .inference import McmcConfig, PosteriorChain, run_mcmc, summarize, summary_json
from .likelihood import FullGP, LowRank, Taper, Vecchia
from .prediction import PredictiveSamples, conditional_simulate, holdout_split, twcrps_inputs
from .scoring import (
    GaussianCdf,
    LowerTail,
    ScoreReport,
    format_table,
    interval_score,
    mean_twcrps,
    mean_twcrps_upper,
)
from .sites import SiteSet, sample_uniform_sites

log = logging.getLogger(__name__)

ALPHA_STAR = 0.05


def _write_atomic(path: Path, text: str):
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


# ----------------------------------------------------------------- datasets


@dataclasses.dataclass
class Dataset:
    sites: SiteSet
    U: ReplicateMatrix
    meta: dict

    @property
    def train(self):
        return np.asarray(self.meta["train"], dtype=int)

    @property
    def test(self):
        return np.asarray(self.meta["test"], dtype=int)


def simulate_dataset(scn: Scenario, holdout: float, seed, out_dir) -> Dataset:
    """Write sites.csv, replicates.csv and meta.json for one simulated dataset."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ss = np.random.SeedSequence(seed)
    site_seed, field_seed, split_seed = (int(c.generate_state(1)[0]) for c in ss.spawn(3))
    s = sample_uniform_sites(scn.n, site_seed)
    sim = simulate_lrsm(s, MaternParams(scn.rho, scn.nu), scn.alpha, scn.T, field_seed)
    train, test = holdout_split(scn.n, holdout, split_seed)
    meta = {
        "alpha": scn.alpha, "rho": scn.rho, "nu": scn.nu, "seed": seed,
        "holdout": holdout, "train": train.tolist(), "test": test.tolist(),
    }
    s.to_csv(out / "sites.csv")
    U = ReplicateMatrix(sim.U.values, sim.U.scale, meta)
    U.to_csv(out / "replicates.csv", meta_path=out / "meta.json")
    return Dataset(s, U, meta)


def load_dataset(data_dir) -> Dataset:
    d = Path(data_dir)
    if not d.is_dir():
        raise DataError(f"dataset directory {d} does not exist")
    s = SiteSet.from_csv(d / "sites.csv")
    U = ReplicateMatrix.from_csv(d / "replicates.csv", meta_path=d / "meta.json")
    if U.n != s.n:
        raise DataError("sites.csv and replicates.csv disagree on the number of sites")
    meta = dict(U.meta)
    if "train" not in meta:
        meta["train"] = list(range(s.n))
        meta["test"] = []
    return Dataset(s, U, meta)


# ------------------------------------------------------------------ fitting


def make_backend(spec: BackendSpec, s: SiteSet):
    if spec.kind == "full":
        return FullGP(s)
    if spec.kind == "vecchia":
        return Vecchia(s, m=min(int(spec.setting), s.n - 1) or 1)
    if spec.kind == "taper":
        return Taper(s, TaperSpec(taper_range_for_sparsity(s, float(spec.setting))))
    if spec.kind == "lowrank":
        if spec.setting > s.n:
            raise InvalidArgument(f"rank {spec.setting} exceeds the {s.n} training sites")
        return LowRank(eigenbasis(s, int(spec.setting)))
    raise InvalidArgument(f"unknown backend {spec.kind}")


def fit_dataset(ds: Dataset, spec: BackendSpec, cfg: McmcConfig, nu=None, out_dir=None):
    """Run MCMC on the training sites; optionally write chain files and summary.json."""
    tr = ds.train
    s_tr = ds.sites.subset(tr)
    backend = make_backend(spec, s_tr)
    nu = float(ds.meta.get("nu", 0.5) if nu is None else nu)
    chain = run_mcmc(ds.U.values[tr], backend, s_tr, nu, cfg)
    chain.backend = {**backend.describe(), "spec": spec.slug}
    if out_dir is not None:
        out = Path(out_dir)
        chain.to_csv(out)
        summ = summary_json(chain)
        summ["backend"] = chain.backend
        _write_atomic(out / "summary.json", json.dumps(summ, indent=2) + "\n")
    return chain, backend


def backend_from_chain(ds: Dataset, chain: PosteriorChain):
    spec = chain.backend.get("spec")
    if spec is None:
        raise DataError("chain metadata does not record its backend")
    kind, _, arg = spec.partition("-")
    return make_backend(BackendSpec.parse(f"{kind}:{arg}" if arg else kind), ds.sites.subset(ds.train))


def predict_dataset(ds: Dataset, chain: PosteriorChain, backend, seed=0, max_draws=500,
                    out_dir=None) -> PredictiveSamples:
    te = ds.test
    if te.size == 0:
        raise DataError("dataset has no held-out sites to predict")
    pred = conditional_simulate(ds.U.values[ds.train], ds.sites.subset(ds.train), ds.sites.subset(te),
                                chain, backend, seed=seed, max_draws=max_draws, site_ids=te)
    if out_dir is not None:
        pred.to_csv(Path(out_dir) / "predictive.csv")
    return pred


def score_dataset(ds: Dataset, chain: PosteriorChain, pred: PredictiveSamples, theta_free=False) -> dict:
    """Per-fit scores: interval bounds and indicators for alpha and rho, twCRPS 1-3."""
    summ = summarize(chain)
    a_true = float(ds.meta["alpha"])
    r_true = float(ds.meta["rho"])
    a_s, r_s = summ["alpha"], summ["rho"]
    train_vals = ds.U.values[ds.train]
    units = twcrps_inputs(pred, ds.U.values[pred.site_ids])
    res = {
        "alpha_lo": a_s.ci_low, "alpha_hi": a_s.ci_high, "alpha_median": a_s.median,
        "cover_alpha": float(a_s.covers(a_true)),
        "is_alpha": float(interval_score(a_s.ci_low, a_s.ci_high, a_true, ALPHA_STAR)),
        "rho_lo": r_s.ci_low, "rho_hi": r_s.ci_high, "rho_median": r_s.median,
        "cover_rho": math.nan if theta_free else float(r_s.covers(r_true)),
        "is_rho": math.nan if theta_free else float(interval_score(r_s.ci_low, r_s.ci_high, r_true,
                                                                   ALPHA_STAR)),
        "twcrps_1": mean_twcrps(units, LowerTail(float(np.median(train_vals)))),
        "twcrps_2": mean_twcrps(units, GaussianCdf(float(np.mean(train_vals)),
                                                   float(np.std(train_vals, ddof=1)))),
        "twcrps_3": mean_twcrps_upper(units),
        "walltime_sec": chain.walltime_sec,
    }
    return res


def report_from_scores(res: dict) -> ScoreReport:
    return ScoreReport(
        coverage_alpha=res["cover_alpha"], coverage_rho=res["cover_rho"],
        interval_score_alpha=0.5 * ALPHA_STAR * res["is_alpha"],
        interval_score_rho=0.5 * ALPHA_STAR * res["is_rho"],
        twcrps_1=res["twcrps_1"], twcrps_2=res["twcrps_2"], twcrps_3=res["twcrps_3"],
        walltime_sec=res["walltime_sec"],
    )


# -------------------------------------------------------------------- study

CELL_FIELDS = ["scenario", "rep", "backend", "status", "alpha_lo", "alpha_hi", "alpha_median",
               "cover_alpha", "is_alpha", "rho_lo", "rho_hi", "rho_median", "cover_rho", "is_rho",
               "twcrps_1", "twcrps_2", "twcrps_3", "walltime_sec", "error"]


def _dataset_seed(cfg: ScenarioConfig, si: int, rep: int) -> list:
    return [cfg.seed, si, rep]


def run_cell(cfg: ScenarioConfig, si: int, rep: int, spec: BackendSpec, out_dir) -> dict:
    """Simulate (or reuse) one dataset, fit one backend, predict and score."""
    scn = cfg.scenarios[si]
    root = Path(out_dir)
    data_dir = root / "data" / f"{scn.slug}_rep{rep}"
    cell_dir = root / "cells" / f"{scn.slug}_rep{rep}_{spec.slug}"
    row = {"scenario": scn.slug, "rep": rep, "backend": spec.label}
    try:
        if (data_dir / "meta.json").exists():
            ds = load_dataset(data_dir)
        else:
            ds = simulate_dataset(scn, cfg.holdout, _dataset_seed(cfg, si, rep), data_dir)
        mc = dataclasses.replace(cfg.mcmc, seed=int(np.random.SeedSequence(
            _dataset_seed(cfg, si, rep)).generate_state(1)[0]))
        cell_dir.mkdir(parents=True, exist_ok=True)
        chain, backend = fit_dataset(ds, spec, mc, nu=scn.nu, out_dir=cell_dir)
        pred = predict_dataset(ds, chain, backend, seed=mc.seed)
        row.update(score_dataset(ds, chain, pred, theta_free=backend.theta_free))
        row["status"] = "ok"
        row["error"] = ""
    except LRSMError as exc:
        row["status"] = "failed"
        row["error"] = f"{type(exc).__name__}: {exc}"
        log.warning("cell %s rep %d %s failed: %s", scn.slug, rep, spec.slug, exc)
    except Exception as exc:  # keep the study going; the cell is recorded as missing
        row["status"] = "failed"
        row["error"] = f"{type(exc).__name__}: {exc}"
        log.warning("cell %s rep %d %s crashed:\n%s", scn.slug, rep, spec.slug, traceback.format_exc())
    cell_dir.mkdir(parents=True, exist_ok=True)
    _write_atomic(cell_dir / "result.json", json.dumps(row, indent=2) + "\n")
    return row


def _cells(cfg: ScenarioConfig):
    for si in range(len(cfg.scenarios)):
        for rep in range(cfg.reps):
            for spec in cfg.backends:
                yield si, rep, spec


def _cell_result_path(cfg, out_dir, si, rep, spec):
    scn = cfg.scenarios[si]
    return Path(out_dir) / "cells" / f"{scn.slug}_rep{rep}_{spec.slug}" / "result.json"


def _run_cell_args(args):
    return run_cell(*args)


def cmd_study(cfg: ScenarioConfig, out_dir, resume=False, max_cells=None) -> list[dict]:
    """Run every scenario x repetition x backend cell and write the aggregate tables.

    With ``resume`` a cell whose result.json records success is not rerun.
    ``max_cells`` stops after that many cells were run (to emulate an interruption).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    todo, rows = [], {}
    for si, rep, spec in _cells(cfg):
        p = _cell_result_path(cfg, out, si, rep, spec)
        if resume and p.exists():
            prev = json.loads(p.read_text())
            if prev.get("status") == "ok":
                rows[(si, rep, spec)] = prev
                continue
        todo.append((si, rep, spec))
    if max_cells is not None:
        todo = todo[:max_cells]
    args = [(cfg, si, rep, spec, out) for si, rep, spec in todo]
    if cfg.workers > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_run_cell_args, args))
    else:
        results = [_run_cell_args(a) for a in args]
    for key, res in zip(todo, results):
        rows[key] = res
    ordered = [rows[k] for k in _cells(cfg) if k in rows]
    write_cells_csv(ordered, out / "cells.csv")
    table = aggregate(cfg, ordered)
    _write_atomic(out / "results.txt", table + "\n")
    write_results_csv(cfg, ordered, out / "results.csv")
    return ordered


def write_cells_csv(rows, path):
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CELL_FIELDS, extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: r.get(k, "") for k in CELL_FIELDS})
    os.replace(tmp, path)


def _aggregate_rows(cfg: ScenarioConfig, rows):
    """Per (scenario, backend): the eight table columns, NaN where no cell succeeded."""
    out = []
    for scn in cfg.scenarios:
        for spec in cfg.backends:
            ok = [r for r in rows if r["scenario"] == scn.slug and r["backend"] == spec.label
                  and r.get("status") == "ok"]

            def mean(key, scale=1.0):
                v = np.array([float(r[key]) for r in ok], dtype=float)
                v = v[np.isfinite(v)]
                return float(scale * v.mean()) if v.size else math.nan

            vals = [mean("cover_alpha"), mean("cover_rho"),
                    mean("is_alpha", 0.5 * ALPHA_STAR), mean("is_rho", 0.5 * ALPHA_STAR),
                    mean("twcrps_1"), mean("twcrps_2"), mean("twcrps_3"),
                    mean("walltime_sec", 1.0 / 60.0)]
            out.append((scn, spec, len(ok), vals))
    return out


def aggregate(cfg: ScenarioConfig, rows) -> str:
    blocks = []
    agg = _aggregate_rows(cfg, rows)
    for scn in cfg.scenarios:
        body = [(f"{spec.label} [{k}/{cfg.reps}]", vals) for s2, spec, k, vals in agg if s2 == scn]
        title = (f"n={scn.n}, T={scn.T}, alpha={scn.alpha:g}, rho={scn.rho:g}, nu={scn.nu:g}")
        blocks.append(format_table(body, title))
    return "\n\n".join(blocks)


def write_results_csv(cfg, rows, path):
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["scenario", "backend", "n_ok", "cov_alpha", "cov_range", "is_alpha", "is_range",
                    "twcrps_1", "twcrps_2", "twcrps_3", "walltime_min"])
        for scn, spec, k, vals in _aggregate_rows(cfg, rows):
            w.writerow([scn.slug, spec.label, k] + ["" if math.isnan(v) else repr(v) for v in vals])
    os.replace(tmp, path)


def read_results_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
