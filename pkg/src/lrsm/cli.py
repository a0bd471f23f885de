"""Command-line interface: simulate | fit | predict | score | diagnose | study.

Exit codes: 0 success, 2 usage or invalid argument, 3 data or I/O problem,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .config import BackendSpec, Scenario, ScenarioConfig, read_config
from .errors import DataError, InvalidArgument, LRSMError
from .extremal import (
    anderson_darling_gof,
    empirical_chi,
    fit_sites,
    gev_cdf,
    max_stability_test,
    pit_to_uniform,
)
from .fields import Scale
from .inference import McmcConfig, PosteriorChain
from .prediction import PredictiveSamples
from .study import (
    backend_from_chain,
    cmd_study,
    fit_dataset,
    load_dataset,
    predict_dataset,
    report_from_scores,
    score_dataset,
    simulate_dataset,
)

log = logging.getLogger("lrsm")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise InvalidArgument(message)


def _backend_arg(args) -> BackendSpec:
    kind = args.backend
    setting = {"full": None, "vecchia": args.m, "taper": args.sparsity, "lowrank": args.k}[kind]
    if kind != "full" and setting is None:
        flag = {"vecchia": "--m", "taper": "--sparsity", "lowrank": "--k"}[kind]
        raise InvalidArgument(f"--backend {kind} needs {flag}")
    return BackendSpec.parse(kind if setting is None else f"{kind}:{setting}")


def do_simulate(args):
    d = read_config(args.config)
    cfg = ScenarioConfig.from_dict({"reps": 1, **{k: v for k, v in d.items() if k != "reps"}})
    if len(cfg.scenarios) != 1:
        raise InvalidArgument("simulate takes a single scenario (no list values)")
    scn: Scenario = cfg.scenarios[0]
    ds = simulate_dataset(scn, cfg.holdout, cfg.seed, args.out)
    print(f"wrote {args.out}: n={scn.n} T={scn.T} train={ds.train.size} test={ds.test.size}")


def do_fit(args):
    if args.iters < 1:
        raise InvalidArgument("--iters must be >= 1")
    ds = load_dataset(args.data)
    spec = _backend_arg(args)
    cfg = McmcConfig(n_iter=args.iters, burn_in=args.burn_in, seed=args.seed,
                     adapt_every=args.adapt_every, thin_r=args.thin_r)
    chain, _ = fit_dataset(ds, spec, cfg, nu=args.nu, out_dir=args.out)
    summ = json.loads((Path(args.out) / "summary.json").read_text())
    print(json.dumps({"median": summ["median"], "ci_low": summ["ci_low"], "ci_high": summ["ci_high"],
                      "walltime_sec": round(chain.walltime_sec, 2)}))


def do_predict(args):
    ds = load_dataset(args.data)
    chain = PosteriorChain.from_csv(args.chain)
    backend = backend_from_chain(ds, chain)
    pred = predict_dataset(ds, chain, backend, seed=args.seed, max_draws=args.max_draws,
                           out_dir=args.chain)
    print(f"wrote {Path(args.chain) / 'predictive.csv'}: {pred.n_targets} sites x {pred.T} "
          f"replicates x {pred.n_draws} draws")


def do_score(args):
    ds = load_dataset(args.data)
    chain = PosteriorChain.from_csv(args.chain)
    p = Path(args.chain) / "predictive.csv"
    if not p.exists():
        raise DataError(f"{p} not found; run 'predict' first")
    pred = PredictiveSamples.from_csv(p)
    theta_free = chain.backend.get("kind") == "LowRank"
    rep = report_from_scores(score_dataset(ds, chain, pred, theta_free=theta_free))
    rep.to_json(Path(args.chain) / "score.json")
    print(json.dumps(rep.__dict__))


def do_diagnose(args):
    ds = load_dataset(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    x = ds.U.values
    if ds.U.scale is Scale.RAW:
        fits = fit_sites(x)
        U = pit_to_uniform(x, fits).values
        fit_vals = x
    else:
        # uniform data: fit the implied Gumbel-scale margins as a sanity check
        U = x
        fit_vals = -np.log(-np.log(np.clip(x, 1e-300, 1 - 1e-16)))
        fits = fit_sites(fit_vals)
    with open(out / "gev_fits.csv", "w") as fh:
        fh.write("site_id,mu,sigma,xi,ad_p_value\n")
        for i, (row, p) in enumerate(zip(fit_vals, fits)):
            gof = anderson_darling_gof(gev_cdf(row, p))
            fh.write(f"{i},{p.mu!r},{p.sigma!r},{p.xi!r},{gof.p_value!r}\n")
    u_grid = np.linspace(args.u_min, args.u_max, args.n_u)
    chi = empirical_chi(U, ds.sites, args.lag, args.tol, u_grid, args.n_boot, args.seed)
    chi.to_csv(out / "chi.csv")
    res = max_stability_test(U, None, args.n_boot, args.seed)
    res.to_json(out / "maxstab.json")
    print(f"wrote {out}: chi over {chi.n_pairs} pairs; max-stability p = {res.p_value:.4f}")


def do_study(args):
    cfg = ScenarioConfig.from_dict(read_config(args.config))
    if args.workers is not None:
        from dataclasses import replace

        cfg = replace(cfg, workers=args.workers)
    t0 = time.perf_counter()
    rows = cmd_study(cfg, args.out, resume=args.resume, max_cells=args.max_cells)
    failed = sum(r.get("status") != "ok" for r in rows)
    print((Path(args.out) / "results.txt").read_text())
    print(f"{len(rows)} cells ({failed} failed) in {time.perf_counter() - t0:.1f}s")


def build_parser():
    p = _Parser(prog="lrsm", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="simulate one dataset from a config file")
    s.add_argument("--config", required=True, help="key = value file (n, T, alpha, rho, nu, holdout, seed)")
    s.add_argument("--out", required=True, help="output dataset directory")
    s.set_defaults(func=do_simulate)

    f = sub.add_parser("fit", help="run MCMC on the training sites")
    f.add_argument("--data", required=True)
    f.add_argument("--out", required=True, help="chain directory")
    f.add_argument("--backend", choices=["full", "vecchia", "taper", "lowrank"], default="full")
    f.add_argument("--m", type=int, help="Vecchia conditioning size")
    f.add_argument("--sparsity", type=float, help="taper target sparsity in (0, 1)")
    f.add_argument("--k", type=int, help="low-rank basis size")
    f.add_argument("--iters", type=int, default=10_000)
    f.add_argument("--burn-in", type=float, default=0.5)
    f.add_argument("--adapt-every", type=int, default=200)
    f.add_argument("--thin-r", type=int, default=50)
    f.add_argument("--nu", type=float, help="Matérn smoothness (default: dataset value)")
    f.add_argument("--seed", type=int, default=0)
    f.set_defaults(func=do_fit)

    pr = sub.add_parser("predict", help="conditional simulation at held-out sites")
    pr.add_argument("--data", required=True)
    pr.add_argument("--chain", required=True)
    pr.add_argument("--max-draws", type=int, default=500)
    pr.add_argument("--seed", type=int, default=0)
    pr.set_defaults(func=do_predict)

    sc = sub.add_parser("score", help="coverage, interval score and twCRPS for a fitted chain")
    sc.add_argument("--data", required=True)
    sc.add_argument("--chain", required=True)
    sc.set_defaults(func=do_score)

    dg = sub.add_parser("diagnose", help="chi curve, max-stability test and GEV fits")
    dg.add_argument("--data", required=True)
    dg.add_argument("--out", required=True)
    dg.add_argument("--lag", type=float, default=0.177)
    dg.add_argument("--tol", type=float, default=0.02)
    dg.add_argument("--u-min", type=float, default=0.5)
    dg.add_argument("--u-max", type=float, default=0.98)
    dg.add_argument("--n-u", type=int, default=25)
    dg.add_argument("--n-boot", type=int, default=200)
    dg.add_argument("--seed", type=int, default=0)
    dg.set_defaults(func=do_diagnose)

    st = sub.add_parser("study", help="run a scenario x repetition x backend grid")
    st.add_argument("--config", required=True)
    st.add_argument("--out", required=True)
    st.add_argument("--resume", action="store_true", help="skip cells that already succeeded")
    st.add_argument("--workers", type=int)
    st.add_argument("--max-cells", type=int, help=argparse.SUPPRESS)
    st.set_defaults(func=do_study)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        args.func(args)
    except LRSMError as exc:
        print(f"lrsm: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"lrsm: error: {exc}", file=sys.stderr)
        return DataError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
