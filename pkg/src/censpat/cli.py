"""Command-line entry point: ``censpat {mesh,fit,select,predict,simulate,report}``.

Exit codes: 0 ok, 2 config error, 3 data error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, load_config, override
from .diagnostics import write_trace_summary
from .draws import PosteriorDraws
from .ingest import DataError, load_covariates, load_dataset
from .mesh import Mesh, MeshError, build_mesh, project
from .model import ModelError, SweepError, predict, run_chain
from .selection import METHODS, select
from .simulate import SimulationReport, run_scenarios
from .spde import FactorizationError

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("censpat")


def _sha256(path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


class Manifest:
    """Collects provenance for one output directory and writes ``manifest.json``."""

    def __init__(self, command: str, out: Path, run: RunConfig | None, seed, inputs):
        self.out = out
        self.doc = {"command": command, "version": __version__, "argv": sys.argv[1:],
                    "config_digest": run.digest if run is not None else None,
                    "seed": seed, "started": _now(),
                    "inputs": {str(p): _sha256(p) for p in inputs if p is not None}}

    def finish(self, outputs) -> None:
        self.doc["finished"] = _now()
        self.doc["outputs"] = {Path(p).name: _sha256(p) for p in outputs}
        (self.out / "manifest.json").write_text(json.dumps(self.doc, indent=2) + "\n")


def _progress(total: int):
    def report(t, s):
        print(f"sweep {t}/{total} rho={s.rho:.4f} r={s.r:.4f} sigma2={s.sigma2:.4f}",
              file=sys.stderr, flush=True)
    return report


def _run_config(args, **need) -> RunConfig:
    run = load_config(args.config, **need)
    return override(run, seed=getattr(args, "seed", None),
                    spatial_scale=getattr(args, "spatial_scale", None),
                    cr_level=getattr(args, "cr_level", None),
                    hsp_cutoff=getattr(args, "hsp_cutoff", None),
                    b_tuning=getattr(args, "b_tuning", None),
                    rmse_mode=getattr(args, "rmse_mode", None),
                    refit=True if getattr(args, "refit", False) else None,
                    threads=getattr(args, "threads", None))


def _outdir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---- commands ----------------------------------------------------------------

def cmd_mesh(args) -> int:
    run = load_config(args.config) if args.config else None
    edge = args.edge if args.edge is not None else (run.mesh_edge if run else None)
    if edge is None:
        raise ConfigError("missing config key mesh.edge")
    ext = args.extension if args.extension is not None else (run.mesh_extension if run else None)
    ds = load_dataset(None, args.data, transform=False, standardize=False)
    out = _outdir(args.out)
    man = Manifest("mesh", out, run, None, [args.data, args.config])
    mesh = build_mesh(ds.sites, edge, ext)
    mesh.save(out / "mesh.txt")
    print(f"nodes={mesh.n_nodes} triangles={mesh.n_triangles}")
    man.finish([out / "mesh.txt"])
    return EXIT_OK


def _coefficients(draws: PosteriorDraws, names, means, sds, path) -> None:
    b = draws.beta.mean(axis=0)
    sd = draws.beta.std(axis=0, ddof=1) if draws.n_draws > 1 else np.zeros(draws.p)
    means, sds = np.asarray(means), np.asarray(sds)
    orig = b / sds
    orig[0] = b[0] - float(np.sum(b[1:] * means[1:] / sds[1:]))
    with Path(path).open("w") as fh:
        fh.write("name,mean_std,sd_std,mean_original\n")
        for j in range(draws.p):
            fh.write(f"{names[j]},{b[j]:.10g},{sd[j]:.10g},{orig[j]:.10g}\n")


def cmd_fit(args) -> int:
    run = _run_config(args)
    out = _outdir(args.out)
    man = Manifest("fit", out, run, run.model.seed, [args.data, args.sites, args.config])
    ds = load_dataset(args.sites, args.data, transform=not args.no_transform)
    mesh = Mesh.load(args.mesh) if args.mesh else build_mesh(ds.sites, run.mesh_edge,
                                                            run.mesh_extension)
    proj = project(mesh, ds.sites)
    print(f"n={ds.n} p={ds.p} censored={100 * ds.censored_fraction:.2f}% "
          f"dropped={ds.meta['n_dropped']} nodes={mesh.n_nodes}", file=sys.stderr)
    draws = run_chain(ds, run.model, mesh, proj, progress=_progress(run.model.iterations))
    draws.meta.update({k: ds.meta[k] for k in ("covariate_means", "covariate_sds", "transform",
                                               "n_dropped")})
    files = [out / "draws.csv", out / "draws.csv.meta.json", out / "draws.csv.field.txt",
             out / "trace_summary.csv", out / "coefficients.csv", out / "mesh.txt",
             out / "config.ini"]
    draws.to_csv(files[0])
    write_trace_summary(draws, files[3])
    _coefficients(draws, ds.names, ds.meta["covariate_means"], ds.meta["covariate_sds"], files[4])
    mesh.save(files[5])
    files[6].write_text(run.text)
    man.finish(files)
    print(f"stored {draws.n_draws} draws in {files[0]}")
    return EXIT_OK


def cmd_select(args) -> int:
    out = _outdir(args.out)
    man = Manifest("select", out, None, None, [args.draws])
    try:
        draws = PosteriorDraws.from_csv(args.draws)
    except OSError as exc:
        raise DataError(f"cannot read {args.draws}: {exc.strerror}") from None
    except ValueError as exc:
        raise DataError(str(exc)) from None
    names = draws.meta.get("names")
    methods = METHODS if args.method == "all" else (args.method,)
    files = []
    for m in methods:
        res = select(draws, m, cr_level=args.cr_level, hsp_cutoff=args.hsp_cutoff,
                     b_tuning=args.b_tuning)
        path = out / f"selection_{res.method}.csv"
        res.to_csv(path, names)
        files.append(path)
        print(f"method={res.method} selected={res.n_selected} of {draws.p}")
    man.finish(files)
    return EXIT_OK


def cmd_predict(args) -> int:
    fit = Path(args.fit)
    out = _outdir(args.out)
    man = Manifest("predict", out, None, None, [args.data, fit / "draws.csv", args.selection])
    try:
        draws = PosteriorDraws.from_csv(fit / "draws.csv")
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot load fit from {fit}: {exc}") from None
    if draws.field_mean is None:
        raise DataError(f"{fit}: draws carry no field mean")
    mesh = Mesh.load(fit / "mesh.txt")
    names = draws.meta.get("names") or ["intercept"] + [f"x{j}" for j in range(1, draws.p)]
    ids, sites, X = load_covariates(args.data, names, draws.meta.get("covariate_means"),
                                    draws.meta.get("covariate_sds"))
    mask = None
    if args.selection:
        with Path(args.selection).open(newline="") as fh:
            mask = np.array([row["included"] == "1" for row in csv.DictReader(fh)])
    pred = predict(draws, X, project(mesh, sites), mask)
    back = draws.meta.get("transform", False)
    path = out / "predictions.csv"
    with path.open("w") as fh:
        fh.write("site_id,x,y,prediction" + (",prediction_original" if back else "") + "\n")
        for i in range(len(ids)):
            row = f"{ids[i]},{float(sites[i, 0])!r},{float(sites[i, 1])!r},{pred[i]:.10g}"
            if back:
                row += f",{float(np.expm1(np.expm1(pred[i]))):.10g}"
            fh.write(row + "\n")
    man.finish([path])
    print(f"predicted {len(ids)} sites")
    return EXIT_OK


def _write_report(report: SimulationReport, out: Path) -> list:
    files = [out / "table_rmse.csv", out / "table_mismatch.csv"]
    report.write_table(files[0], "rmse")
    report.write_table(files[1], "mismatch")
    return files


def cmd_simulate(args) -> int:
    run = _run_config(args, need_scenarios=True)
    out = _outdir(args.out)
    man = Manifest("simulate", out, run, run.model.seed, [args.config])
    for s in run.scenarios:
        if s.mesh_edge is None:
            raise ConfigError("missing config key mesh.edge")
    report = run_scenarios(run.scenarios, run.model, threads=run.threads or os.cpu_count(),
                           rmse_mode=run.rmse_mode, cr_level=run.cr_level,
                           hsp_cutoff=run.hsp_cutoff, b_tuning=run.b_tuning, refit=run.refit)
    files = [out / "raw.csv"] + _write_report(report, out)
    report.write_raw(files[0])
    (out / "config.ini").write_text(run.text)
    files.append(out / "config.ini")
    failed = {(r.scenario, r.rep) for r in report.failures()}
    total = {(r.scenario, r.rep) for r in report.records}
    print(f"scenarios={len(run.scenarios)} failed_replicates={len(failed)}")
    man.finish(files)
    return EXIT_NUMERIC if failed == total else EXIT_OK


def cmd_report(args) -> int:
    out = _outdir(args.out)
    man = Manifest("report", out, None, None, [args.raw])
    try:
        report = SimulationReport.read_raw(args.raw)
    except OSError as exc:
        raise DataError(f"cannot read {args.raw}: {exc.strerror}") from None
    except ValueError as exc:
        raise DataError(str(exc)) from None
    man.finish(_write_report(report, out))
    return EXIT_OK


# ---- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="censpat", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mesh", help="build the computational mesh for a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--edge", type=float)
    p.add_argument("--extension", type=float)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_mesh)

    p = sub.add_parser("fit", help="run the MCMC sampler on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--sites", help="separate site coordinates file keyed by site_id")
    p.add_argument("--config", required=True)
    p.add_argument("--mesh", help="reuse a mesh file instead of building one")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--spatial-scale", choices=("sqrt_r", "r"))
    p.add_argument("--no-transform", action="store_true",
                   help="skip the iterated-log response transform")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("select", help="apply a selection rule to stored draws")
    p.add_argument("--draws", required=True)
    p.add_argument("--method", choices=METHODS + ("all",), default="all")
    p.add_argument("--cr-level", type=float, default=0.95)
    p.add_argument("--hsp-cutoff", type=float, default=0.5)
    p.add_argument("--b-tuning", type=float)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("predict", help="predict at new sites from a fit directory")
    p.add_argument("--fit", required=True, help="output directory of `fit`")
    p.add_argument("--data", required=True, help="CSV with x, y and the training covariates")
    p.add_argument("--selection", help="selection CSV; excluded coefficients are zeroed")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("simulate", help="run a scenario grid")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--rmse-mode", choices=("mean", "sum"))
    p.add_argument("--spatial-scale", choices=("sqrt_r", "r"))
    p.add_argument("--cr-level", type=float)
    p.add_argument("--hsp-cutoff", type=float)
    p.add_argument("--b-tuning", type=float)
    p.add_argument("--refit", action="store_true",
                   help="refit on selected covariates before predicting")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", help="rebuild tables from a raw simulation CSV")
    p.add_argument("--raw", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SweepError, FactorizationError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, MeshError, ModelError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
