"""Synthetic censored spatial data and the replicate/scenario harness."""
from __future__ import annotations

import csv
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import linalg
from scipy.spatial.distance import cdist

from .mesh import build_mesh, project
from .model import ModelConfig, SpatialDataset, predict, run_chain
from .selection import METHODS, select
from .spde import PrecisionOperator, factorize, matern_correlation

log = logging.getLogger(__name__)

DENSE_LIMIT = 4000


@dataclass
class ScenarioSpec:
    grid_side: int = 40
    p: int = 50
    censor_pct: float = 20.0
    rho: float = 0.12
    snr_r: float = 0.91
    zero_pct: float = 50.0
    n_reps: int = 10
    train_frac: float = 0.8
    seed: int = 0
    signal_low: float = 0.5
    signal_high: float = 2.0
    use_spde: bool = False  # generate the field with the SPDE sampler
    mesh_edge: float = 0.04  # fitting mesh
    mesh_extension: float | None = None

    def __post_init__(self):
        if not 0 < self.censor_pct < 100:
            raise ValueError("censor_pct must lie in (0, 100)")
        if not 0 <= self.zero_pct <= 100:
            raise ValueError("zero_pct must lie in [0, 100]")
        if not 0 < self.train_frac < 1:
            raise ValueError("train_frac must lie in (0, 1)")
        if self.grid_side < 2 or self.p < 1 or self.n_reps < 1:
            raise ValueError("grid_side >= 2, p >= 1 and n_reps >= 1 required")

    @property
    def label(self) -> str:
        return (f"cens{self.censor_pct:g}_rho{self.rho:g}_snr{self.snr_r:g}"
                f"_zeros{self.zero_pct:g}")


@dataclass
class TestSet:
    sites: np.ndarray
    X: np.ndarray
    y_true: np.ndarray


def grid_sites(side: int) -> np.ndarray:
    g = np.linspace(0.0, 1.0, side)
    gx, gy = np.meshgrid(g, g)
    return np.column_stack([gx.ravel(), gy.ravel()])


def draw_true_beta(p: int, zero_pct: float, rng, low=0.5, high=2.0) -> np.ndarray:
    n_zero = math.ceil(p * zero_pct / 100.0 - 1e-9)
    beta = rng.uniform(low, high, p) * rng.choice([-1.0, 1.0], p)
    beta[rng.permutation(p)[:n_zero]] = 0.0
    return beta


def spatial_noise(sites, rho: float, r: float, rng, use_spde: bool = False) -> np.ndarray:
    """One draw of Z with covariance r * Matern(rho) + (1 - r) I."""
    n = len(sites)
    nugget = math.sqrt(1.0 - r) * rng.standard_normal(n)
    if r == 0:
        return nugget
    if use_spde:
        mesh = build_mesh(sites, target_edge=min(0.02, rho / 4))
        A = project(mesh, sites).A
        w = factorize(PrecisionOperator.from_mesh(mesh)(rho)).sample(rng)
        return math.sqrt(r) * (A @ w) + nugget
    if n > DENSE_LIMIT:
        raise ValueError(f"{n} sites is too many for the dense generator; set use_spde=True")
    corr = matern_correlation(cdist(sites, sites), rho)
    L = linalg.cholesky(corr + 1e-10 * np.eye(n), lower=True)
    return math.sqrt(r) * (L @ rng.standard_normal(n)) + nugget


def gen_scenario_data(spec: ScenarioSpec, rep_index: int, rng):
    """Uncensored dataset on the unit-square lattice, the true beta and true y.

    All ``p`` columns of X are iid standard normal; there is no intercept.
    """
    sites = grid_sites(spec.grid_side)
    n = len(sites)
    X = rng.standard_normal((n, spec.p))
    beta = draw_true_beta(spec.p, spec.zero_pct, rng, spec.signal_low, spec.signal_high)
    z = spatial_noise(sites, spec.rho, spec.snr_r, rng, spec.use_spde)
    y = X @ beta + z  # sigma^2 = 1
    data = SpatialDataset(sites, X, y, np.zeros(n, dtype=bool), np.full(n, np.inf))
    return data, beta, y.copy()


def apply_censoring(y, censor_pct: float, rng=None):
    """Flags and limits for a single shared detection limit at the given percentile."""
    y = np.asarray(y, dtype=float)
    if y.size == 0:
        raise ValueError("empty response vector")
    u = float(np.percentile(y, censor_pct))
    return y <= u, np.full(y.size, u)


def censor_dataset(data: SpatialDataset, censor_pct: float, rng=None) -> SpatialDataset:
    flags, limits = apply_censoring(data.y, censor_pct, rng)
    return replace(data, censored=flags, limits=limits)


def split_train_test(data: SpatialDataset, true_y, train_frac: float, rng):
    if not 0 < train_frac < 1:
        raise ValueError("train_frac must lie in (0, 1)")
    n = data.n
    perm = rng.permutation(n)
    n_train = int(round(train_frac * n))
    train_idx, test_idx = np.sort(perm[:n_train]), np.sort(perm[n_train:])
    test = TestSet(data.sites[test_idx], data.X[test_idx], np.asarray(true_y)[test_idx])
    return data.subset(train_idx), test, (train_idx, test_idx)


def prediction_rmse(truth, pred, mode: str = "mean") -> float:
    truth = np.asarray(truth, dtype=float)
    pred = np.asarray(pred, dtype=float)
    if truth.shape != pred.shape or truth.size == 0:
        raise ValueError("truth and pred must be equal-length, non-empty vectors")
    ss = float(np.sum((truth - pred) ** 2))
    if mode == "mean":
        return math.sqrt(ss / truth.size)
    if mode == "sum":
        return math.sqrt(ss)
    raise ValueError(f"unknown rmse mode {mode!r}")


def mismatch_pct(true_mask, selected_mask) -> float:
    a = np.asarray(true_mask, dtype=bool)
    b = np.asarray(selected_mask, dtype=bool)
    if a.shape != b.shape:
        raise ValueError("masks differ in length")
    return 100.0 * float(np.sum(a != b)) / a.size


# ---- harness ---------------------------------------------------------------

@dataclass
class ReplicateResult:
    scenario: int
    rep: int
    method: str
    rmse: float
    mismatch: float
    n_selected: int
    ok: bool = True
    error: str = ""


@dataclass
class SimulationReport:
    specs: list
    records: list = field(default_factory=list)
    rmse_mode: str = "mean"

    def successful(self, scenario: int, method: str) -> list:
        return [r for r in self.records
                if r.scenario == scenario and r.method == method and r.ok]

    def summary(self, scenario: int, method: str) -> dict:
        rs = self.successful(scenario, method)
        rm = np.array([r.rmse for r in rs])
        mm = np.array([r.mismatch for r in rs])

        def sd(x):
            return float(np.std(x, ddof=1)) if x.size > 1 else 0.0

        return {"rmse_mean": float(rm.mean()) if rm.size else math.nan, "rmse_sd": sd(rm),
                "mismatch_mean": float(mm.mean()) if mm.size else math.nan,
                "mismatch_sd": sd(mm), "n_ok": len(rs), "single_rep": len(rs) == 1}

    def failures(self) -> list:
        return [r for r in self.records if not r.ok]

    # CSV output
    def write_raw(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["scenario", "censor_pct", "rho", "snr_r", "zero_pct", "rep", "method",
                        "rmse", "mismatch_pct", "n_selected", "ok", "error"])
            for r in self.records:
                s = self.specs[r.scenario]
                w.writerow([r.scenario, f"{s.censor_pct:g}", f"{s.rho:g}", f"{s.snr_r:g}",
                            f"{s.zero_pct:g}", r.rep, r.method, repr(float(r.rmse)),
                            repr(float(r.mismatch)), r.n_selected, int(r.ok), r.error])

    @classmethod
    def read_raw(cls, path, rmse_mode: str = "mean") -> "SimulationReport":
        """Rebuild a report from ``write_raw`` output (scenario factors only)."""
        with Path(path).open(newline="") as fh:
            rows = list(csv.DictReader(fh))
        specs: dict[int, ScenarioSpec] = {}
        records = []
        for line, r in enumerate(rows, start=2):
            try:
                i = int(r["scenario"])
                if i not in specs:
                    specs[i] = ScenarioSpec(censor_pct=float(r["censor_pct"]), rho=float(r["rho"]),
                                            snr_r=float(r["snr_r"]), zero_pct=float(r["zero_pct"]))
                records.append(ReplicateResult(i, int(r["rep"]), r["method"], float(r["rmse"]),
                                               float(r["mismatch_pct"]), int(r["n_selected"]),
                                               r["ok"] == "1", r["error"]))
            except (KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}: line {line}: malformed raw record ({exc})") from None
        if sorted(specs) != list(range(len(specs))):
            raise ValueError(f"{path}: scenario indices are not contiguous")
        return cls([specs[i] for i in range(len(specs))], records, rmse_mode)

    def write_table(self, path, metric: str) -> None:
        """Wide table: rows censoring x zeros x rho, columns SNR x method."""
        snrs = sorted({s.snr_r for s in self.specs}, reverse=True)
        keys = sorted({(s.censor_pct, s.zero_pct, s.rho) for s in self.specs},
                      key=lambda k: (k[0], -k[1], k[2]))
        index = {(s.censor_pct, s.zero_pct, s.rho, s.snr_r): i for i, s in enumerate(self.specs)}
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["censor_pct", "zero_pct", "rho"]
                       + [f"SNR={snr:g} {m}" for snr in snrs for m in METHODS])
            for cens, zeros, rho in keys:
                row = [f"{cens:g}", f"{zeros:g}", f"{rho:g}"]
                for snr in snrs:
                    for m in METHODS:
                        i = index.get((cens, zeros, rho, snr))
                        if i is None:
                            row.append("")
                            continue
                        sm = self.summary(i, m)
                        row.append(format_cell(sm[f"{metric}_mean"], sm[f"{metric}_sd"]))
                w.writerow(row)


def format_cell(mean: float, sd: float) -> str:
    return "%.2f (%.2f)" % (mean, sd)


def replicate_seed(seed: int, scenario: int, rep: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed, scenario, rep])


def run_replicate(spec: ScenarioSpec, scenario: int, rep: int, cfg: ModelConfig,
                  rmse_mode: str = "mean", cr_level: float = 0.95, hsp_cutoff: float = 0.5,
                  b_tuning: float | None = None, refit: bool = False) -> list:
    """Generate, censor, split, fit, select and score one replicate."""
    ss = replicate_seed(spec.seed, scenario, rep)
    data_ss, chain_ss = ss.spawn(2)
    rng = np.random.default_rng(data_ss)
    data, beta, y_true = gen_scenario_data(spec, rep, rng)
    data = censor_dataset(data, spec.censor_pct, rng)
    train, test, _ = split_train_test(data, y_true, spec.train_frac, rng)
    mesh = build_mesh(train.sites, spec.mesh_edge, spec.mesh_extension)
    op = PrecisionOperator.from_mesh(mesh)
    A_train = project(mesh, train.sites)
    A_test = project(mesh, test.sites).A
    chain_seed = int(chain_ss.generate_state(1)[0])
    fit_cfg = replace(cfg, seed=chain_seed)
    draws = run_chain(train, fit_cfg, mesh, A_train, op)
    truth = beta != 0
    out = []
    for m in METHODS:
        res = select(draws, m, cr_level=cr_level, hsp_cutoff=hsp_cutoff, b_tuning=b_tuning)
        if refit and 0 < res.n_selected < train.p:
            sub = run_chain(train.with_columns(res.mask), fit_cfg, mesh, A_train, op)
            pred = predict(sub, test.X[:, res.mask], A_test)
        else:
            pred = predict(draws, test.X, A_test, res.mask)
        out.append(ReplicateResult(scenario, rep, m, prediction_rmse(test.y_true, pred, rmse_mode),
                                   mismatch_pct(truth, res.mask), res.n_selected))
    return out


def _run_one(args):
    spec, scenario, rep, cfg, kw = args
    try:
        return run_replicate(spec, scenario, rep, cfg, **kw)
    except Exception as exc:  # recorded, excluded from aggregation, reported
        log.warning("scenario %d rep %d failed: %s", scenario, rep, exc)
        return [ReplicateResult(scenario, rep, m, math.nan, math.nan, 0, False, str(exc))
                for m in METHODS]


def run_scenarios(specs, cfg: ModelConfig, *, threads: int | None = None,
                  rmse_mode: str = "mean", cr_level: float = 0.95, hsp_cutoff: float = 0.5,
                  b_tuning: float | None = None, refit: bool = False) -> SimulationReport:
    specs = list(specs)
    kw = dict(rmse_mode=rmse_mode, cr_level=cr_level, hsp_cutoff=hsp_cutoff,
              b_tuning=b_tuning, refit=refit)
    jobs = [(spec, i, rep, cfg, kw) for i, spec in enumerate(specs) for rep in range(spec.n_reps)]
    threads = threads or os.cpu_count() or 1
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]
    report = SimulationReport(specs, [r for batch in results for r in batch], rmse_mode)
    for r in report.failures():
        if r.method == METHODS[0]:
            log.warning("excluded failed replicate: scenario %d rep %d (%s)", r.scenario, r.rep,
                        r.error)
    return report


def spec_dict(spec: ScenarioSpec) -> dict:
    return asdict(spec)
