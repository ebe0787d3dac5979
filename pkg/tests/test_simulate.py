import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from censpat.mesh import build_mesh, project
from censpat.model import ModelConfig, predict, run_chain
from censpat.selection import select_cr
from censpat.simulate import (ScenarioSpec, SimulationReport, ReplicateResult, apply_censoring,
                              censor_dataset, draw_true_beta, format_cell, gen_scenario_data, grid_sites,
                              mismatch_pct, prediction_rmse, run_scenarios, spatial_noise,
                              split_train_test)
from censpat.spde import PrecisionOperator, matern_correlation


# ---- metrics ------------------------------------------------------------------------

def test_rmse_examples():
    t = np.array([1.0, -2.0, 3.0])
    assert prediction_rmse(t, t) == 0.0
    assert prediction_rmse(t, t, "sum") == 0.0
    assert prediction_rmse([0, 0], [3, 4], "sum") == pytest.approx(5.0)
    assert prediction_rmse([0, 0], [3, 4], "mean") == pytest.approx(math.sqrt(12.5))
    assert prediction_rmse([0, 0], [3, 4]) == pytest.approx(3.5355339)


@pytest.mark.parametrize("args", [([1, 2], [1]), ([], []), ([1.0], [1.0], "median")])
def test_rmse_errors(args):
    with pytest.raises(ValueError):
        prediction_rmse(*args)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 10_000), c=st.floats(-100, 100))
def test_rmse_permutation_and_scale(seed, c):
    rng = np.random.default_rng(seed)
    t, p = rng.normal(size=(2, 20))
    perm = rng.permutation(20)
    base = prediction_rmse(t, p)
    assert prediction_rmse(t[perm], p[perm]) == pytest.approx(base)
    assert prediction_rmse(c * t, c * p) == pytest.approx(abs(c) * base, abs=1e-9)


def test_mismatch_examples():
    a = np.array([True, False, True, False])
    assert mismatch_pct(a, a) == 0.0
    assert mismatch_pct(a, ~a) == 100.0
    t = np.zeros(100, dtype=bool)
    s = t.copy()
    s[[3, 50]] = True
    assert mismatch_pct(t, s) == 2.0
    with pytest.raises(ValueError):
        mismatch_pct(a, a[:3])


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_mismatch_symmetric_and_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.random((2, 15)) < 0.4
    perm = rng.permutation(15)
    assert mismatch_pct(a, b) == mismatch_pct(b, a) == mismatch_pct(a[perm], b[perm])


def test_format_cell():
    assert format_cell(3.0234, 0.456) == "3.02 (0.46)"
    assert format_cell(2.0, 0.0) == "2.00 (0.00)"


# ---- censoring and split ------------------------------------------------------------

def test_censoring_type7_percentile():
    flags, limits = apply_censoring(np.arange(1, 101), 20)
    assert limits[0] == pytest.approx(20.8)
    assert np.all(limits == limits[0])
    assert flags.sum() == 20


def test_censoring_all_equal_flags_all():
    flags, _ = apply_censoring(np.full(7, 2.5), 20)
    assert flags.all()


@pytest.mark.parametrize("pct", [20, 45])
def test_censoring_fraction_gaussian(pct):
    y = np.random.default_rng(pct).normal(size=1600)
    frac = 100 * apply_censoring(y, pct)[0].mean()
    assert pct - 5 <= frac <= pct + 5


def test_censoring_empty():
    with pytest.raises(ValueError):
        apply_censoring([], 20)


def test_split():
    spec = ScenarioSpec(grid_side=4, p=3)
    data, _, y = gen_scenario_data(spec, 0, np.random.default_rng(0))
    small = data.subset(np.arange(10))
    train, test, (tr, te) = split_train_test(small, y[:10], 0.8, np.random.default_rng(5))
    assert (train.n, len(test.y_true)) == (8, 2)
    assert sorted(np.r_[tr, te].tolist()) == list(range(10))
    _, _, (tr2, te2) = split_train_test(small, y[:10], 0.8, np.random.default_rng(5))
    assert np.array_equal(tr, tr2) and np.array_equal(te, te2)
    np.testing.assert_array_equal(test.y_true, y[te])
    with pytest.raises(ValueError):
        split_train_test(small, y[:10], 1.0, np.random.default_rng(5))


# ---- data generation ----------------------------------------------------------------

@pytest.mark.parametrize("zeros, expected", [(0, 0), (100, 12), (50, 6), (95, 12), (5, 1)])
def test_true_beta_zero_count(zeros, expected):
    beta = draw_true_beta(12, zeros, np.random.default_rng(1))
    assert np.sum(beta == 0) == expected
    nz = np.abs(beta[beta != 0])
    assert np.all((nz >= 0.5) & (nz <= 2.0))


def test_all_zero_beta_gives_pure_noise():
    spec = ScenarioSpec(grid_side=5, p=4, zero_pct=100)
    data, beta, y = gen_scenario_data(spec, 0, np.random.default_rng(2))
    assert np.all(beta == 0)
    np.testing.assert_allclose(data.X @ beta, 0.0)
    assert data.n == 25 and data.p == 4
    # every column is a standard normal covariate, none is an intercept
    assert np.all(data.X.std(axis=0) > 0.3)


def test_grid_sites():
    s = grid_sites(3)
    assert s.shape == (9, 2)
    assert s.min() == 0.0 and s.max() == 1.0


def lag_semivariance(z, side, k):
    g = z.reshape(side, side)
    dx = (g[:, k:] - g[:, :-k]).ravel()
    dy = (g[k:, :] - g[:-k, :]).ravel()
    return 0.5 * np.mean(np.r_[dx, dy] ** 2)


def test_no_spatial_component_gives_flat_variogram():
    z = spatial_noise(grid_sites(30), 0.12, 0.0, np.random.default_rng(0))
    gam = [lag_semivariance(z, 30, k) for k in (1, 3, 8)]
    np.testing.assert_allclose(gam, 1.0, atol=0.1)


def test_variogram_matches_matern_curve():
    side, rho, r = 40, 0.12, 0.91
    spec = ScenarioSpec(grid_side=side, p=3, rho=rho, snr_r=r)
    rng = np.random.default_rng(2024)
    h = 1.0 / (side - 1)
    emp = {k: [] for k in (2, 4, 8)}  # lags 0.051, 0.103, 0.205
    for rep in range(10):
        data, beta, y = gen_scenario_data(spec, rep, rng)
        z = y - data.X @ beta
        for k in emp:
            emp[k].append(lag_semivariance(z, side, k))
    for k, vals in emp.items():
        want = 1.0 - r * matern_correlation(k * h, rho)
        assert np.mean(vals) == pytest.approx(want, abs=0.1)


def test_dense_generator_refuses_huge_grid():
    with pytest.raises(ValueError, match="use_spde"):
        spatial_noise(np.zeros((5000, 2)), 0.1, 0.5, np.random.default_rng(0))


def test_spde_generator_runs():
    z = spatial_noise(grid_sites(10), 0.2, 0.9, np.random.default_rng(0), use_spde=True)
    assert z.shape == (100,) and np.all(np.isfinite(z))


@pytest.mark.parametrize("kw", [dict(censor_pct=0), dict(zero_pct=101), dict(train_frac=1.0),
                                dict(grid_side=1)])
def test_spec_validation(kw):
    with pytest.raises(ValueError):
        ScenarioSpec(**kw)


# ---- harness ------------------------------------------------------------------------

FAST = ModelConfig(iterations=300, burn_in=5, thinning=10, seed=0)


@pytest.fixture(scope="module")
def tiny_report():
    spec = ScenarioSpec(grid_side=8, p=4, n_reps=1, seed=3, mesh_edge=0.2)
    return run_scenarios([spec], FAST, threads=1)


def test_single_rep_sd_zero_and_flagged(tiny_report):
    for m in ("Cr", "HSP", "S2M"):
        s = tiny_report.summary(0, m)
        assert s["rmse_sd"] == 0.0 and s["mismatch_sd"] == 0.0
        assert s["single_rep"] and s["n_ok"] == 1
        assert s["rmse_mean"] > 0


def test_rerun_is_bit_identical(tiny_report, tmp_path):
    spec = ScenarioSpec(grid_side=8, p=4, n_reps=1, seed=3, mesh_edge=0.2)
    again = run_scenarios([spec], FAST, threads=1)
    tiny_report.write_raw(tmp_path / "a.csv")
    again.write_raw(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_failed_replicate_is_recorded_and_excluded(caplog):
    spec = ScenarioSpec(grid_side=4, p=3, n_reps=1, mesh_edge=-1.0)
    rep = run_scenarios([spec], FAST, threads=1)
    assert len(rep.failures()) == 3
    assert rep.summary(0, "Cr")["n_ok"] == 0
    assert math.isnan(rep.summary(0, "Cr")["rmse_mean"])
    assert "failed" in caplog.text


def test_tables_and_raw_roundtrip(tmp_path):
    specs = [ScenarioSpec(rho=rho, snr_r=snr) for rho in (0.07, 0.2) for snr in (0.91, 0.8)]
    recs = []
    for i in range(4):
        for rep in range(2):
            for m in ("Cr", "HSP", "S2M"):
                recs.append(ReplicateResult(i, rep, m, 1.0 + i + 0.5 * rep, 2.0 * rep, 3))
    report = SimulationReport(specs, recs)
    report.write_table(tmp_path / "rmse.csv", "rmse")
    lines = (tmp_path / "rmse.csv").read_text().splitlines()
    assert lines[0].split(",")[:4] == ["censor_pct", "zero_pct", "rho", "SNR=0.91 Cr"]
    assert len(lines) == 3
    cells = lines[1].split(",")
    assert cells[3] == "1.25 (0.35)"
    report.write_raw(tmp_path / "raw.csv")
    back = SimulationReport.read_raw(tmp_path / "raw.csv")
    back.write_table(tmp_path / "rmse2.csv", "rmse")
    assert (tmp_path / "rmse2.csv").read_bytes() == (tmp_path / "rmse.csv").read_bytes()


def test_read_raw_reports_line(tmp_path):
    p = tmp_path / "raw.csv"
    p.write_text("scenario,censor_pct,rho,snr_r,zero_pct,rep,method,rmse,mismatch_pct,"
                 "n_selected,ok,error\n0,20,0.1,0.9,50,0,Cr,abc,0,1,1,\n")
    with pytest.raises(ValueError, match="line 2"):
        SimulationReport.read_raw(p)


@pytest.mark.slow
def test_cr_prediction_beats_intercept_only_baseline():
    spec = ScenarioSpec(grid_side=40, p=50, rho=0.12, snr_r=0.91, zero_pct=50, mesh_edge=0.04)
    cfg = ModelConfig(iterations=1500, burn_in=50, thinning=10, seed=0)
    wins = 0
    for rep in range(10):
        rng = np.random.default_rng([77, rep])
        data, beta, y = gen_scenario_data(spec, rep, rng)
        data = censor_dataset(data, spec.censor_pct, rng)
        train, test, _ = split_train_test(data, y, spec.train_frac, rng)
        mesh = build_mesh(train.sites, spec.mesh_edge)
        draws = run_chain(train, cfg, mesh, project(mesh, train.sites),
                          PrecisionOperator.from_mesh(mesh))
        pred = predict(draws, test.X, project(mesh, test.sites).A, select_cr(draws).mask)
        base = np.full(len(test.y_true), train.y.mean())
        wins += prediction_rmse(test.y_true, pred) < prediction_rmse(test.y_true, base)
    assert wins >= 9
