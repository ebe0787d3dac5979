import csv
import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from censpat.cli import main
from censpat.draws import PosteriorDraws

ROOT = Path(__file__).parents[1]
DATA = ROOT / "data" / "synthetic_200.csv"
FIT_INI = ROOT / "data" / "fit_small.ini"
SMOKE_INI = ROOT / "data" / "simulate_smoke.ini"


def digest(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@pytest.fixture(scope="module")
def fit_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("fit")
    assert main(["fit", "--data", str(DATA), "--config", str(FIT_INI), "--out", str(out)]) == 0
    return out


def test_fit_outputs(fit_dir):
    draws = PosteriorDraws.from_csv(fit_dir / "draws.csv")
    assert draws.n_draws == 2000 // 10 - 50
    assert draws.p == 5
    for name in ("trace_summary.csv", "coefficients.csv", "mesh.txt", "config.ini",
                 "manifest.json"):
        assert (fit_dir / name).exists(), name
    man = json.loads((fit_dir / "manifest.json").read_text())
    assert man["command"] == "fit" and man["seed"] == 1
    assert man["inputs"][str(DATA)] == digest(DATA)
    assert man["outputs"]["draws.csv"] == digest(fit_dir / "draws.csv")
    assert (fit_dir / "config.ini").read_text() == FIT_INI.read_text()


def test_fit_is_deterministic(fit_dir, tmp_path):
    assert main(["fit", "--data", str(DATA), "--config", str(FIT_INI), "--out", str(tmp_path)]) == 0
    assert digest(tmp_path / "draws.csv") == digest(fit_dir / "draws.csv")


def test_fit_does_not_touch_inputs(fit_dir):
    before = digest(DATA)
    main(["fit", "--data", str(DATA), "--config", str(FIT_INI), "--out", str(fit_dir / "again")])
    assert digest(DATA) == before


def test_missing_config_key_exit_2(tmp_path, capsys):
    ini = tmp_path / "bad.ini"
    ini.write_text(FIT_INI.read_text().replace("thinning = 10\n", ""))
    assert main(["fit", "--data", str(DATA), "--config", str(ini), "--out", str(tmp_path)]) == 2
    assert "model.thinning" in capsys.readouterr().err


def test_bad_data_exit_3(tmp_path, capsys):
    bad = tmp_path / "d.csv"
    bad.write_text("site_id,x,y,response,censored,limit,a\ns,0,0,1,0,,oops\n")
    assert main(["fit", "--data", str(bad), "--config", str(FIT_INI), "--out", str(tmp_path)]) == 3
    assert "row 2" in capsys.readouterr().err


def test_select_all_three(fit_dir, tmp_path, capsys):
    assert main(["select", "--draws", str(fit_dir / "draws.csv"), "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    for m in ("Cr", "HSP", "S2M"):
        assert (tmp_path / f"selection_{m}.csv").exists()
        assert f"method={m} selected=" in out
    assert "of 5" in out
    assert (tmp_path / "manifest.json").exists()


def test_select_hsp_cutoff_superset(fit_dir, tmp_path):
    masks = {}
    for cut in ("0.5", "0.9"):
        d = tmp_path / cut
        assert main(["select", "--draws", str(fit_dir / "draws.csv"), "--method", "HSP",
                     "--hsp-cutoff", cut, "--out", str(d)]) == 0
        with (d / "selection_HSP.csv").open() as fh:
            masks[cut] = np.array([int(r["included"]) for r in csv.DictReader(fh)], dtype=bool)
    assert np.all(masks["0.9"][masks["0.5"]])


def test_select_all_zero_draws(tmp_path, capsys):
    k = 20
    d = PosteriorDraws(np.zeros((k, 3)), np.ones((k, 3)), np.full(k, 0.5), np.ones(k),
                       np.full(k, 0.5), np.full(k, 0.1))
    d.to_csv(tmp_path / "draws.csv")
    assert main(["select", "--draws", str(tmp_path / "draws.csv"), "--method", "Cr",
                 "--out", str(tmp_path / "o")]) == 0
    assert "method=Cr selected=0 of 3" in capsys.readouterr().out


def test_select_malformed_draws_exit_3(tmp_path, capsys):
    (tmp_path / "draws.csv").write_text("beta_1,lambda_1,tau,sigma2,r,rho\n1,2,3,4,5,x\n")
    assert main(["select", "--draws", str(tmp_path / "draws.csv"), "--out", str(tmp_path)]) == 3
    assert "line 2" in capsys.readouterr().err


def test_predict(fit_dir, tmp_path):
    rows = DATA.read_text().splitlines()
    (tmp_path / "new.csv").write_text("\n".join(rows[:6]) + "\n")
    assert main(["select", "--draws", str(fit_dir / "draws.csv"), "--method", "Cr",
                 "--out", str(tmp_path / "sel")]) == 0
    assert main(["predict", "--fit", str(fit_dir), "--data", str(tmp_path / "new.csv"),
                 "--selection", str(tmp_path / "sel" / "selection_Cr.csv"),
                 "--out", str(tmp_path / "pred")]) == 0
    with (tmp_path / "pred" / "predictions.csv").open() as fh:
        got = list(csv.DictReader(fh))
    assert len(got) == 5
    assert all(np.isfinite(float(r["prediction"])) for r in got)


def test_mesh_command(tmp_path):
    assert main(["mesh", "--data", str(DATA), "--edge", "0.1", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "mesh.txt").read_text().startswith("nodes ")
    assert main(["mesh", "--data", str(DATA), "--out", str(tmp_path / "x")]) == 2


@pytest.fixture(scope="module")
def smoke_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert main(["simulate", "--config", str(SMOKE_INI), "--out", str(out), "--threads", "1"]) == 0
    return out


def test_simulate_outputs_and_format(smoke_dir):
    import re
    lines = (smoke_dir / "table_rmse.csv").read_text().splitlines()
    assert lines[0].startswith("censor_pct,zero_pct,rho,SNR=0.91 Cr")
    cells = next(csv.reader([lines[1]]))[3:]
    assert all(re.fullmatch(r"-?\d+\.\d{2} \(\d+\.\d{2}\)", c) for c in cells)
    with (smoke_dir / "raw.csv").open() as fh:
        assert len(list(csv.DictReader(fh))) == 2 * 3
    assert (smoke_dir / "manifest.json").exists()


def test_simulate_rerun_identical(smoke_dir, tmp_path):
    assert main(["simulate", "--config", str(SMOKE_INI), "--out", str(tmp_path),
                 "--threads", "1"]) == 0
    for name in ("raw.csv", "table_rmse.csv", "table_mismatch.csv"):
        assert digest(tmp_path / name) == digest(smoke_dir / name)


def test_report_rebuilds_tables(smoke_dir, tmp_path):
    assert main(["report", "--raw", str(smoke_dir / "raw.csv"), "--out", str(tmp_path)]) == 0
    for name in ("table_rmse.csv", "table_mismatch.csv"):
        assert digest(tmp_path / name) == digest(smoke_dir / name)
