import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from censpat.ingest import (DataError, load_covariates, load_dataset, standardize_covariates,
                            transform_response, write_dataset)

HEADER = "site_id,x,y,response,censored,limit,elev,urban\n"


def write(tmp_path, body, name="data.csv", header=HEADER):
    p = tmp_path / name
    p.write_text(header + body)
    return p


TOY = ("a,0,0,1.5,0,,1,0\n"
       "b,1,0,,1,0.2,2,1\n"
       "c,0,1,3.0,0,,4,0\n")


def test_toy_three_rows(tmp_path):
    ds = load_dataset(None, write(tmp_path, TOY), transform=False, standardize=False)
    assert ds.n == 3 and ds.p == 3
    assert ds.names == ["intercept", "elev", "urban"]
    assert ds.censored.tolist() == [False, True, False]
    assert ds.limits[1] == 0.2 and math.isinf(ds.limits[0])
    assert ds.meta["n_dropped"] == 0
    assert ds.meta["site_ids"] == ["a", "b", "c"]


def test_missing_covariate_row_dropped(tmp_path):
    body = TOY + "d,1,1,2.0,0,,,1\n"
    ds = load_dataset(None, write(tmp_path, body), transform=False, standardize=False)
    assert ds.n == 3 and ds.meta["n_dropped"] == 1
    body = "a,0,0,1.5,0,,1,0\nb,1,0,,1,0.2,,1\nc,0,1,3.0,0,,4,0\n"
    ds = load_dataset(None, write(tmp_path, body), transform=False, standardize=False)
    assert ds.n == 2 and ds.meta["n_dropped"] == 1


def test_response_and_limit_missing_dropped(tmp_path):
    body = TOY + "d,1,1,,1,,2,1\n"
    ds = load_dataset(None, write(tmp_path, body), transform=False, standardize=False)
    assert ds.n == 3 and ds.meta["n_dropped"] == 1


def test_nondetect_limit_falls_back_to_response(tmp_path):
    body = TOY + "d,1,1,0.7,1,,2,1\n"
    ds = load_dataset(None, write(tmp_path, body), transform=False, standardize=False)
    assert ds.limits[3] == 0.7 and ds.censored[3]


def test_synthetic_paper_shape(tmp_path):
    rng = np.random.default_rng(0)
    n, n_cens = 2394, 1644
    cens = np.zeros(n, dtype=int)
    cens[rng.permutation(n)[:n_cens]] = 1
    lines = []
    for i in range(n):
        resp = "" if cens[i] else f"{rng.uniform(5, 20):.4f}"
        lim = f"{rng.uniform(1, 4):.4f}" if cens[i] else ""
        lines.append(f"s{i},{rng.uniform():.6f},{rng.uniform():.6f},{resp},{cens[i]},{lim},"
                     f"{rng.normal():.5f},{rng.normal():.5f}\n")
    ds = load_dataset(None, write(tmp_path, "".join(lines)))
    assert ds.n == 2394
    assert round(100 * ds.censored.mean(), 2) == 68.67


def test_separate_sites_file(tmp_path):
    sites = write(tmp_path, "a,0,0\nb,1,0\nc,0,1\n", "sites.csv", "site_id,x,y\n")
    data = write(tmp_path, "a,1.5,0,,1\nb,,1,0.2,2\nc,3.0,0,,4\n",
                 header="site_id,response,censored,limit,elev\n")
    ds = load_dataset(sites, data, transform=False, standardize=False)
    np.testing.assert_array_equal(ds.sites, [[0, 0], [1, 0], [0, 1]])
    bad = write(tmp_path, "z,1.5,0,,1\n", "bad.csv", "site_id,response,censored,limit,elev\n")
    with pytest.raises(DataError, match="'z'"):
        load_dataset(sites, bad)


def test_schema_mapping_and_unknown_key(tmp_path):
    p = write(tmp_path, TOY, header="site_id,x,y,pfos,censored,limit,elev,urban\n")
    ds = load_dataset(None, p, {"response": "pfos"}, transform=False, standardize=False)
    assert ds.n == 3
    with pytest.raises(DataError, match="not in header"):
        load_dataset(None, p)
    with pytest.raises(DataError, match="unknown schema"):
        load_dataset(None, p, {"colour": "x"})


def test_non_numeric_cell_located(tmp_path):
    body = "a,0,0,1.5,0,,1,0\nb,1,0,2.0,0,,high,1\n"
    with pytest.raises(DataError, match=r"row 3, column 'elev'"):
        load_dataset(None, write(tmp_path, body))


def test_bad_flag_and_ragged_row(tmp_path):
    with pytest.raises(DataError, match="0 or 1"):
        load_dataset(None, write(tmp_path, "a,0,0,1.5,2,,1,0\n"))
    with pytest.raises(DataError, match="row 2"):
        load_dataset(None, write(tmp_path, "a,0,0,1.5\n"))


def test_transform_applied_to_limits(tmp_path):
    ds = load_dataset(None, write(tmp_path, TOY), standardize=False)
    assert ds.y[0] == pytest.approx(math.log1p(math.log1p(1.5)))
    assert ds.limits[1] == pytest.approx(math.log1p(math.log1p(0.2)))
    with pytest.raises(DataError, match="non-negative"):
        load_dataset(None, write(tmp_path, "a,0,0,-1,0,,1,0\nb,1,1,1,0,,2,1\n"))


# ---- transform ----------------------------------------------------------------------

def test_transform_examples():
    assert transform_response(0.0) == 0.0
    assert transform_response(math.e - 1) == pytest.approx(math.log(2))
    assert transform_response(math.e - 1) == pytest.approx(0.693147, abs=1e-6)
    with pytest.raises(ValueError):
        transform_response(-0.1)


def test_transform_monotone_on_random_pairs():
    rng = np.random.default_rng(0)
    a, b = np.sort(rng.exponential(50, (2, 10_000)), axis=0)
    keep = a < b
    assert np.all(transform_response(a[keep]) < transform_response(b[keep]))


@settings(max_examples=200, deadline=None)
@given(y=st.floats(0, 1e6), u=st.floats(0, 1e6))
def test_transform_preserves_censoring_order(y, u):
    assert (y <= u) == (transform_response(y) <= transform_response(u))


# ---- standardization ----------------------------------------------------------------

def test_standardize_examples():
    X = np.column_stack([np.ones(3), [1.0, 2.0, 3.0]])
    Xs, means, sds = standardize_covariates(X)
    np.testing.assert_array_equal(Xs[:, 1], [-1.0, 0.0, 1.0])
    np.testing.assert_array_equal(Xs[:, 0], 1.0)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_standardize_roundtrip(seed):
    rng = np.random.default_rng(seed)
    X = np.column_stack([np.ones(20), rng.normal(5, 3, (20, 3))])
    Xs, means, sds = standardize_covariates(X)
    np.testing.assert_allclose(Xs * sds + means, X, atol=1e-12)
    np.testing.assert_allclose(Xs[:, 1:].std(axis=0, ddof=1), 1.0)


def test_standardize_constant_column_named():
    X = np.column_stack([np.ones(4), [1.0, 2, 3, 4], np.full(4, 7.0)])
    with pytest.raises(DataError, match="column 2"):
        standardize_covariates(X)


# ---- round-trip ---------------------------------------------------------------------

def test_write_then_load_is_identical(tmp_path):
    src = load_dataset(None, write(tmp_path, TOY + "d,0.5,0.5,0.1,1,0.1,3,1\n"))
    write_dataset(src, tmp_path / "out.csv")
    back = load_dataset(None, tmp_path / "out.csv", transform=False, standardize=False)
    for attr in ("sites", "X", "y", "censored", "limits"):
        np.testing.assert_array_equal(getattr(back, attr), getattr(src, attr))
    assert back.names == src.names
    assert back.meta["site_ids"] == src.meta["site_ids"]


def test_bundled_synthetic_loads():
    from pathlib import Path
    ds = load_dataset(None, Path(__file__).parents[1] / "data" / "synthetic_200.csv")
    assert ds.n == 200 and ds.p == 5
    assert 0.3 < ds.censored.mean() < 0.4


def test_load_covariates_uses_training_stats(tmp_path):
    ds = load_dataset(None, write(tmp_path, TOY))
    p = write(tmp_path, "q,0.5,0.5,2,1\n", "new.csv", "site_id,x,y,elev,urban\n")
    ids, sites, X = load_covariates(p, ds.names, ds.meta["covariate_means"],
                                    ds.meta["covariate_sds"])
    assert ids == ["q"]
    m, s = ds.meta["covariate_means"], ds.meta["covariate_sds"]
    np.testing.assert_allclose(X[0], [1.0, (2 - m[1]) / s[1], (1 - m[2]) / s[2]])
    with pytest.raises(DataError, match="urban"):
        load_covariates(write(tmp_path, "q,0,0,1\n", "n2.csv", "site_id,x,y,elev\n"), ds.names)
