"""Loading censored spatial data from CSV.

Expected columns: ``site_id, x, y, response, censored, limit``; every other
column is a numeric covariate. Empty cells are missing values. Coordinates
may instead live in a separate sites file keyed by ``site_id``.
"""
from __future__ import annotations

import csv
import logging
import math
from pathlib import Path

import numpy as np

from .model import SpatialDataset

log = logging.getLogger(__name__)

REQUIRED = ("site_id", "x", "y", "response", "censored", "limit")


class DataError(ValueError):
    pass


def transform_response(y):
    """Iterated log transform ``log(1 + log(1 + y))`` for concentrations y >= 0."""
    arr = np.asarray(y, dtype=float)
    if np.any(arr < 0):
        raise ValueError("transform_response needs non-negative input")
    out = np.log1p(np.log1p(arr))
    return float(out) if out.ndim == 0 else out


def standardize_covariates(X, intercept: bool = True):
    """Center and scale non-intercept columns to unit sample SD.

    Returns ``(X_std, means, sds)`` with mean 0 and sd 1 recorded for the
    intercept column, so ``X_std * sds + means`` reproduces ``X``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    means = X.mean(axis=0)
    sds = X.std(axis=0, ddof=1) if len(X) > 1 else np.zeros(X.shape[1])
    start = 1 if intercept else 0
    if intercept:
        means[0], sds[0] = 0.0, 1.0
    bad = [j for j in range(start, X.shape[1]) if not sds[j] > 0]
    if bad:
        raise DataError(f"covariate column {bad[0]} has zero variance")
    return (X - means) / sds, means, sds


def _read_csv(path) -> tuple[list[str], list[list[str]]]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    body = [r for r in rows[1:] if any(c.strip() for c in r)]
    for i, r in enumerate(body):
        if len(r) != len(header):
            raise DataError(f"{path}: row {i + 2} has {len(r)} cells, header has {len(header)}")
    return header, body


def _num(cell: str, path, row: int, col: str) -> float:
    cell = cell.strip()
    if cell == "" or cell.upper() == "NA":
        return math.nan
    try:
        return float(cell)
    except ValueError:
        raise DataError(f"{path}: row {row}, column {col!r}: non-numeric value {cell!r}") from None


def load_dataset(sites_path, data_path, schema: dict | None = None, *,
                 transform: bool = True, standardize: bool = True) -> SpatialDataset:
    """Read a censored spatial dataset.

    ``schema`` maps the logical names in ``REQUIRED`` to column names.
    Rows with a missing covariate or coordinate, or with neither a usable
    response nor a limit, are dropped; the count is stored in
    ``dataset.meta["n_dropped"]``.
    """
    schema = {k: k for k in REQUIRED} | dict(schema or {})
    unknown = set(schema) - set(REQUIRED)
    if unknown:
        raise DataError(f"unknown schema key(s): {sorted(unknown)}")
    header, body = _read_csv(data_path)
    col = {h: j for j, h in enumerate(header)}

    coords = None
    if sites_path is not None:
        sh, sb = _read_csv(sites_path)
        for key in ("site_id", "x", "y"):
            if schema[key] not in sh:
                raise DataError(f"{sites_path}: missing column {schema[key]!r}")
        sj = {h: j for j, h in enumerate(sh)}
        coords = {r[sj[schema["site_id"]]].strip(): (
            _num(r[sj[schema["x"]]], sites_path, i + 2, schema["x"]),
            _num(r[sj[schema["y"]]], sites_path, i + 2, schema["y"])) for i, r in enumerate(sb)}
        needed = ("site_id", "response", "censored", "limit")
    else:
        needed = REQUIRED
    for key in needed:
        if schema[key] not in col:
            raise DataError(f"{data_path}: schema column {schema[key]!r} ({key}) not in header")
    reserved = {schema[k] for k in REQUIRED}
    cov_names = [h for h in header if h not in reserved]

    sites, X, y, cens, lim, ids = [], [], [], [], [], []
    dropped = 0
    for i, r in enumerate(body):
        line = i + 2
        sid = r[col[schema["site_id"]]].strip()
        if coords is not None:
            if sid not in coords:
                raise DataError(f"{data_path}: row {line}: site_id {sid!r} not in sites file")
            xy = coords[sid]
        else:
            xy = (_num(r[col[schema["x"]]], data_path, line, schema["x"]),
                  _num(r[col[schema["y"]]], data_path, line, schema["y"]))
        resp = _num(r[col[schema["response"]]], data_path, line, schema["response"])
        limit = _num(r[col[schema["limit"]]], data_path, line, schema["limit"])
        cflag = _num(r[col[schema["censored"]]], data_path, line, schema["censored"])
        covs = [_num(r[col[h]], data_path, line, h) for h in cov_names]
        if cflag not in (0.0, 1.0) and not math.isnan(cflag):
            raise DataError(f"{data_path}: row {line}, column {schema['censored']!r}: "
                            f"censoring flag must be 0 or 1")
        is_cens = cflag == 1.0
        if is_cens and math.isnan(limit):
            limit = resp  # non-detects often report the limit as the value
        usable = (not math.isnan(limit)) if is_cens else (not math.isnan(resp))
        if (any(math.isnan(v) for v in covs) or any(math.isnan(v) for v in xy)
                or math.isnan(cflag) or not usable):
            dropped += 1
            continue
        sites.append(xy)
        X.append(covs)
        y.append(resp if not is_cens else limit)
        cens.append(is_cens)
        lim.append(limit if is_cens else math.inf)
        ids.append(sid)
    if not sites:
        raise DataError(f"{data_path}: no complete rows")
    if dropped:
        log.info("dropped %d incomplete row(s) from %s", dropped, data_path)

    y = np.array(y)
    lim = np.array(lim)
    cens = np.array(cens, dtype=bool)
    if transform:
        if np.any(y < 0) or np.any(lim[cens] < 0):
            raise DataError("the response transform needs non-negative responses and limits")
        y = transform_response(y)
        lim = np.where(cens, transform_response(np.where(cens, lim, 0.0)), math.inf)
    Xr = np.column_stack([np.ones(len(sites)), np.array(X).reshape(len(sites), len(cov_names))])
    if standardize:
        Xs, means, sds = standardize_covariates(Xr)
    else:
        Xs, means, sds = Xr, np.zeros(Xr.shape[1]), np.ones(Xr.shape[1])
    return SpatialDataset(np.array(sites), Xs, y, cens, lim, ["intercept"] + cov_names, {"n_dropped": dropped, "site_ids": ids, "covariate_means": means.tolist(),
               "covariate_sds": sds.tolist(), "transform": transform, "standardize": standardize})


def write_dataset(ds: SpatialDataset, path, site_ids=None) -> None:
    """Write ``ds`` in the loader's single-file layout (intercept column omitted)."""
    names = ds.names or ["intercept"] + [f"x{j}" for j in range(1, ds.p)]
    ids = site_ids or ds.meta.get("site_ids") or [str(i) for i in range(ds.n)]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(REQUIRED) + names[1:])
        for i in range(ds.n):
            w.writerow([ids[i], repr(float(ds.sites[i, 0])), repr(float(ds.sites[i, 1])),
                        repr(float(ds.y[i])), int(ds.censored[i]),
                        repr(float(ds.limits[i])) if ds.censored[i] else ""]
                       + [repr(float(v)) for v in ds.X[i, 1:]])


def load_covariates(path, names, means=None, sds=None):
    """Sites and design matrix for prediction, standardized with training statistics.

    ``names`` lists the training columns (first entry the intercept).
    """
    header, body = _read_csv(path)
    col = {h: j for j, h in enumerate(header)}
    for key in ["x", "y"] + list(names[1:]):
        if key not in col:
            raise DataError(f"{path}: missing column {key!r}")
    sites = np.array([[_num(r[col["x"]], path, i + 2, "x"), _num(r[col["y"]], path, i + 2, "y")]
                      for i, r in enumerate(body)])
    X = np.array([[1.0] + [_num(r[col[h]], path, i + 2, h) for h in names[1:]]
                  for i, r in enumerate(body)]).reshape(len(body), len(names))
    if np.isnan(X).any() or np.isnan(sites).any():
        raise DataError(f"{path}: prediction rows must be complete")
    if means is not None:
        X = (X - np.asarray(means)) / np.asarray(sds)
    ids = [r[col["site_id"]] for r in body] if "site_id" in col else [str(i) for i in range(len(body))]
    return ids, sites, X
