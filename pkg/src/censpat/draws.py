"""Stored posterior draws and their CSV/JSON serialization."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SCALAR_COLUMNS = ("tau", "sigma2", "r", "rho")


def spatial_multiplier(r, spatial_scale: str):
    """Factor ``c(r)`` in the spatial term ``sigma * c(r) * A w``."""
    if spatial_scale == "sqrt_r":
        return np.sqrt(r)
    if spatial_scale == "r":
        return np.asarray(r, dtype=float)
    raise ValueError(f"unknown spatial_scale {spatial_scale!r}")


@dataclass
class PosteriorDraws:
    """Thinned post-burn-in draws, one row per kept sweep.

    CSV column layout: ``beta_1..beta_p, lambda_1..lambda_p, tau, sigma2, r, rho``.
    ``field_mean`` is the posterior mean of the scaled mesh field
    ``sigma c(r) w`` over the same kept sweeps; ``w_star`` holds every kept
    unscaled draw only when requested.
    """

    beta: np.ndarray  # (k, p)
    lam: np.ndarray  # (k, p)
    tau: np.ndarray  # (k,)
    sigma2: np.ndarray
    r: np.ndarray
    rho: np.ndarray
    field_mean: np.ndarray | None = None
    w_star: np.ndarray | None = None
    spatial_scale: str = "sqrt_r"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.beta = np.atleast_2d(np.asarray(self.beta, dtype=float))
        self.lam = np.atleast_2d(np.asarray(self.lam, dtype=float))
        for name in SCALAR_COLUMNS:
            setattr(self, name, np.asarray(getattr(self, name), dtype=float).ravel())
        k, p = self.beta.shape
        if self.lam.shape != (k, p):
            raise ValueError("beta and lambda draws differ in shape")
        for name in SCALAR_COLUMNS:
            if len(getattr(self, name)) != k:
                raise ValueError(f"column {name} has {len(getattr(self, name))} rows, expected {k}")

    @property
    def n_draws(self) -> int:
        return self.beta.shape[0]

    @property
    def p(self) -> int:
        return self.beta.shape[1]

    @property
    def scale(self) -> np.ndarray:
        """Per-draw multiplier ``sigma * c(r)`` of the latent field."""
        return np.sqrt(self.sigma2) * spatial_multiplier(self.r, self.spatial_scale)

    def header(self) -> list[str]:
        p = self.p
        return ([f"beta_{i}" for i in range(1, p + 1)]
                + [f"lambda_{i}" for i in range(1, p + 1)] + list(SCALAR_COLUMNS))

    def matrix(self) -> np.ndarray:
        return np.column_stack([self.beta, self.lam] + [getattr(self, c) for c in SCALAR_COLUMNS])

    def to_csv(self, path) -> None:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.header())
            for row in self.matrix():
                w.writerow([repr(float(v)) for v in row])
        meta = dict(self.meta, spatial_scale=self.spatial_scale, n_draws=self.n_draws, p=self.p)
        Path(str(path) + ".meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
        if self.field_mean is not None:
            np.savetxt(str(path) + ".field.txt", self.field_mean, fmt="%.17g")

    @classmethod
    def from_csv(cls, path) -> "PosteriorDraws":
        path = Path(path)
        with path.open(newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows:
            raise ValueError(f"{path}: empty draws file")
        header = [h.strip() for h in rows[0]]
        missing = [c for c in SCALAR_COLUMNS if c not in header]
        if missing:
            raise ValueError(f"{path}: missing columns {missing}")
        p = sum(h.startswith("beta_") for h in header)
        expected = [f"beta_{i}" for i in range(1, p + 1)] + [f"lambda_{i}" for i in range(1, p + 1)]
        if header[:2 * p] != expected:
            raise ValueError(f"{path}: header does not follow the beta_*, lambda_* layout")
        data = np.empty((len(rows) - 1, len(header)))
        for i, row in enumerate(rows[1:]):
            if len(row) != len(header):
                raise ValueError(f"{path}: line {i + 2} has {len(row)} fields, expected {len(header)}")
            for j, cell in enumerate(row):
                try:
                    data[i, j] = float(cell)
                except ValueError:
                    raise ValueError(f"{path}: line {i + 2}, column {header[j]!r}: "
                                     f"not a number: {cell!r}") from None
        col = {h: data[:, j] for j, h in enumerate(header)}
        meta = {}
        meta_path = Path(str(path) + ".meta.json")
        if meta_path.exists():
            meta = json.loads(meta_path.read_text())
        field_path = Path(str(path) + ".field.txt")
        w_mean = np.atleast_1d(np.loadtxt(field_path)) if field_path.exists() else None
        return cls(beta=data[:, :p], lam=data[:, p:2 * p],
                   **{c: col[c] for c in SCALAR_COLUMNS},
                   field_mean=w_mean, spatial_scale=meta.pop("spatial_scale", "sqrt_r"),
                   meta={k: v for k, v in meta.items() if k not in ("n_draws", "p")})
