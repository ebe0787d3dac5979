"""Trace summaries for stored draws."""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .draws import PosteriorDraws


def autocorrelation(x) -> np.ndarray:
    """Sample autocorrelation at lags 0..n-1 (biased estimator, FFT)."""
    x = np.asarray(x, dtype=float)
    n = x.size
    xc = x - x.mean()
    m = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, m)
    acov = np.fft.irfft(f * np.conj(f), m)[:n] / n
    if acov[0] <= 0:
        return np.r_[1.0, np.zeros(n - 1)]
    return acov / acov[0]


def effective_sample_size(x) -> float:
    """ESS with Geyer's initial positive (monotone) sequence truncation."""
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 4:
        return float(n)
    rho = autocorrelation(x)
    pairs = rho[:n - n % 2].reshape(-1, 2).sum(axis=1)
    total, prev = 0.0, np.inf
    for g in pairs:
        if g <= 0:
            break
        g = min(g, prev)  # monotone envelope
        total += g
        prev = g
    tau = -1.0 + 2.0 * total
    return float(n / max(tau, 1.0 / np.log10(max(n, 10))))


def trace_summary(draws: PosteriorDraws) -> list[dict]:
    rows = []
    for name, col in zip(draws.header(), draws.matrix().T):
        rows.append({"parameter": name, "mean": float(col.mean()),
                     "sd": float(col.std(ddof=1)) if col.size > 1 else 0.0,
                     "ess": effective_sample_size(col)})
    return rows


def write_trace_summary(draws: PosteriorDraws, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["parameter", "mean", "sd", "ess"])
        for r in trace_summary(draws):
            w.writerow([r["parameter"], f"{r['mean']:.10g}", f"{r['sd']:.10g}", f"{r['ess']:.1f}"])
