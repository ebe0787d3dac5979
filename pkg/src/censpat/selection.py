"""Post-processing rules that turn coefficient draws into inclusion masks."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .draws import PosteriorDraws

METHODS = ("Cr", "HSP", "S2M")


@dataclass
class SelectionResult:
    method: str
    mask: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    @property
    def n_selected(self) -> int:
        return int(self.mask.sum())

    def to_csv(self, path, names=None) -> None:
        p = len(self.mask)
        names = names or [f"beta_{i}" for i in range(1, p + 1)]
        if self.method == "Cr":
            lo, hi = self.diagnostics["lo"], self.diagnostics["hi"]
        elif self.method == "HSP":
            lo, hi = np.full(p, np.nan), self.diagnostics["weight"]
        else:
            lo, hi = self.diagnostics["median_abs"], self.diagnostics["signal_freq"]
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["index", "name", "method", "included", "diagnostic_lo",
                        "diagnostic_hi_or_weight"])
            for i in range(p):
                w.writerow([i + 1, names[i], self.method, int(self.mask[i]),
                            "" if np.isnan(lo[i]) else f"{lo[i]:.10g}", f"{hi[i]:.10g}"])


def _apply_exempt(mask, always_include):
    if always_include is not None:
        mask = mask.copy()
        mask[np.asarray(always_include, dtype=int)] = True
    return mask


def select_cr(draws: PosteriorDraws, level: float = 0.95, always_include=None) -> SelectionResult:
    """Keep coefficients whose equal-tailed credible interval excludes zero."""
    if draws.n_draws < 2:
        raise ValueError("credible intervals need at least 2 draws")
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    alpha = 1.0 - level
    lo, hi = np.quantile(draws.beta, [alpha / 2, 1 - alpha / 2], axis=0)
    mask = (lo > 0) | (hi < 0)
    return SelectionResult("Cr", _apply_exempt(mask, always_include),
                           {"lo": lo, "hi": hi, "level": level})


def shrinkage_weights(draws: PosteriorDraws) -> np.ndarray:
    """Posterior mean of 1 / (1 + lambda_i^2 tau^2) per coefficient."""
    lt2 = draws.lam**2 * draws.tau[:, None] ** 2
    return np.mean(1.0 / (1.0 + lt2), axis=0)


def select_hsp(draws: PosteriorDraws, cutoff: float = 0.5, always_include=None) -> SelectionResult:
    """Keep coefficients with mean shrinkage weight strictly below ``cutoff``."""
    if draws.lam is None or draws.tau is None:
        raise ValueError("draws carry no lambda/tau columns")
    w = shrinkage_weights(draws)
    return SelectionResult("HSP", _apply_exempt(w < cutoff, always_include),
                           {"weight": w, "cutoff": cutoff})


def two_means(values, max_iter: int = 100, tol: float = 1e-10):
    """1-D two-means with min/max initialization.

    Returns ``(signal, centers)`` where ``signal`` flags members of the
    larger-center cluster and ``centers = (low, high)``. Equal values give an
    empty signal cluster; points equidistant from both centers go low.
    """
    x = np.asarray(values, dtype=float).ravel()
    if x.size < 2:
        raise ValueError("two_means needs at least 2 values")
    lo, hi = float(x.min()), float(x.max())
    if lo == hi:
        return np.zeros(x.size, dtype=bool), (lo, hi)
    signal = np.zeros(x.size, dtype=bool)
    for _ in range(max_iter):
        signal = np.abs(x - hi) < np.abs(x - lo)
        new_lo, new_hi = float(x[~signal].mean()), float(x[signal].mean())
        done = abs(new_lo - lo) <= tol and abs(new_hi - hi) <= tol
        lo, hi = new_lo, new_hi
        if done:
            break
    signal = np.abs(x - hi) < np.abs(x - lo)
    return signal, (lo, hi)


def _signal_count(absb: np.ndarray, b_tuning: float | None) -> tuple[int, np.ndarray]:
    signal, (lo, hi) = two_means(absb)
    if b_tuning is None:
        return int(signal.sum()), signal
    # sequential variant: peel off the signal cluster while the gap exceeds b
    flags = np.zeros(absb.size, dtype=bool)
    rest = np.arange(absb.size)
    while rest.size >= 2:
        signal, (lo, hi) = two_means(absb[rest])
        if not signal.any() or hi - lo <= b_tuning:
            break
        flags[rest[signal]] = True
        rest = rest[~signal]
    return int(flags.sum()), flags


def select_s2m(draws: PosteriorDraws, b_tuning: float | None = None,
               always_include=None) -> SelectionResult:
    """Two-means clustering of |beta| per draw, then the top-H by median |beta|.

    ``H`` is the most frequent per-draw signal count (smallest on ties).
    With ``b_tuning`` set, each draw uses the sequential variant that keeps
    splitting the noise cluster while the center gap exceeds ``b_tuning``.
    """
    if draws.n_draws < 2 or draws.p < 2:
        raise ValueError("S2M needs at least 2 draws and 2 coefficients")
    absb = np.abs(draws.beta)
    counts = np.empty(draws.n_draws, dtype=int)
    freq = np.zeros(draws.p)
    for t in range(draws.n_draws):
        counts[t], flags = _signal_count(absb[t], b_tuning)
        freq += flags
    H = int(np.argmax(np.bincount(counts)))  # argmax returns the smallest mode
    med = np.median(absb, axis=0)
    order = np.lexsort((np.arange(draws.p), -med))
    mask = np.zeros(draws.p, dtype=bool)
    mask[order[:H]] = True
    return SelectionResult("S2M", _apply_exempt(mask, always_include),
                           {"H": H, "counts": counts, "median_abs": med,
                            "signal_freq": freq / draws.n_draws})


def select(draws: PosteriorDraws, method: str, *, cr_level: float = 0.95,
           hsp_cutoff: float = 0.5, b_tuning: float | None = None,
           always_include=None) -> SelectionResult:
    if method == "Cr":
        return select_cr(draws, cr_level, always_include)
    if method == "HSP":
        return select_hsp(draws, hsp_cutoff, always_include)
    if method in ("S2M", "2means"):
        return select_s2m(draws, b_tuning, always_include)
    raise ValueError(f"unknown selection method {method!r}")
