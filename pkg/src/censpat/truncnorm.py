"""Draws from upper-truncated normal distributions."""
from __future__ import annotations

import numpy as np
from scipy.special import log_ndtr, ndtr, ndtri

# below this standardized bound inverse-CDF loses relative precision
TAIL_SWITCH = -5.0


def _lower_tail(a: np.ndarray, rng) -> np.ndarray:
    """Standard normal draws conditioned on z >= a, for a > 0.

    Exponential-proposal rejection with the optimal rate for the bound.
    """
    out = np.empty_like(a)
    todo = np.arange(a.size)
    while todo.size:
        aa = a[todo]
        lam = 0.5 * (aa + np.sqrt(aa * aa + 4.0))
        z = aa + rng.exponential(size=todo.size) / lam
        ok = np.log(rng.random(todo.size)) <= -0.5 * (z - lam) ** 2
        out[todo[ok]] = z[ok]
        todo = todo[~ok]
    return out


def rtruncnorm(mean, sd, upper, rng):
    """Sample ``Normal(mean, sd**2)`` conditioned on ``value <= upper``.

    Inputs broadcast against each other; a scalar result is returned for
    scalar inputs.
    """
    mean, sd, upper = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (mean, sd, upper)))
    shape = mean.shape
    mean, sd, upper = (np.atleast_1d(v).ravel() for v in (mean, sd, upper))
    if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(sd)) and not np.any(np.isnan(upper))):
        raise ValueError("rtruncnorm needs finite mean/sd and a non-NaN bound")
    if np.any(sd <= 0):
        raise ValueError("sd must be positive")
    b = (upper - mean) / sd
    z = np.empty_like(b)
    body = b >= TAIL_SWITCH
    if body.any():
        u = rng.random(int(body.sum()))
        z[body] = ndtri(u * ndtr(b[body]))
        # ndtri(u * ndtr(b)) can exceed b by rounding when b is large
        z[body] = np.minimum(z[body], b[body])
    tail = ~body
    if tail.any():
        z[tail] = -_lower_tail(-b[tail], rng)
    x = mean + sd * z
    x = np.minimum(x, upper)
    return float(x[0]) if shape == () else x.reshape(shape)


def truncnorm_moments(mean, sd, upper):
    """Analytic mean and variance of Normal(mean, sd**2) truncated above."""
    b = (np.asarray(upper, dtype=float) - mean) / sd
    # inverse Mills ratio phi(b)/Phi(b) in log space, stable deep in the tail
    mills = np.exp(-0.5 * b * b - 0.5 * np.log(2 * np.pi) - log_ndtr(b))
    m = mean - sd * mills
    v = sd * sd * (1.0 - b * mills - mills * mills)
    return m, v
