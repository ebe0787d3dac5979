"""Censored spatial regression with a horseshoe+ prior on the coefficients.

Model, with c(r) = sqrt(r) (or r under ``spatial_scale="r"``)::

    y = X beta + sigma c(r) A w + eps,    eps ~ N(0, sigma^2 (1 - r) I)
    w ~ N(0, Q_rho^-1)
    beta_i ~ N(0, lambda_i^2),  lambda_i ~ C+(0, tau eta_i),  eta_i ~ C+(0, 1)
    tau ~ U(0, 1),  sigma^2 ~ IG(a, b),  rho ~ U(0, rho_max),  r ~ U(0, 1)

Left-censored responses are imputed by data augmentation. One sweep draws
(w, y_c) | rest, beta | rest, the horseshoe+ scales, sigma^2 | (sigma c(r) w),
then rho and r by Metropolis steps on the likelihood with w integrated out.
The integrated steps are valid because w is redrawn first thing in the next
sweep.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg

from .draws import PosteriorDraws, spatial_multiplier
from .mesh import Mesh, Projector, max_domain_range
from .spde import FactorizationError, PrecisionOperator, SparseFactor
from .truncnorm import rtruncnorm

log = logging.getLogger(__name__)

TINY = 1e-300
HUGE = 1e300
LOG_2PI = math.log(2.0 * math.pi)


class ModelError(ValueError):
    pass


class SweepError(RuntimeError):
    def __init__(self, iteration: int, cause: Exception):
        super().__init__(f"sweep {iteration} failed: {cause}")
        self.iteration = iteration
        self.cause = cause


@dataclass
class SpatialDataset:
    sites: np.ndarray  # (n, 2)
    X: np.ndarray  # (n, p), first column the intercept
    y: np.ndarray  # (n,) ignored where censored
    censored: np.ndarray  # (n,) bool
    limits: np.ndarray  # (n,) detection limits, ignored where observed
    names: list[str] | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.sites = np.asarray(self.sites, dtype=float).reshape(-1, 2)
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.y = np.asarray(self.y, dtype=float).ravel()
        self.censored = np.asarray(self.censored, dtype=bool).ravel()
        self.limits = np.asarray(self.limits, dtype=float).ravel()
        n = len(self.sites)
        if n < 1 or self.X.shape[1] < 1:
            raise ModelError("dataset needs n >= 1 and p >= 1")
        for name in ("y", "censored", "limits"):
            if len(getattr(self, name)) != n:
                raise ModelError(f"{name} has length {len(getattr(self, name))}, expected {n}")
        if self.X.shape[0] != n:
            raise ModelError(f"X has {self.X.shape[0]} rows, expected {n}")
        if not np.all(np.isfinite(self.X)):
            raise ModelError("X contains missing or non-finite values")
        if not np.all(np.isfinite(self.y[~self.censored])):
            raise ModelError("observed responses must be finite")
        if not np.all(np.isfinite(self.limits[self.censored])):
            raise ModelError("detection limits of censored sites must be finite")
        if self.names is not None and len(self.names) != self.p:
            raise ModelError("names must have one entry per column of X")

    @property
    def n(self) -> int:
        return len(self.sites)

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def censored_fraction(self) -> float:
        return float(self.censored.mean())

    def subset(self, idx) -> "SpatialDataset":
        idx = np.asarray(idx)
        return SpatialDataset(self.sites[idx], self.X[idx], self.y[idx], self.censored[idx],
                              self.limits[idx], self.names, dict(self.meta))

    def with_columns(self, mask) -> "SpatialDataset":
        mask = np.asarray(mask, dtype=bool)
        names = None if self.names is None else [n for n, m in zip(self.names, mask) if m]
        return replace(self, X=self.X[:, mask], names=names)


@dataclass
class ModelConfig:
    a_sigma: float = 0.1
    b_sigma: float = 0.1
    rho_max: float | None = None  # None: half the largest inter-site distance
    iterations: int = 100_000
    burn_in: int = 2_000  # counted in stored (thinned) draws
    thinning: int = 10
    mh_step_rho: float = 0.3
    mh_step_r: float = 0.3
    adapt: bool = True
    target_accept: float = 0.35
    spatial_scale: str = "sqrt_r"
    shrinkage: str = "horseshoe_plus"  # or "flat"
    fix_r: float | None = None
    fix_rho: float | None = None
    fix_sigma2: float | None = None
    store_w: bool = False
    progress_every: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.iterations <= self.burn_in * self.thinning:
            raise ModelError("iterations must exceed burn_in * thinning")
        if self.thinning < 1 or self.burn_in < 0:
            raise ModelError("thinning must be >= 1 and burn_in >= 0")
        if not (self.mh_step_rho > 0 and self.mh_step_r > 0):
            raise ModelError("Metropolis step sizes must be positive")
        if self.a_sigma <= 0 or self.b_sigma <= 0:
            raise ModelError("inverse-gamma hyperparameters must be positive")
        if self.spatial_scale not in ("sqrt_r", "r"):
            raise ModelError(f"spatial_scale must be 'sqrt_r' or 'r', got {self.spatial_scale!r}")
        if self.shrinkage not in ("horseshoe_plus", "flat"):
            raise ModelError(f"unknown shrinkage {self.shrinkage!r}")

    @property
    def n_stored(self) -> int:
        return self.iterations // self.thinning - self.burn_in


@dataclass
class ChainState:
    beta: np.ndarray
    lam: np.ndarray
    eta: np.ndarray
    nu_aux: np.ndarray
    xi_aux: np.ndarray
    tau: float
    sigma2: float
    r: float
    rho: float
    w_star: np.ndarray
    y_imputed: np.ndarray
    tau_aux: float = 1.0  # kept for layout parity; the slice step needs no auxiliary
    accepted: dict = field(default_factory=lambda: {"rho": 0, "r": 0})

    def copy(self) -> "ChainState":
        return ChainState(**{k: (v.copy() if isinstance(v, (np.ndarray, dict)) else v)
                             for k, v in self.__dict__.items()})


def _inv_gamma(rng, shape, rate):
    """IG(shape, rate) draws, clamped to [TINY, HUGE]."""
    rate = np.asarray(rate, dtype=float)
    g = rng.standard_gamma(shape, size=np.broadcast_shapes(np.shape(shape), rate.shape))
    with np.errstate(divide="ignore", over="ignore"):
        out = rate / g
    return np.clip(out, TINY, HUGE)


def _logit(x):
    return math.log(x) - math.log1p(-x)


def _expit(z):
    return 1.0 / (1.0 + math.exp(-z)) if z >= 0 else math.exp(z) / (1.0 + math.exp(z))


class CensoredSpatialModel:
    """Holds data, mesh operators and cached factorizations for one chain."""

    def __init__(self, data: SpatialDataset, cfg: ModelConfig, mesh: Mesh,
                 projector: Projector, op: PrecisionOperator | None = None,
                 backend: str | None = "banded"):
        self.data = data
        self.cfg = cfg
        self.mesh = mesh
        self.A = projector.A.tocsr()
        if self.A.shape != (data.n, mesh.n_nodes):
            raise ModelError(f"projector has shape {self.A.shape}, expected {(data.n, mesh.n_nodes)}")
        self.op = op if op is not None else PrecisionOperator.from_mesh(mesh)
        self.backend = backend
        self.rho_max = cfg.rho_max if cfg.rho_max is not None else 0.5 * max_domain_range(data.sites)
        self.At = self.A.T.tocsr()
        self._ata = self.op.embed(self.At @ self.A)
        self.XtX = data.X.T @ data.X
        self._symbolic = None
        self._q_cache: tuple | None = None
        self._p_cache: tuple | None = None
        self.cens_idx = np.flatnonzero(data.censored)

    # ---- factorizations ---------------------------------------------------
    def _factor(self, data: np.ndarray) -> SparseFactor:
        f = SparseFactor(self.op.with_data(data), backend=self.backend, symbolic=self._symbolic)
        self._symbolic = f.symbolic
        return f

    def q_factor(self, rho: float):
        """``(Q data, factor)`` for ``Q_rho``; cached for the last rho."""
        if self._q_cache is None or self._q_cache[0] != rho:
            qd = self.op.data(rho)
            self._q_cache = (rho, qd, self._factor(qd))
        return self._q_cache[1], self._q_cache[2]

    def p_factor(self, rho: float, r: float) -> SparseFactor:
        """Factor of the conditional precision ``Q_rho + c(r)^2/(1-r) A'A``."""
        if self._p_cache is None or self._p_cache[:2] != (rho, r):
            qd, _ = self.q_factor(rho)
            c = float(spatial_multiplier(r, self.cfg.spatial_scale))
            self._p_cache = (rho, r, self._factor(qd + (c * c / (1.0 - r)) * self._ata))
        return self._p_cache[2]

    # ---- state --------------------------------------------------------------
    def init_state(self, rng=None) -> ChainState:
        d, cfg = self.data, self.cfg
        p = d.p
        obs = ~d.censored
        if obs.sum() >= 2:
            sigma2 = float(np.var(d.y[obs], ddof=1))
            sigma2 = sigma2 if sigma2 > 0 else 1.0
        else:
            sigma2 = 1.0
        if cfg.fix_sigma2 is not None:
            sigma2 = cfg.fix_sigma2
        y = d.y.copy()
        y[d.censored] = d.limits[d.censored] - 0.1 * math.sqrt(sigma2)
        return ChainState(
            beta=np.zeros(p), lam=np.ones(p), eta=np.ones(p), nu_aux=np.ones(p), xi_aux=np.ones(p),
            tau=0.5, sigma2=sigma2,
            r=cfg.fix_r if cfg.fix_r is not None else 0.5,
            rho=cfg.fix_rho if cfg.fix_rho is not None else self.rho_max / 4.0,
            w_star=np.zeros(self.mesh.n_nodes), y_imputed=y,
        )

    def multiplier(self, r: float) -> float:
        return float(spatial_multiplier(r, self.cfg.spatial_scale))

    # ---- Gibbs blocks -------------------------------------------------------
    def update_field(self, s: ChainState, rng) -> None:
        """Draw the mesh weights from their Gaussian full conditional."""
        c = self.multiplier(s.r)
        sigma = math.sqrt(s.sigma2)
        D = s.sigma2 * (1.0 - s.r)
        e = s.y_imputed - self.data.X @ s.beta
        b = (sigma * c / D) * (self.At @ e)
        f = self.p_factor(s.rho, s.r)
        s.w_star = f.sample(rng, mean=f.solve(b))

    def update_censored(self, s: ChainState, rng) -> None:
        idx = self.cens_idx
        if idx.size == 0:
            return
        c = self.multiplier(s.r)
        mean = self.data.X[idx] @ s.beta + math.sqrt(s.sigma2) * c * (self.A[idx] @ s.w_star)
        sd = math.sqrt(s.sigma2 * (1.0 - s.r))
        s.y_imputed[idx] = rtruncnorm(mean, sd, self.data.limits[idx], rng)

    def update_latents(self, s: ChainState, rng) -> None:
        # field first: the integrated rho/r step of the previous sweep
        # requires w to be refreshed before anything conditions on it
        self.update_field(s, rng)
        self.update_censored(s, rng)

    def update_beta(self, s: ChainState, rng) -> None:
        X = self.data.X
        D = s.sigma2 * (1.0 - s.r)
        c = self.multiplier(s.r)
        e = s.y_imputed - math.sqrt(s.sigma2) * c * (self.A @ s.w_star)
        prec = self.XtX / D
        if self.cfg.shrinkage == "horseshoe_plus":
            prec = prec + np.diag(1.0 / s.lam**2)
        rhs = X.T @ e / D
        # Jacobi scaling keeps the Cholesky stable when lambda spans many decades
        dsc = 1.0 / np.sqrt(np.diag(prec))
        try:
            L = linalg.cholesky(prec * np.outer(dsc, dsc), lower=True)
        except linalg.LinAlgError as exc:
            raise FactorizationError(f"beta conditional precision is singular: {exc}") from exc
        mean = dsc * linalg.cho_solve((L, True), dsc * rhs)
        z = linalg.solve_triangular(L, rng.standard_normal(len(rhs)), lower=True, trans="T")
        s.beta = mean + dsc * z

    def update_horseshoe_plus(self, s: ChainState, rng) -> None:
        if self.cfg.shrinkage != "horseshoe_plus":
            return
        lam2 = _inv_gamma(rng, 1.0, 1.0 / s.nu_aux + 0.5 * s.beta**2)
        t2 = s.tau**2
        eta2 = s.eta**2
        s.nu_aux = _inv_gamma(rng, 1.0, 1.0 / lam2 + 1.0 / (t2 * eta2))
        eta2 = _inv_gamma(rng, 1.0, 1.0 / s.xi_aux + 1.0 / (t2 * s.nu_aux))
        s.xi_aux = _inv_gamma(rng, 1.0, 1.0 + 1.0 / eta2)
        s.lam = np.sqrt(lam2)
        s.eta = np.sqrt(eta2)
        s.tau = self._slice_tau(s, rng)

    def _slice_tau(self, s: ChainState, rng) -> float:
        # p(tau | nu, eta) ~ tau^-p exp(-S / tau^2) on (0, 1)
        p = len(s.beta)
        S = float(np.sum(1.0 / (s.eta**2 * s.nu_aux)))

        def logf(t):
            return -p * math.log(t) - S / (t * t)

        level = logf(s.tau) - rng.exponential()
        lo, hi = 0.0, 1.0
        for _ in range(10_000):
            t = lo + (hi - lo) * rng.random()
            if t > 0 and logf(t) >= level:
                return t
            if t < s.tau:
                lo = t
            else:
                hi = t
        log.warning("tau slice step did not terminate; keeping current value")
        return s.tau

    def update_sigma2(self, s: ChainState, rng) -> None:
        if self.cfg.fix_sigma2 is not None:
            return
        d = self.data
        c = self.multiplier(s.r)
        sigma_old = math.sqrt(s.sigma2)
        v = sigma_old * c * s.w_star  # scaled field, held fixed
        resid = s.y_imputed - d.X @ s.beta - self.A @ v
        qd, _ = self.q_factor(s.rho)
        quad = float(s.w_star @ (self.op.with_data(qd) @ s.w_star))
        shape = self.cfg.a_sigma + 0.5 * d.n + 0.5 * self.mesh.n_nodes
        rate = (self.cfg.b_sigma + float(resid @ resid) / (2.0 * (1.0 - s.r))
                + 0.5 * s.sigma2 * quad)
        s.sigma2 = float(_inv_gamma(rng, shape, rate))
        s.w_star = s.w_star * (sigma_old / math.sqrt(s.sigma2))

    def integrated_loglik(self, s: ChainState, rho: float, r: float) -> float:
        """log p(y_imputed | beta, sigma2, r, rho) with the field integrated out."""
        e = s.y_imputed - self.data.X @ s.beta
        n = self.data.n
        D = s.sigma2 * (1.0 - r)
        c = self.multiplier(r)
        _, fq = self.q_factor(rho)
        fp = self.p_factor(rho, r)
        b = (math.sqrt(s.sigma2) * c / D) * (self.At @ e)
        return (-0.5 * n * (LOG_2PI + math.log(D)) + 0.5 * fq.logdet() - 0.5 * fp.logdet()
                - float(e @ e) / (2.0 * D) + 0.5 * float(b @ fp.solve(b)))

    def update_spatial_hypers(self, s: ChainState, rng, steps: dict) -> None:
        cfg = self.cfg
        if cfg.fix_rho is None:
            cur = self.integrated_loglik(s, s.rho, s.r) + math.log(s.rho)
            log_max = math.log(self.rho_max)
            z = math.log(s.rho) + steps["rho"] * rng.standard_normal()
            if z > log_max:
                z = 2.0 * log_max - z
            prop_rho = math.exp(z)
            saved = (self._q_cache, self._p_cache)
            try:
                new = self.integrated_loglik(s, prop_rho, s.r) + z
            except FactorizationError as exc:
                log.warning("rho proposal %.4g rejected: %s", prop_rho, exc)
                new = -math.inf
            if math.log(rng.random()) < new - cur:
                s.rho = prop_rho
                s.accepted["rho"] += 1
            else:
                self._q_cache, self._p_cache = saved
        if cfg.fix_r is None:
            cur = self.integrated_loglik(s, s.rho, s.r) + math.log(s.r) + math.log1p(-s.r)
            prop_r = _expit(_logit(s.r) + steps["r"] * rng.standard_normal())
            saved = self._p_cache
            if 0.0 < prop_r < 1.0:
                try:
                    new = (self.integrated_loglik(s, s.rho, prop_r)
                           + math.log(prop_r) + math.log1p(-prop_r))
                except FactorizationError as exc:
                    log.warning("r proposal %.4g rejected: %s", prop_r, exc)
                    new = -math.inf
            else:  # expit rounded to the boundary
                new = -math.inf
            if math.log(rng.random()) < new - cur:
                s.r = prop_r
                s.accepted["r"] += 1
            else:
                self._p_cache = saved

    def sweep(self, s: ChainState, rng, steps: dict) -> None:
        self.update_latents(s, rng)
        self.update_beta(s, rng)
        self.update_horseshoe_plus(s, rng)
        self.update_sigma2(s, rng)
        self.update_spatial_hypers(s, rng, steps)

    # ---- diagnostics --------------------------------------------------------
    def log_posterior(self, s: ChainState) -> float:
        """Joint log density of (complete y, w, beta, scales, sigma2, r, rho), up to a constant."""
        d = self.data
        c = self.multiplier(s.r)
        D = s.sigma2 * (1.0 - s.r)
        resid = s.y_imputed - d.X @ s.beta - math.sqrt(s.sigma2) * c * (self.A @ s.w_star)
        qd, fq = self.q_factor(s.rho)
        out = -0.5 * d.n * math.log(D) - float(resid @ resid) / (2 * D)
        out += 0.5 * fq.logdet() - 0.5 * float(s.w_star @ (self.op.with_data(qd) @ s.w_star))
        if np.any(s.y_imputed[self.cens_idx] > d.limits[self.cens_idx]):
            return -math.inf
        if self.cfg.shrinkage == "horseshoe_plus":
            lam2, eta2 = s.lam**2, s.eta**2
            out += float(np.sum(-0.5 * np.log(lam2) - s.beta**2 / (2 * lam2)))
            # half-Cauchy densities of lambda | tau eta and eta
            a = s.tau * s.eta
            out += float(np.sum(np.log(a) - np.log(a * a + lam2)))
            out += float(np.sum(-np.log1p(eta2)))
        out += -(self.cfg.a_sigma + 1) * math.log(s.sigma2) - self.cfg.b_sigma / s.sigma2
        if not (0 < s.r < 1 and 0 < s.rho < self.rho_max and 0 < s.tau < 1):
            return -math.inf
        return out


def _adapt(steps: dict, acc: dict, t: int, target: float) -> None:
    gamma = min(0.5, 1.0 / math.sqrt(t))
    for k in steps:
        steps[k] = float(np.clip(steps[k] * math.exp(gamma * (acc[k] - target)), 1e-3, 5.0))


def run_chain(data: SpatialDataset, cfg: ModelConfig, mesh: Mesh, projector: Projector,
              op: PrecisionOperator | None = None, *, backend: str | None = "banded",
              init: ChainState | None = None, progress=None) -> PosteriorDraws:
    """Run one chain and return the thinned, post-burn-in draws."""
    model = CensoredSpatialModel(data, cfg, mesh, projector, op, backend=backend)
    rng = np.random.default_rng(cfg.seed)
    s = init.copy() if init is not None else model.init_state(rng)
    steps = {"rho": cfg.mh_step_rho, "r": cfg.mh_step_r}
    k = cfg.n_stored
    p = data.p
    out = {"beta": np.empty((k, p)), "lam": np.empty((k, p)),
           **{name: np.empty(k) for name in ("tau", "sigma2", "r", "rho")}}
    w_sum = np.zeros(mesh.n_nodes)
    w_all = np.empty((k, mesh.n_nodes)) if cfg.store_w else None
    adapt_until = cfg.burn_in * cfg.thinning if cfg.adapt else 0
    window = {"rho": 0, "r": 0}
    row = 0
    for t in range(1, cfg.iterations + 1):
        before = dict(s.accepted)
        try:
            model.sweep(s, rng, steps)
        except (FactorizationError, ArithmeticError, ValueError) as exc:
            raise SweepError(t, exc) from exc
        if t <= adapt_until:
            for key in window:
                window[key] += s.accepted[key] - before[key]
            if t % 50 == 0:
                _adapt(steps, {key: v / 50 for key, v in window.items()}, t // 50,
                       cfg.target_accept)
                window = {"rho": 0, "r": 0}
        if t % cfg.thinning == 0:
            kept = t // cfg.thinning - cfg.burn_in - 1
            if kept >= 0:
                out["beta"][kept] = s.beta
                out["lam"][kept] = s.lam
                out["tau"][kept] = s.tau
                out["sigma2"][kept] = s.sigma2
                out["r"][kept] = s.r
                out["rho"][kept] = s.rho
                w_sum += math.sqrt(s.sigma2) * model.multiplier(s.r) * s.w_star
                if w_all is not None:
                    w_all[kept] = s.w_star
                row += 1
        if progress is not None and cfg.progress_every and t % cfg.progress_every == 0:
            progress(t, s)
    meta = {"seed": cfg.seed, "iterations": cfg.iterations, "thinning": cfg.thinning,
            "burn_in": cfg.burn_in, "accept_rho": s.accepted["rho"] / cfg.iterations,
            "accept_r": s.accepted["r"] / cfg.iterations, "final_steps": steps,
            "rho_max": model.rho_max}
    if data.names is not None:
        meta["names"] = list(data.names)
    return PosteriorDraws(beta=out["beta"], lam=out["lam"], tau=out["tau"], sigma2=out["sigma2"],
                          r=out["r"], rho=out["rho"], field_mean=w_sum / max(row, 1),
                          w_star=w_all, spatial_scale=cfg.spatial_scale, meta=meta)


def predict(draws: PosteriorDraws, newX, newA, mask=None) -> np.ndarray:
    """Posterior-mean prediction, zeroing coefficients outside ``mask``."""
    newX = np.atleast_2d(np.asarray(newX, dtype=float))
    p = draws.p
    if newX.shape[1] != p:
        raise ModelError(f"newX has {newX.shape[1]} columns, draws have p={p}")
    mask = np.ones(p, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if mask.shape != (p,):
        raise ModelError(f"mask has length {mask.size}, expected {p}")
    beta = np.where(mask, draws.beta.mean(axis=0), 0.0)
    pred = newX @ beta
    if draws.field_mean is not None:
        A = newA.A if isinstance(newA, Projector) else newA
        if A.shape != (newX.shape[0], len(draws.field_mean)):
            raise ModelError(f"newA has shape {A.shape}, expected "
                             f"{(newX.shape[0], len(draws.field_mean))}")
        pred = pred + A @ draws.field_mean
    return pred
