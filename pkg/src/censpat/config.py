"""INI-style run configuration.

Sections::

    [model]      iterations, burn_in, thinning (required); a_sigma, b_sigma,
                 rho_max, mh_step_rho, mh_step_r, adapt, spatial_scale, seed
    [mesh]       edge (required); extension
    [selection]  cr_level, hsp_cutoff, b_tuning
    [simulate]   rmse_mode, refit, threads
    [scenarios]  grid_side, p, censor_pct, rho, snr_r, zero_pct, n_reps,
                 train_frac, seed, signal_low, signal_high, use_spde

Scenario keys accept comma-separated lists; the grid is their Cartesian
product in the order censor_pct, zero_pct, rho, snr_r.
"""
from __future__ import annotations

import configparser
import hashlib
import itertools
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .model import ModelConfig, ModelError
from .simulate import ScenarioSpec


class ConfigError(ValueError):
    pass


MODEL_REQUIRED = ("iterations", "burn_in", "thinning")
MODEL_KEYS = {f.name: f.type for f in fields(ModelConfig)}
GRID_KEYS = ("censor_pct", "zero_pct", "rho", "snr_r")
SCENARIO_TYPES = {"grid_side": int, "p": int, "n_reps": int, "seed": int, "train_frac": float,
                  "signal_low": float, "signal_high": float, "use_spde": bool,
                  "censor_pct": float, "zero_pct": float, "rho": float, "snr_r": float}


@dataclass
class RunConfig:
    model: ModelConfig
    mesh_edge: float
    mesh_extension: float | None = None
    cr_level: float = 0.95
    hsp_cutoff: float = 0.5
    b_tuning: float | None = None
    rmse_mode: str = "mean"
    refit: bool = False
    threads: int | None = None
    scenarios: list = field(default_factory=list)
    text: str = ""

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.text.encode()).hexdigest()


def _convert(section: str, key: str, raw: str, kind):
    """Parse ``raw`` per a type or annotation string such as ``"float | None"``."""
    kind = kind if isinstance(kind, str) else kind.__name__
    raw = raw.strip()
    if "None" in kind and raw.lower() in ("", "none"):
        return None
    base = kind.split("|")[0].strip()
    try:
        if base == "bool":
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if base == "int":
            return int(raw)
        if base == "float":
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{section}.{key}: cannot parse {raw!r}") from None


def _require(cp, section: str, key: str) -> str:
    if not cp.has_section(section) or not cp.has_option(section, key):
        raise ConfigError(f"missing config key {section}.{key}")
    return cp.get(section, key)


def parse_config(text: str, *, need_mesh: bool = True, need_scenarios: bool = False) -> RunConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None

    model_kw = {}
    for key in MODEL_REQUIRED:
        model_kw[key] = _convert("model", key, _require(cp, "model", key), int)
    if cp.has_section("model"):
        for key, raw in cp.items("model"):
            if key in MODEL_REQUIRED:
                continue
            if key not in MODEL_KEYS:
                raise ConfigError(f"unknown config key model.{key}")
            model_kw[key] = _convert("model", key, raw, MODEL_KEYS[key])
    try:
        model = ModelConfig(**model_kw)
    except ModelError as exc:
        raise ConfigError(f"[model] {exc}") from None

    edge = None
    if need_mesh:
        edge = _convert("mesh", "edge", _require(cp, "mesh", "edge"), float)
        if not edge > 0:
            raise ConfigError("mesh.edge must be positive")
    elif cp.has_option("mesh", "edge"):
        edge = _convert("mesh", "edge", cp.get("mesh", "edge"), float)
    ext = None
    if cp.has_option("mesh", "extension"):
        ext = _convert("mesh", "extension", cp.get("mesh", "extension"), "float | None")

    def opt(section, key, kind, default):
        if cp.has_option(section, key):
            return _convert(section, key, cp.get(section, key), kind)
        return default

    run = RunConfig(model=model, mesh_edge=edge, mesh_extension=ext,
                    cr_level=opt("selection", "cr_level", float, 0.95),
                    hsp_cutoff=opt("selection", "hsp_cutoff", float, 0.5),
                    b_tuning=opt("selection", "b_tuning", "float | None", None),
                    rmse_mode=opt("simulate", "rmse_mode", str, "mean"),
                    refit=opt("simulate", "refit", bool, False),
                    threads=opt("simulate", "threads", "int | None", None),
                    text=text)
    if run.rmse_mode not in ("mean", "sum"):
        raise ConfigError("simulate.rmse_mode must be 'mean' or 'sum'")

    if cp.has_section("scenarios"):
        run.scenarios = _scenario_grid(cp, edge, ext)
    elif need_scenarios:
        raise ConfigError("missing config section [scenarios]")
    return run


def _scenario_grid(cp, edge, ext) -> list:
    base, grid = {}, {}
    for key, raw in cp.items("scenarios"):
        if key not in SCENARIO_TYPES:
            raise ConfigError(f"unknown config key scenarios.{key}")
        kind = SCENARIO_TYPES[key]
        if key in GRID_KEYS:
            grid[key] = [_convert("scenarios", key, v, kind) for v in raw.split(",")]
        else:
            base[key] = _convert("scenarios", key, raw, kind)
    if edge is not None:
        base["mesh_edge"] = edge
    base["mesh_extension"] = ext
    default = ScenarioSpec()
    axes = [grid.get(k, [getattr(default, k)]) for k in GRID_KEYS]
    specs = []
    for combo in itertools.product(*axes):
        try:
            specs.append(ScenarioSpec(**base, **dict(zip(GRID_KEYS, combo))))
        except ValueError as exc:
            raise ConfigError(f"[scenarios] {exc}") from None
    return specs


def load_config(path, **kw) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, **kw)


def override(run: RunConfig, **kw) -> RunConfig:
    """Apply CLI overrides; ``None`` values leave the file setting in place."""
    model_kw = {k: kw.pop(k) for k in ("seed", "spatial_scale") if kw.get(k) is not None}
    kw = {k: v for k, v in kw.items() if v is not None}
    out = replace(run, model=replace(run.model, **model_kw), **kw)
    if "seed" in model_kw:
        out.scenarios = [replace(s, seed=model_kw["seed"]) for s in out.scenarios]
    return out
