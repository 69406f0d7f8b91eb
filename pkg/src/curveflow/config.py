"""Sectioned ``key = value`` run configuration.

Example::

    [grid]
    t_max = 10
    p = 401
    rule = trapezoid-uniform

    [weight]
    kind = constant

    [family]
    family = nelson_siegel
    lambda = 0.5

    [vol]
    vol = exp_decay
    sigma0 = 0.01
    decay = 0.5

    [sim]
    z0 = 0.04, -0.01, 0.005
    delta = 0.003968253968253968
    steps = 2000
    seed = 7
    scheme = euler_ito
    paths = 1

    [estimation]
    q = auto
    max_rounds = 10
    scheme = optimal

Relative file paths are resolved against the directory of the config file.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import CurveflowError
from .estimation import ThetaSpace, theta_space_for
from .function_space import RULES, Grid, WeightFunction, make_grid, make_weight
from .hjm import VOL_KINDS, VolatilitySpec, make_vol
from .manifold import (
    ManifoldFamily,
    make_affine_family,
    make_exp_basis,
    make_exp_rate,
    make_nelson_siegel,
)
from .projection_dynamics import SCHEMES

FAMILIES = ("affine", "nelson_siegel", "exp_basis", "exp_rate")

SECTIONS = {
    "grid": {"t_max", "p", "rule"},
    "weight": {"kind", "gamma"},
    "family": {"family", "lambda", "rates", "basis_files", "g0_file", "z_lower", "z_upper"},
    "vol": {"vol", "sigma0", "decay", "factors"},
    "sim": {"z0", "r0_file", "delta", "steps", "seed", "scheme", "paths"},
    "estimation": {"theta_init", "q", "max_rounds", "scheme"},
}


_POSITIVE = (lambda v: v > 0, "> 0")


class ConfigError(CurveflowError, ValueError):
    pass


def _floats(text: str, key: str) -> list[float]:
    try:
        vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise ConfigError(f"{key}: expected comma-separated numbers, got {text!r}") from None
    if not vals or not all(np.isfinite(vals)):
        raise ConfigError(f"{key}: expected finite numbers, got {text!r}")
    return vals


@dataclass
class GridBlock:
    t_max: float = 10.0
    p: int = 401
    rule: str = RULES[0]


@dataclass
class WeightBlock:
    kind: str = "constant"
    gamma: float | None = None


@dataclass
class FamilyBlock:
    family: str = "nelson_siegel"
    lam: float | None = None
    rates: list[float] = field(default_factory=list)
    basis_files: list[str] = field(default_factory=list)
    g0_file: str | None = None
    z_lower: list[float] | None = None
    z_upper: list[float] | None = None


@dataclass
class VolBlock:
    vol: str = "constant"
    sigma0: list[float] = field(default_factory=lambda: [0.0])
    decay: float | None = None

    @property
    def factors(self) -> int:
        return len(self.sigma0)


@dataclass
class SimBlock:
    z0: list[float] | None = None
    r0_file: str | None = None
    delta: float = 1.0 / 252.0
    steps: int = 252
    seed: int = 0
    scheme: str = "euler_ito"
    paths: int = 1


@dataclass
class EstimationBlock:
    theta_init: list[float] | None = None
    q: int | None = None
    max_rounds: int = 10
    scheme: str = "optimal"


@dataclass
class RunConfig:
    grid: GridBlock = field(default_factory=GridBlock)
    weight: WeightBlock = field(default_factory=WeightBlock)
    family: FamilyBlock = field(default_factory=FamilyBlock)
    vol: VolBlock = field(default_factory=VolBlock)
    sim: SimBlock = field(default_factory=SimBlock)
    estimation: EstimationBlock = field(default_factory=EstimationBlock)
    path: str | None = None

    # ------------------------------------------------------------- builders

    def build_grid(self) -> Grid:
        return make_grid(self.grid.t_max, self.grid.p, self.grid.rule)

    def build_weight(self, grid: Grid) -> WeightFunction:
        return make_weight(grid, self.weight.kind, self.weight.gamma)

    def build_family(self, grid: Grid, *, resample: bool = False) -> ManifoldFamily:
        from .io import read_curve

        fb = self.family
        bounds = {}
        if fb.z_lower is not None:
            bounds["lower"] = fb.z_lower
        if fb.z_upper is not None:
            bounds["upper"] = fb.z_upper
        if fb.family == "nelson_siegel":
            return make_nelson_siegel(fb.lam, **bounds)
        if fb.family == "exp_basis":
            return make_exp_basis(fb.rates, **bounds)
        if fb.family == "exp_rate":
            return make_exp_rate(**bounds)
        basis = [read_curve(f, grid, resample=resample) for f in fb.basis_files]
        g0 = read_curve(fb.g0_file, grid, resample=resample) if fb.g0_file else None
        return make_affine_family(g0, basis, **bounds)

    def build_vol(self) -> VolatilitySpec:
        vb = self.vol
        sigma0 = vb.sigma0 if vb.factors > 1 else vb.sigma0[0]
        return make_vol(vb.vol, sigma0, vb.decay)

    def theta_space(self) -> ThetaSpace:
        return theta_space_for(self.vol.vol, self.vol.factors)

    def theta_init(self) -> np.ndarray:
        if self.estimation.theta_init is not None:
            return np.asarray(self.estimation.theta_init, dtype=float)
        return self.build_vol().theta


def load_config(path: str) -> RunConfig:
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return parse_config(parser, os.path.dirname(os.path.abspath(path)), path)


def parse_config(
    parser: configparser.ConfigParser, base_dir: str = ".", path: str | None = None
) -> RunConfig:
    cfg = RunConfig(path=path)
    for name in parser.sections():
        if name not in SECTIONS:
            raise ConfigError(f"unknown section [{name}]")
        allowed = SECTIONS[name]
        for key in parser[name]:
            ok = key in allowed or (name == "vol" and key.startswith("sigma0_"))
            if not ok:
                raise ConfigError(f"unknown key {key!r} in [{name}]")

    def get(section, key):
        if parser.has_section(section) and key in parser[section]:
            return parser[section][key].strip()
        return None

    def num(section, key, kind=float, default=None, check=None, what=""):
        raw = get(section, key)
        if raw is None:
            return default
        try:
            val = kind(raw)
        except ValueError:
            raise ConfigError(f"[{section}] {key}: cannot parse {raw!r}") from None
        if kind is float and not np.isfinite(val):
            raise ConfigError(f"[{section}] {key}: must be finite")
        if check is not None and not check(val):
            raise ConfigError(f"[{section}] {key} = {raw}: must be {what}")
        return val

    def choice(section, key, options, default):
        raw = get(section, key)
        if raw is None:
            return default
        if raw not in options:
            raise ConfigError(f"[{section}] {key} = {raw}: expected one of {', '.join(options)}")
        return raw

    def resolve(p):
        full = p if os.path.isabs(p) else os.path.join(base_dir, p)
        if not os.path.isfile(full):
            raise ConfigError(f"referenced file not found: {p}")
        return full

    cfg.grid.t_max = num("grid", "t_max", float, cfg.grid.t_max, *_POSITIVE)
    cfg.grid.p = num("grid", "p", int, cfg.grid.p, lambda v: v >= 4, ">= 4")
    cfg.grid.rule = choice("grid", "rule", RULES, cfg.grid.rule)

    cfg.weight.kind = choice("weight", "kind", ("constant", "exp_increasing", "exp_decreasing"), "constant")
    cfg.weight.gamma = num("weight", "gamma", float, None, *_POSITIVE)
    if cfg.weight.kind != "constant" and cfg.weight.gamma is None:
        raise ConfigError(f"[weight] kind = {cfg.weight.kind} needs gamma")

    fb = cfg.family
    fb.family = choice("family", "family", FAMILIES, fb.family)
    fb.lam = num("family", "lambda", float, None, *_POSITIVE)
    if get("family", "rates") is not None:
        fb.rates = _floats(get("family", "rates"), "rates")
    if get("family", "basis_files") is not None:
        fb.basis_files = [resolve(f.strip()) for f in get("family", "basis_files").split(",") if f.strip()]
    if get("family", "g0_file") is not None:
        fb.g0_file = resolve(get("family", "g0_file"))
    for key in ("z_lower", "z_upper"):
        if get("family", key) is not None:
            setattr(fb, key, _floats(get("family", key), key))
    if fb.family == "nelson_siegel" and fb.lam is None:
        raise ConfigError("[family] nelson_siegel needs lambda")
    if fb.family == "exp_basis" and not fb.rates:
        raise ConfigError("[family] exp_basis needs rates")
    if fb.family == "affine" and not fb.basis_files:
        raise ConfigError("[family] affine needs basis_files")

    vb = cfg.vol
    if not parser.has_section("vol"):
        # commands that never touch the volatility (fit) need no [vol] block
        return _parse_tail(cfg, get, num, choice, resolve)
    vb.vol = choice("vol", "vol", VOL_KINDS, vb.vol)
    factors = num("vol", "factors", int, 1, lambda v: v >= 1, ">= 1")
    base = num("vol", "sigma0", float, None)
    levels = []
    for i in range(factors):
        lvl = num("vol", f"sigma0_{i + 1}", float, base)
        if lvl is None:
            raise ConfigError(f"[vol] needs sigma0 or sigma0_{i + 1}")
        levels.append(lvl)
    extra = [k for k in (parser["vol"] if parser.has_section("vol") else {}) if k.startswith("sigma0_")]
    for k in extra:
        idx = k[len("sigma0_"):]
        if not idx.isdigit() or not 1 <= int(idx) <= factors:
            raise ConfigError(f"[vol] {k} does not match factors = {factors}")
    vb.sigma0 = levels
    vb.decay = num("vol", "decay", float, None, *_POSITIVE)
    if vb.vol in ("exp_decay", "proportional_exp") and vb.decay is None:
        raise ConfigError(f"[vol] {vb.vol} needs decay")
    return _parse_tail(cfg, get, num, choice, resolve)


def _parse_tail(cfg: RunConfig, get, num, choice, resolve) -> RunConfig:
    """The [sim] and [estimation] blocks."""
    sb = cfg.sim
    if get("sim", "z0") is not None:
        sb.z0 = _floats(get("sim", "z0"), "z0")
    if get("sim", "r0_file") is not None:
        sb.r0_file = resolve(get("sim", "r0_file"))
    sb.delta = num("sim", "delta", float, sb.delta, *_POSITIVE)
    sb.steps = num("sim", "steps", int, sb.steps, lambda v: v >= 1, ">= 1")
    sb.seed = num("sim", "seed", int, sb.seed, lambda v: v >= 0, ">= 0")
    sb.scheme = choice("sim", "scheme", SCHEMES, sb.scheme)
    sb.paths = num("sim", "paths", int, sb.paths, lambda v: v >= 1, ">= 1")

    eb = cfg.estimation
    if get("estimation", "theta_init") is not None:
        eb.theta_init = _floats(get("estimation", "theta_init"), "theta_init")
    q = get("estimation", "q")
    if q is not None and q != "auto":
        eb.q = num("estimation", "q", int, None, lambda v: v >= 0, ">= 0")
    eb.max_rounds = num("estimation", "max_rounds", int, eb.max_rounds, lambda v: v >= 1, ">= 1")
    eb.scheme = choice("estimation", "scheme", ("ls", "optimal"), eb.scheme)
    return cfg
