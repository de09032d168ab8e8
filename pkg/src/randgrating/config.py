"""Experiment configuration: INI schema, defaults, validation and round trip.

Numeric values may be written as arithmetic over ``pi`` and ``e``
(``sigma = 1/12``, ``angles = -pi/4, 0.1875, pi/4``); nothing else is
evaluated.
"""

from __future__ import annotations

import ast
import configparser
import hashlib
import io
import math
import operator
from dataclasses import dataclass, field, replace

import numpy as np

from .exceptions import ConfigError
from .modes import DEFAULT_ANGLES, LineHeights, MediumParams, Schedule, make_mode_table, require_no_wood
from .surface import PRESETS, SurfaceSpec

_BINOPS = {
    ast.Add: operator.add,
    ast.Sub: operator.sub,
    ast.Mult: operator.mul,
    ast.Div: operator.truediv,
    ast.Pow: operator.pow,
}
_NAMES = {"pi": math.pi, "e": math.e}
TRUTH_MODES = ("nominal", "process")


def eval_number(text, where="value"):
    """Evaluate a restricted arithmetic expression."""

    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) and not isinstance(node.value, bool):
            return node.value
        if isinstance(node, ast.Name) and node.id in _NAMES:
            return _NAMES[node.id]
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            v = ev(node.operand)
            return -v if isinstance(node.op, ast.USub) else v
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return _BINOPS[type(node.op)](ev(node.left), ev(node.right))
        raise ConfigError(f"{where}: unsupported expression {text!r}")

    try:
        tree = ast.parse(str(text).strip(), mode="eval")
    except SyntaxError:
        raise ConfigError(f"{where}: cannot parse {text!r}") from None
    try:
        return ev(tree)
    except ZeroDivisionError:
        raise ConfigError(f"{where}: division by zero in {text!r}") from None


def eval_list(text, where="value"):
    parts = [p for p in str(text).replace(";", ",").split(",") if p.strip()]
    if not parts:
        raise ConfigError(f"{where}: empty list")
    return [eval_number(p, where) for p in parts]


def _fmt(v):
    return repr(float(v))


def _fmt_list(vs):
    return ", ".join(_fmt(v) for v in vs)


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "experiment"
    medium: MediumParams = field(default_factory=MediumParams)
    surface: SurfaceSpec = field(default_factory=SurfaceSpec)
    schedule: Schedule = field(default_factory=lambda: Schedule((0.5, 1.0, 2.0), Schedule.paper_samples(3)))
    heights: LineHeights | None = None
    stats_n: int = 101
    truth: str = "nominal"
    output: str = "runs/experiment"
    forward_tol: float = 1e-6

    def with_seed(self, seed):
        return replace(self, schedule=replace(self.schedule, seed=int(seed)))

    def with_output(self, output):
        return replace(self, output=str(output))

    def resolved_heights(self):
        """Configured heights, or the automatic ones around the mean profile."""
        if self.heights is not None:
            return self.heights
        x = 2.0 * math.pi * np.arange(2048) / 2048
        f = self.surface.mean_profile(x)
        return LineHeights.auto(float(f.min()), float(f.max()), self.surface.sigma)

    def to_ini(self):
        """Canonical INI text; :func:`loads` of it returns an equal config."""
        cp = configparser.ConfigParser(interpolation=None)
        cp["experiment"] = {"name": self.name, "output": self.output}
        m = self.medium
        cp["medium"] = {"rho_f": _fmt(m.rho_f), "rho": _fmt(m.rho), "lambda": _fmt(m.lam), "mu": _fmt(m.mu), "c": _fmt(m.c)}
        s = self.surface
        cp["surface"] = {
            "preset": s.deterministic,
            "sigma": _fmt(s.sigma),
            "ell": _fmt(s.ell),
            "skewness": _fmt(s.S),
            "kurtosis": _fmt(s.K),
        }
        if s.P is not None:
            cp["surface"]["modes"] = str(int(s.P))
        sc = self.schedule
        cp["schedule"] = {
            "kappas": _fmt_list(sc.kappas),
            "samples": ", ".join(str(v) for v in sc.M_per_stage),
            "angles": _fmt_list(sc.angles),
            "eps": _fmt(sc.eps),
            "gamma": _fmt(sc.gamma),
            "delta": _fmt(sc.delta),
            "T": str(sc.T),
            "tau": _fmt(sc.tau),
            "N": str(sc.N),
            "N_prime": str(sc.N_prime),
            "seed": str(sc.seed),
            "eta0": _fmt(sc.eta0),
        }
        h = self.heights
        cp["geometry"] = (
            {"heights": "auto"}
            if h is None
            else {"b_plus": _fmt(h.b_plus), "a_plus": _fmt(h.a_plus), "a_minus": _fmt(h.a_minus), "b_minus": _fmt(h.b_minus)}
        )
        cp["forward"] = {"tol": _fmt(self.forward_tol)}
        cp["stats"] = {"n": str(self.stats_n), "truth": self.truth}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    def hash(self, exclude_output=True):
        """SHA-256 of the canonical INI (the output directory does not count)."""
        cfg = self.with_output("") if exclude_output else self
        return hashlib.sha256(cfg.to_ini().encode()).hexdigest()

    def check_wood(self):
        """Wood check for every ``(kappa_j, theta_l)`` at the synthesis truncation."""
        sc = self.schedule
        for k in sc.kappas:
            for t in sc.angles:
                # data synthesis uses N + 10 orders, which covers the inversion's N
                require_no_wood(*make_mode_table(self.medium, k, t, sc.N + 10))


class _Reader:
    def __init__(self, cp):
        self.cp = cp
        self.used = set()

    def has(self, sec, key):
        return self.cp.has_option(sec, key)

    def raw(self, sec, key, default=None):
        self.used.add((sec, key.lower()))
        if self.cp.has_option(sec, key):
            return self.cp.get(sec, key)
        return default

    def num(self, sec, key, default):
        v = self.raw(sec, key)
        return default if v is None else float(eval_number(v, f"{sec}.{key}"))

    def int(self, sec, key, default):
        v = self.raw(sec, key)
        if v is None:
            return default
        x = eval_number(v, f"{sec}.{key}")
        if float(x) != int(x):
            raise ConfigError(f"{sec}.{key}: expected an integer, got {v!r}")
        return int(x)

    def nums(self, sec, key, default):
        v = self.raw(sec, key)
        return default if v is None else [float(x) for x in eval_list(v, f"{sec}.{key}")]


_KNOWN = {
    "experiment": {"name", "output"},
    "medium": {"rho_f", "rho", "lambda", "mu", "c"},
    "surface": {"preset", "sigma", "ell", "skewness", "kurtosis", "modes"},
    "schedule": {"kappas", "samples", "angles", "eps", "gamma", "delta", "t", "tau", "n", "n_prime", "seed", "eta0"},
    "geometry": {"heights", "b_plus", "a_plus", "a_minus", "b_minus"},
    "forward": {"tol"},
    "stats": {"n", "truth"},
}


def loads(text, source="<string>", check_wood=True):
    """Parse INI text into a validated :class:`ExperimentConfig`."""
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    for sec in cp.sections():
        if sec not in _KNOWN:
            raise ConfigError(f"{source}: unknown section [{sec}]")
        for key in cp.options(sec):
            if key not in _KNOWN[sec]:
                raise ConfigError(f"{source}: unknown key {sec}.{key}")
    r = _Reader(cp)

    def build(what, fn):
        try:
            return fn()
        except ConfigError as exc:
            raise ConfigError(f"{source}: [{what}] {exc}") from None

    name = r.raw("experiment", "name", "experiment")
    output = r.raw("experiment", "output", f"runs/{name}")
    medium = build(
        "medium",
        lambda: MediumParams(
            rho_f=r.num("medium", "rho_f", 1.0),
            rho=r.num("medium", "rho", 1.0),
            lam=r.num("medium", "lambda", 1.0),
            mu=r.num("medium", "mu", 1.0),
            c=r.num("medium", "c", 5.0),
        ),
    )
    preset = r.raw("surface", "preset", "ex1").strip()
    if preset not in PRESETS:
        raise ConfigError(f"{source}: surface.preset: unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    modes = r.raw("surface", "modes")
    surface = build(
        "surface",
        lambda: SurfaceSpec(
            deterministic=preset,
            sigma=r.num("surface", "sigma", 1 / 12),
            ell=r.num("surface", "ell", 2.0),
            S=r.num("surface", "skewness", 0.0),
            K=r.num("surface", "kurtosis", 3.0),
            P=None if modes is None else r.int("surface", "modes", None),
        ),
    )
    kappas = r.nums("schedule", "kappas", [0.5, 1.0, 2.0])
    samples = r.raw("schedule", "samples")
    if samples is None:
        M = list(Schedule.paper_samples(len(kappas)))
    else:
        M = [int(v) for v in eval_list(samples, "schedule.samples")]
        if any(float(v) != int(v) for v in eval_list(samples, "schedule.samples")):
            raise ConfigError(f"{source}: schedule.samples: expected integers")
    Np = r.raw("schedule", "N_prime")
    schedule = build(
        "schedule",
        lambda: Schedule(
            kappas=kappas,
            M_per_stage=M,
            angles=r.nums("schedule", "angles", list(DEFAULT_ANGLES)),
            eps=r.num("schedule", "eps", 1e-3),
            gamma=r.num("schedule", "gamma", 1e-6),
            delta=r.num("schedule", "delta", 1e-6),
            T=r.int("schedule", "T", 200),
            tau=r.num("schedule", "tau", 0.005),
            N=r.int("schedule", "N", 15),
            N_prime=None if Np is None else r.int("schedule", "N_prime", None),
            seed=r.int("schedule", "seed", 0),
            eta0=r.num("schedule", "eta0", 1e-5),
        ),
    )
    if r.raw("geometry", "heights", "auto").strip() == "auto" and not any(
        r.has("geometry", k) for k in ("b_plus", "a_plus", "a_minus", "b_minus")
    ):
        heights = None
    else:
        try:
            vals = {k: r.num("geometry", k, None) for k in ("b_plus", "a_plus", "a_minus", "b_minus")}
        except ConfigError as exc:
            raise ConfigError(f"{source}: {exc}") from None
        missing = [k for k, v in vals.items() if v is None]
        if missing:
            raise ConfigError(f"{source}: geometry: explicit heights need all of b_plus, a_plus, a_minus, b_minus; missing {missing}")
        heights = build("geometry", lambda: LineHeights(**vals))
    truth = r.raw("stats", "truth", "nominal").strip()
    if truth not in TRUTH_MODES:
        raise ConfigError(f"{source}: stats.truth: expected one of {TRUTH_MODES}, got {truth!r}")
    n = r.int("stats", "n", 101)
    if n < 3:
        raise ConfigError(f"{source}: stats.n: need at least 3 grid points")
    tol = r.num("forward", "tol", 1e-6)
    if not 0 < tol < 1e-2:
        raise ConfigError(f"{source}: forward.tol must lie in (0, 1e-2)")
    cfg = ExperimentConfig(
        name=name, medium=medium, surface=surface, schedule=schedule, heights=heights,
        stats_n=n, truth=truth, output=output, forward_tol=tol,
    )
    if cfg.heights is not None:
        x = 2.0 * math.pi * np.arange(2048) / 2048
        f = cfg.surface.mean_profile(x)
        build("geometry", lambda: cfg.heights.check_profile(float(f.min()), float(f.max())))
    if check_wood:
        cfg.check_wood()
    return cfg


def load_config(path, check_wood=True):
    """Read and validate a config file (defaults filled, Wood checks run)."""
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return loads(text, source=str(path), check_wood=check_wood)
