"""Scenario configuration: YAML parsing, defaults, validation and object construction."""

from __future__ import annotations

import copy
import hashlib
from dataclasses import dataclass
from typing import Any

import numpy as np
import yaml

from .claims import RecoveryLeg, SurvivalLeg
from .defaults import FactorPath, PayoffDecomposition
from .errors import ConfigError, MultiDefaultError
from .grid import TimeGrid
from .intensity import ConstantPerLevel, FactorDriven, IntensityModel, PiecewiseConstant, SelfExciting
from .priors import N_HAZARD_BINS, PATH_ENUM_CAP, RobustFactorLattice
from .sublinear import TOL_DPP

RUN_DEFAULTS = {
    "seed": 0,
    "n_paths": 100_000,
    "n_hazard_bins": N_HAZARD_BINS,
    "path_enum_cap": PATH_ENUM_CAP,
    "tol_dpp": TOL_DPP,
    "ci_mult": 3.0,
    "w_match": None,
    "min_kept": 200,
    "policy": 0,
}
GRID_DEFAULTS = {"t_max": 1.0, "n_steps": 10_000}
SECTIONS = ("grid", "model", "lattice", "run", "claims", "simulate", "verify")
VERIFY_KINDS = ("dpp", "tower", "commutation", "oracle")


def _fail(field: str, msg: str) -> ConfigError:
    return ConfigError(f"{field}: {msg}")


def _num(d: dict, key: str, field: str, default=None, positive=False, integer=False):
    if key not in d:
        if default is None:
            raise _fail(f"{field}.{key}", "required")
        return default
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise _fail(f"{field}.{key}", f"expected a number, got {v!r}")
    if integer and int(v) != v:
        raise _fail(f"{field}.{key}", f"expected an integer, got {v!r}")
    if positive and not v > 0:
        raise _fail(f"{field}.{key}", f"must be positive, got {v!r}")
    return int(v) if integer else float(v)


def _seq(d: dict, key: str, field: str) -> list:
    v = d.get(key)
    if not isinstance(v, list) or not v:
        raise _fail(f"{field}.{key}", "expected a nonempty list")
    return v


# -- payoff specs ---------------------------------------------------------------

def make_y(spec, field: str):
    """``Y``: a number, or ``{a, b}`` meaning ``a + b * x_T`` (terminal factor value)."""
    if spec is None:
        return None
    if isinstance(spec, (int, float)) and not isinstance(spec, bool):
        return float(spec)
    if isinstance(spec, dict) and set(spec) <= {"a", "b"}:
        a, b = float(spec.get("a", 0.0)), float(spec.get("b", 0.0))
        return lambda path, a=a, b=b: a + b * float(path.values[-1])
    raise _fail(field, f"expected a number or {{a, b}}, got {spec!r}")


def make_z(spec, field: str, grid: TimeGrid):
    """``Z_u``: a number, or ``{a, b, c}`` meaning ``a + b * u + c * x(u)``."""
    if isinstance(spec, (int, float)) and not isinstance(spec, bool):
        return float(spec)
    if isinstance(spec, dict) and set(spec) <= {"a", "b", "c"}:
        a, b, c = (float(spec.get(k, 0.0)) for k in "abc")
        if c == 0.0:
            return lambda u, path, a=a, b=b: a + b * u
        return lambda u, path, a=a, b=b, c=c: a + b * u + c * path.value_at(u, grid)
    raise _fail(field, f"expected a number or {{a, b, c}}, got {spec!r}")


def make_claim(spec: dict, field: str, grid: TimeGrid, n_levels: int):
    if not isinstance(spec, dict):
        raise _fail(field, "expected a mapping")
    kind = spec.get("type")
    i = _num(spec, "level", field, integer=True)
    if not (1 <= i <= n_levels):
        raise _fail(f"{field}.level", f"must lie in 1..{n_levels}")
    if kind == "survival":
        T = _num(spec, "T", field)
        _check_time(grid, T, f"{field}.T")
        return SurvivalLeg(i, T, make_y(spec.get("Y"), f"{field}.Y"))
    if kind == "recovery":
        w = _seq(spec, "window", field)
        if len(w) != 2 or not all(isinstance(x, (int, float)) for x in w) or w[0] > w[1]:
            raise _fail(f"{field}.window", f"expected [lo, hi] with lo <= hi, got {w!r}")
        for x in w:
            _check_time(grid, float(x), f"{field}.window")
        M = _num(spec, "M", field, positive=True)
        return RecoveryLeg(i, (float(w[0]), float(w[1])), M, make_z(spec.get("Z", 1.0), f"{field}.Z", grid))
    raise _fail(f"{field}.type", f"expected 'survival' or 'recovery', got {kind!r}")


def make_payoff(spec: dict, field: str, grid: TimeGrid, n_levels: int) -> PayoffDecomposition:
    """Payoff for verification: a claim spec, or ``switch`` (``Y_below`` if ``u_level <= cut`` else ``Y_above``)."""
    if not isinstance(spec, dict):
        raise _fail(field, "expected a mapping")
    if spec.get("type") == "switch":
        i = _num(spec, "level", field, integer=True)
        if not (1 <= i <= n_levels):
            raise _fail(f"{field}.level", f"must lie in 1..{n_levels}")
        cut = _num(spec, "cut", field)
        lo = make_y(spec.get("below", 1.0), f"{field}.below")
        hi = make_y(spec.get("above", 0.0), f"{field}.above")

        def fn(u, path: FactorPath):
            yl = lo(path) if callable(lo) else lo
            yh = hi(path) if callable(hi) else hi
            return np.where(u[:, i - 1] <= cut, yl, yh)

        return PayoffDecomposition(fn, n_levels, "switch")
    return make_claim(spec, field, grid, n_levels).payoff(n_levels)


def _check_time(grid: TimeGrid, x: float, field: str) -> None:
    if not (0 <= x <= grid.t_max):
        raise _fail(field, f"time {x} outside [0, {grid.t_max}]")
    if not grid.is_node(x):
        raise _fail(field, f"time {x} is not a grid node (dt={grid.dt})")


# -- model and lattice ----------------------------------------------------------

def make_model(spec: dict) -> IntensityModel:
    f = "model"
    if not isinstance(spec, dict):
        raise _fail(f, "expected a mapping")
    kind = spec.get("kind")
    if kind == "constant":
        return ConstantPerLevel([float(x) for x in _seq(spec, "rates", f)])
    if kind == "piecewise":
        return PiecewiseConstant(_seq(spec, "knots", f), _seq(spec, "values", f))
    if kind == "self_exciting":
        gamma = _num(spec, "gamma", f, positive=True)
        n = _num(spec, "n_levels", f, integer=True, positive=True)
        mu = spec.get("mu", 0.0)
        if mu == "factor":
            return SelfExciting(None, gamma, n)
        if isinstance(mu, dict):
            scale = _num(mu, "scale", f"{f}.mu")
            rate = _num(mu, "decay", f"{f}.mu", default=0.0)
            if scale < 0 or rate < 0:
                raise _fail(f"{f}.mu", "scale and decay must be nonnegative")
            return SelfExciting(lambda t, s=scale, r=rate: s * np.exp(-r * t), gamma, n)
        if isinstance(mu, (int, float)) and not isinstance(mu, bool) and mu >= 0:
            return SelfExciting(float(mu), gamma, n)
        raise _fail(f"{f}.mu", f"expected a nonnegative number, {{scale, decay}} or 'factor', got {mu!r}")
    if kind == "factor_affine":
        base, slope = _seq(spec, "base", f), _seq(spec, "slope", f)
        if len(base) != len(slope):
            raise _fail(f, "base and slope need the same length")
        return FactorDriven.affine([float(x) for x in base], [float(x) for x in slope])
    raise _fail(f"{f}.kind", f"unknown model kind {kind!r}")


def make_lattice(spec: dict | None, t_max: float) -> RobustFactorLattice:
    f = "lattice"
    spec = spec or {"kind": "constant"}
    kind = spec.get("kind", "constant")
    if kind == "constant":
        return RobustFactorLattice.constant(t_max, _num(spec, "value", f, default=0.0))
    if kind == "binomial":
        p = spec.get("p_up")
        p = [p] if isinstance(p, (int, float)) else p
        if not isinstance(p, list) or not p or any(not (0 <= float(x) <= 1) for x in p):
            raise _fail(f"{f}.p_up", "expected probabilities in [0, 1]")
        return RobustFactorLattice.binomial(t_max, _num(spec, "n_steps", f, integer=True, positive=True),
                                            _num(spec, "x0", f), _num(spec, "step", f), [float(x) for x in p])
    if kind == "explicit":
        values = _seq(spec, "values", f)
        kernels = _seq(spec, "kernels", f)
        L = len(values) - 1
        grid = TimeGrid(t_max, max(L, 1))
        return RobustFactorLattice(grid, values, kernels, int(spec.get("initial_state", 0)))
    raise _fail(f"{f}.kind", f"unknown lattice kind {kind!r}")


# -- the config object ------------------------------------------------------------

@dataclass
class ScenarioConfig:
    data: dict

    @classmethod
    def from_text(cls, text: str) -> "ScenarioConfig":
        try:
            raw = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            where = f"line {mark.line + 1}, column {mark.column + 1}" if mark else "unknown position"
            raise ConfigError(f"YAML parse error at {where}: {getattr(exc, 'problem', exc)}") from None
        return cls.from_dict(raw)

    @classmethod
    def load(cls, path: str) -> "ScenarioConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                return cls.from_text(fh.read())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None

    @classmethod
    def from_dict(cls, raw: Any) -> "ScenarioConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config must be a mapping at the top level")
        unknown = set(raw) - set(SECTIONS)
        if unknown:
            raise ConfigError(f"unknown section(s): {', '.join(sorted(unknown))}")
        data = copy.deepcopy(raw)
        data["grid"] = {**GRID_DEFAULTS, **(data.get("grid") or {})}
        data["run"] = {**RUN_DEFAULTS, **(data.get("run") or {})}
        data["lattice"] = data.get("lattice") or {"kind": "constant"}
        data.setdefault("claims", [])
        data.setdefault("simulate", {})
        data.setdefault("verify", {})
        if "model" not in data:
            raise ConfigError("model: required")
        cfg = cls(data)
        cfg.validate()
        return cfg

    def dump(self) -> str:
        return yaml.safe_dump(self.data, sort_keys=True, default_flow_style=None)

    def digest(self) -> str:
        return hashlib.sha256(self.dump().encode()).hexdigest()

    @property
    def run(self) -> dict:
        return self.data["run"]

    def with_seed(self, seed: int) -> "ScenarioConfig":
        data = copy.deepcopy(self.data)
        data["run"]["seed"] = int(seed)
        return ScenarioConfig(data)

    # construction -------------------------------------------------------------
    def grid(self) -> TimeGrid:
        g = self.data["grid"]
        return TimeGrid(_num(g, "t_max", "grid", positive=True), _num(g, "n_steps", "grid", integer=True, positive=True))

    def model(self) -> IntensityModel:
        return make_model(self.data["model"])

    def lattice(self) -> RobustFactorLattice:
        return make_lattice(self.data["lattice"], self.grid().t_max)

    def claims(self) -> list[tuple[str, Any, float, list]]:
        """``(id, claim, t, regimes)`` per configured claim."""
        grid, n = self.grid(), self.model().n_levels
        out = []
        for j, spec in enumerate(self.data["claims"]):
            field = f"claims[{j}]"
            claim = make_claim(spec, field, grid, n)
            t = _num(spec, "t", field, default=0.0)
            _check_time(grid, t, f"{field}.t")
            regimes = spec.get("regimes", [[0, []]])
            parsed = []
            for r in regimes:
                if not (isinstance(r, list) and len(r) == 2 and isinstance(r[1], list)):
                    raise _fail(f"{field}.regimes", f"expected [k, [u_1..u_k]], got {r!r}")
                k, u = int(r[0]), [float(x) for x in r[1]]
                if len(u) != k or any(x > t for x in u) or any(b <= a for a, b in zip(u, u[1:])):
                    raise _fail(f"{field}.regimes", f"inconsistent regime {r!r} at t={t}")
                parsed.append((k, u))
            out.append((str(spec.get("id", f"claim{j}")), claim, t, parsed))
        return out

    def validate(self) -> None:
        """Build every object once so that config errors surface before any computation."""
        try:
            grid = self.grid()
            model = self.model()
            lat = self.lattice()
            if lat.t_max != grid.t_max:
                raise _fail("lattice", "lattice horizon must equal grid.t_max")
            if grid.n_steps % lat.n_steps:
                raise _fail("grid.n_steps", f"must be a multiple of the lattice steps ({lat.n_steps})")
            self.claims()
            run = self.run
            for key in ("n_paths", "n_hazard_bins", "path_enum_cap", "min_kept"):
                v = _num(run, key, "run", integer=True)
                if v < 0:
                    raise _fail(f"run.{key}", "must be nonnegative")
            _num(run, "seed", "run", integer=True)
            for key in ("tol_dpp", "ci_mult"):
                _num(run, key, "run", positive=True)
            if run["w_match"] is not None:
                _num(run, "w_match", "run", positive=True)
            self._validate_verify(grid, model)
            sim = self.data["simulate"]
            for t in sim.get("times", []):
                if not (0 <= float(t) <= grid.t_max):
                    raise _fail("simulate.times", f"time {t} outside [0, {grid.t_max}]")
            for tri in sim.get("cov_triples", []):
                if not (isinstance(tri, list) and len(tri) == 3 and 0 <= tri[0] < tri[1] < tri[2] <= grid.t_max):
                    raise _fail("simulate.cov_triples", f"expected [u, s, t] with u < s < t, got {tri!r}")
        except ConfigError:
            raise
        except MultiDefaultError as exc:
            raise ConfigError(str(exc)) from None

    def _validate_verify(self, grid: TimeGrid, model: IntensityModel) -> None:
        v = self.data["verify"]
        if not v:
            return
        kind = v.get("kind")
        if kind is not None and kind not in VERIFY_KINDS:
            raise _fail("verify.kind", f"expected one of {VERIFY_KINDS}, got {kind!r}")
        for key in ("s", "t", "T"):
            if key in v:
                _check_time(grid, _num(v, key, "verify"), f"verify.{key}")
        if "payoff" in v:
            make_payoff(v["payoff"], "verify.payoff", grid, model.n_levels)
        for j, case in enumerate(v.get("cases", [])):
            make_payoff(case.get("payoff", {}), f"verify.cases[{j}].payoff", grid, model.n_levels)
