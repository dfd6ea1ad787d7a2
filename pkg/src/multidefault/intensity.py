"""Inter-arrival intensity models for ordered default times.

A model supplies ``rate(n, times, x)``: the intensity of the n-th
inter-arrival time at (own-clock) ``times`` given factor values ``x``
observed at those same times.  Factor-driven levels are therefore evaluated
on the shifted clock along the original path.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .errors import DomainError
from .grid import TimeGrid, cumulative_trapezoid

EPS_LAM = 1e-8


class IntensityModel:
    """Base class; subclasses implement ``_raw_rate``."""

    n_levels: int
    eps_lam: float = EPS_LAM
    #: True when rates ignore the factor value.
    deterministic: bool = True

    def _raw_rate(self, n: int, times: np.ndarray, x: np.ndarray | None) -> np.ndarray:
        raise NotImplementedError

    def check_level(self, n: int) -> None:
        if not (1 <= n <= self.n_levels):
            raise DomainError(f"level {n} outside 1..{self.n_levels}")

    def rate(self, n: int, times, x=None) -> np.ndarray:
        self.check_level(n)
        times = np.asarray(times, dtype=float)
        xv = None if x is None else np.broadcast_to(np.asarray(x, dtype=float), times.shape)
        if xv is None and not self.deterministic:
            raise DomainError(f"{type(self).__name__} needs factor values")
        raw = np.broadcast_to(np.asarray(self._raw_rate(n, times, xv), dtype=float), times.shape)
        if np.any(raw < 0) or np.any(~np.isfinite(raw)):
            raise DomainError(f"level {n} produced a negative or non-finite rate")
        return np.maximum(raw, self.eps_lam)

    def cumulative(self, n: int, grid: TimeGrid, x=None) -> np.ndarray:
        """Own-clock cumulative hazard at the grid nodes; ``x`` has shape (..., n+1)."""
        times = grid.nodes if x is None else np.broadcast_to(grid.nodes, np.shape(x))
        return cumulative_trapezoid(self.rate(n, times, x), grid.dt)


@dataclass(frozen=True)
class ConstantPerLevel(IntensityModel):
    rates: tuple

    def __init__(self, rates: Sequence[float]):
        object.__setattr__(self, "rates", tuple(float(r) for r in rates))
        if not self.rates or min(self.rates) < 0:
            raise DomainError("rates must be a nonempty list of nonnegative numbers")

    @property
    def n_levels(self) -> int:
        return len(self.rates)

    def _raw_rate(self, n, times, x):
        return np.full(times.shape, self.rates[n - 1])


@dataclass(frozen=True)
class PiecewiseConstant(IntensityModel):
    """Right-continuous step rates: ``values[n-1][i]`` on ``[knots[i], knots[i+1])``."""

    knots: tuple
    values: tuple

    def __init__(self, knots: Sequence[float], values: Sequence[Sequence[float]]):
        k = np.asarray(knots, dtype=float)
        v = np.atleast_2d(np.asarray(values, dtype=float))
        if k.ndim != 1 or k[0] != 0 or np.any(np.diff(k) <= 0):
            raise DomainError("knots must start at 0 and increase strictly")
        if v.shape[1] != k.size:
            raise DomainError("each level needs one value per knot")
        if np.any(v < 0):
            raise DomainError("step values must be nonnegative")
        object.__setattr__(self, "knots", tuple(k))
        object.__setattr__(self, "values", tuple(map(tuple, v)))

    @property
    def n_levels(self) -> int:
        return len(self.values)

    def _raw_rate(self, n, times, x):
        idx = np.searchsorted(np.asarray(self.knots), times, side="right") - 1
        return np.asarray(self.values[n - 1])[np.clip(idx, 0, None)]


class SelfExciting(IntensityModel):
    """``lambda^n_t = mu_t + n exp(-gamma t)``.

    ``mu`` is a constant, a callable of time, or ``None`` meaning the factor
    value itself (a stochastic, F-adapted ``mu``).
    """

    def __init__(self, mu: float | Callable | None, gamma: float, n_levels: int):
        if gamma <= 0:
            raise DomainError("gamma must be positive")
        if n_levels < 1:
            raise DomainError("n_levels must be at least 1")
        self.mu, self.gamma, self._n = mu, float(gamma), int(n_levels)
        self.deterministic = mu is not None

    @property
    def n_levels(self) -> int:
        return self._n

    def mu_at(self, times, x):
        if self.mu is None:
            return x
        if callable(self.mu):
            return np.asarray(self.mu(times), dtype=float)
        return np.full(np.shape(times), float(self.mu))

    def _raw_rate(self, n, times, x):
        return self.mu_at(times, x) + n * np.exp(-self.gamma * times)

    def __repr__(self):
        return f"SelfExciting(mu={self.mu!r}, gamma={self.gamma}, n_levels={self._n})"


class FactorDriven(IntensityModel):
    """Per-level maps ``f_n(t, x)`` of time and factor value."""

    deterministic = False

    def __init__(self, funcs: Sequence[Callable[[np.ndarray, np.ndarray], np.ndarray]]):
        if not funcs:
            raise DomainError("need at least one level")
        self.funcs = tuple(funcs)

    @property
    def n_levels(self) -> int:
        return len(self.funcs)

    def _raw_rate(self, n, times, x):
        return self.funcs[n - 1](times, x)

    @classmethod
    def affine(cls, base: Sequence[float], slope: Sequence[float]) -> "FactorDriven":
        """``lambda^n = base_n + slope_n * x`` (the factor should keep this nonnegative)."""
        if len(base) != len(slope):
            raise DomainError("base and slope must have the same length")
        funcs = [(lambda t, x, b=float(b), s=float(s): b + s * x) for b, s in zip(base, slope)]
        model = cls(funcs)
        model.base, model.slope = tuple(map(float, base)), tuple(map(float, slope))
        return model


def _factor_arg(model: IntensityModel, x):
    if x is None and not model.deterministic:
        raise DomainError("factor value required for a stochastic intensity")
    return x


def level_intensity(model: IntensityModel, n: int, t: float, x=None) -> float:
    """``lambda~^n_t`` at factor value ``x``."""
    return float(model.rate(n, np.asarray(float(t)), _factor_arg(model, x)))


def shifted_intensity(model: IntensityModel, n: int, t: float, tau_prev: float, x=None) -> float:
    """``lambda^n_t = 1{t >= tau_prev} lambda~^n_{t - tau_prev}``."""
    if tau_prev < 0:
        raise DomainError("tau_prev must be nonnegative")
    model.check_level(n)
    if t < tau_prev:
        return 0.0
    return level_intensity(model, n, t - tau_prev, x)


def survival_probability(model: IntensityModel, n: int, t: float, tau_prev: float, x=None,
                         grid: TimeGrid | None = None) -> float:
    """``exp(-int_0^{(t - tau_prev)^+} lambda~^n)`` via the trapezoid cumulative on ``grid``.

    ``x`` is either a scalar factor value (held constant) or an array of factor
    values at the grid nodes in the level's own clock.
    """
    if grid is None:
        raise DomainError("a TimeGrid is required")
    grid.check_time(t)
    model.check_level(n)
    y = max(t - tau_prev, 0.0)
    if y == 0.0:
        return 1.0
    xs = None if x is None else np.broadcast_to(np.asarray(x, dtype=float), grid.nodes.shape)
    cum = cumulative_trapezoid(model.rate(n, grid.nodes, _factor_arg(model, xs)), grid.dt)
    return float(np.exp(-np.interp(y, grid.nodes, cum)))


class JumpIntensity(NamedTuple):
    rate: float
    exhausted: bool


def counting_jump_intensity(model: IntensityModel, t: float, default_history: Sequence[float] = (),
                            x=None) -> JumpIntensity:
    """Intensity of the counting process ``N_t`` after ``k = len(history)`` defaults."""
    hist = np.asarray(default_history, dtype=float)
    if hist.size and (np.any(np.diff(hist) <= 0) or hist[-1] > t or hist[0] <= 0):
        raise DomainError("default history must be strictly increasing, positive and <= t")
    k = hist.size
    if k >= model.n_levels:
        return JumpIntensity(0.0, True)
    tau_k = float(hist[-1]) if k else 0.0
    return JumpIntensity(shifted_intensity(model, k + 1, t, tau_k, x), False)
