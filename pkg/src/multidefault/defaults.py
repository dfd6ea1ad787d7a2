"""Ordered default times: construction, simulation and the fixed-prior decomposition.

Given exponential marks ``E_n`` and a factor path, ``tau~_n`` is the first time
the own-clock cumulative hazard of level ``n`` reaches ``E_n`` and
``tau_n = tau~_1 + ... + tau~_n``.  Conditional expectations given the
enlarged filtration split into regimes ``{tau_k <= t < tau_{k+1}}``; each regime
term is ``exp(Lambda^{k+1}(t - u_k))`` times an F-conditional expectation of an
iterated default-density integral, computed here per lattice path.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterator, NamedTuple, Sequence

import numpy as np

from .errors import DomainError, InsufficientConditioningError
from .grid import TimeGrid, atoms_after
from .intensity import IntensityModel
from .priors import (PATH_ENUM_CAP, ConditionalValue, RobustFactorLattice, node_policy, rollback,
                     sample_paths)
from .rng import exponential_marks

MIN_KEPT = 200
N_LEVELS_MAX = 3


@dataclass(frozen=True)
class FactorPath:
    """A factor path: lattice state indices and factor values at the quadrature nodes."""

    index: int
    states: np.ndarray
    values: np.ndarray

    def value_at(self, times, grid: TimeGrid) -> np.ndarray:
        j = np.clip(np.floor(np.asarray(times) / grid.dt + 1e-9).astype(int), 0, grid.n_steps)
        return self.values[j]


@dataclass(frozen=True)
class DefaultScenario:
    exp_marks: np.ndarray
    factor_path: np.ndarray | None
    inter_arrival: np.ndarray
    default_times: np.ndarray
    censored: np.ndarray
    path_id: int = 0


class PayoffDecomposition:
    """``phi(u_1..u_N, omega)``; censored coordinates arrive as ``+inf``.

    ``fn(u, path)`` receives ``u`` of shape ``(M, N)`` and a :class:`FactorPath`
    and returns ``M`` values.
    """

    def __init__(self, fn: Callable[[np.ndarray, FactorPath], np.ndarray], n_levels: int,
                 name: str = "phi"):
        self.fn, self.n_levels, self.name = fn, int(n_levels), name

    def __call__(self, u: np.ndarray, path: FactorPath) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        return np.broadcast_to(np.asarray(self.fn(u, path), dtype=float), u.shape[:1])

    @classmethod
    def survival(cls, i: int, T: float, n_levels: int, Y=None) -> "PayoffDecomposition":
        """``1{u_i > T} Y(omega)``."""
        def fn(u, path):
            y = 1.0 if Y is None else _path_scalar(Y, path)
            return (u[:, i - 1] > T) * y
        return cls(fn, n_levels, f"survival{i}")

    @classmethod
    def recovery(cls, i: int, a: float, b: float, n_levels: int, Z=None) -> "PayoffDecomposition":
        """``1{a < u_i <= b} Z(u_i, omega)``."""
        def fn(u, path):
            ui = u[:, i - 1]
            hit = (ui > a) & (ui <= b)
            if Z is None:
                return hit * 1.0
            z = np.zeros(ui.shape)
            z[hit] = _path_curve(Z, ui[hit], path)
            return z
        return cls(fn, n_levels, f"recovery{i}")


def _path_scalar(Y, path: FactorPath) -> float:
    return float(Y(path)) if callable(Y) else float(Y)


def _path_curve(Z, times: np.ndarray, path: FactorPath) -> np.ndarray:
    if callable(Z):
        return np.broadcast_to(np.asarray(Z(times, path), dtype=float), times.shape)
    return np.full(times.shape, float(Z))


def as_payoff(phi, n_levels: int) -> PayoffDecomposition:
    if isinstance(phi, PayoffDecomposition):
        return phi
    if callable(phi):
        return PayoffDecomposition(phi, n_levels)
    raise DomainError("phi must be a PayoffDecomposition or a callable (u, path) -> values")


def check_regime(k: int, u: Sequence[float], t: float, n_levels: int) -> np.ndarray:
    u = np.asarray(u, dtype=float).reshape(-1)
    if not (0 <= k <= n_levels):
        raise DomainError(f"regime {k} outside 0..{n_levels}")
    if u.size != k:
        raise DomainError(f"regime {k} needs {k} default times, got {u.size}")
    if k and (u[0] <= 0 or np.any(np.diff(u) <= 0)):
        raise DomainError("observed default times must be positive and strictly increasing")
    if k and u[-1] > t * (1 + 1e-12):
        raise DomainError(f"observed default time {u[-1]} exceeds t={t}")
    return u


class PathEngine:
    """Per-path hazards and regime inner expectations for a (model, lattice, grid) triple."""

    def __init__(self, model: IntensityModel, lat: RobustFactorLattice, grid: TimeGrid,
                 n_levels: int | None = None, cap: int = PATH_ENUM_CAP):
        self.model, self.lat, self.grid = model, lat, grid
        self.n_levels = model.n_levels if n_levels is None else int(n_levels)
        if not (1 <= self.n_levels <= model.n_levels):
            raise DomainError(f"n_levels must lie in 1..{model.n_levels}")
        lat.check_fine_grid(grid)
        self.tree = lat.tree(cap)
        self.paths = self.tree.paths
        self.xs = lat.fine_values(self.paths, grid)
        P = self.paths.shape[0]
        self.cum = []
        for n in range(1, self.n_levels + 1):
            if model.deterministic:
                c = model.cumulative(n, grid)
                self.cum.append(np.broadcast_to(c, (P, c.size)))
            else:
                self.cum.append(model.cumulative(n, grid, self.xs))
        self.require_nonnegative = False

    @property
    def n_paths(self) -> int:
        return self.paths.shape[0]

    def factor_path(self, p: int) -> FactorPath:
        return FactorPath(p, self.paths[p], self.xs[p])

    def depth(self, t: float) -> int:
        self.grid.node_index(t)
        return self.lat.depth_at(t)

    def survival(self, level: int, y, p: int) -> np.ndarray:
        """``P(tau~_level > y)`` on path ``p`` (own clock)."""
        return np.exp(-np.interp(y, self.grid.nodes, self.cum[level - 1][p]))

    def atoms(self, level: int, prev, p: int):
        return atoms_after(self.cum[level - 1][p], self.grid, prev)

    # -- regime inner expectation ------------------------------------
    def inner(self, phi: PayoffDecomposition, t: float, k: int, U: np.ndarray) -> np.ndarray:
        """Per-path regime-k values ``exp(Lambda(t - u_k)) E^[1{tau~>t-u_k} phi]``; shape ``(P, M)``."""
        U = np.asarray(U, dtype=float).reshape(-1, k) if k else np.zeros((1, 0))
        out = np.empty((self.n_paths, U.shape[0]))
        for p in range(self.n_paths):
            out[p] = self._inner_one(p, phi, t, k, U)
        return out

    def _eval(self, phi, u, path):
        vals = phi(u, path)
        if self.require_nonnegative and np.any(vals < 0):
            raise DomainError("payoff takes negative values; pass allow_signed=True to explore")
        return vals

    def _inner_one(self, p: int, phi: PayoffDecomposition, t: float, k: int, U: np.ndarray) -> np.ndarray:
        N = self.n_levels
        path = self.factor_path(p)
        M = U.shape[0]
        if k == N:
            return self._eval(phi, U, path)
        prev0 = U[:, -1] if k else np.zeros(M)
        norm = self.survival(k + 1, t - prev0, p)
        combos, w, owner = U, np.ones(M), np.arange(M)
        done_u, done_w, done_o = [], [], []
        for level in range(k + 1, N + 1):
            prev = combos[:, -1] if combos.shape[1] else np.zeros(combos.shape[0])
            loc, mass, cens = self.atoms(level, prev, p)
            if level == k + 1:
                mass = np.where(loc > t, mass, 0.0)
            tail = np.full((combos.shape[0], N - combos.shape[1]), np.inf)
            done_u.append(np.hstack([combos, tail]))
            done_w.append(w * cens)
            done_o.append(owner)
            r, j = np.nonzero(mass > 0)
            combos = np.hstack([combos[r], loc[r, j][:, None]])
            w = w[r] * mass[r, j]
            owner = owner[r]
        done_u.append(combos)
        done_w.append(w)
        done_o.append(owner)
        u_all = np.vstack(done_u)
        vals = self._eval(phi, u_all, path)
        acc = np.bincount(np.concatenate(done_o), np.concatenate(done_w) * vals, minlength=M)
        return acc / norm

    def regime_values(self, phi, t: float, k: int, U: np.ndarray, policy=None) -> np.ndarray:
        """Regime-k values at the prefix classes of ``t``; shape ``(Q, M)``. Sup unless ``policy``."""
        X = self.inner(phi, t, k, U)
        pol = None if policy is None else node_policy(self.lat, self.tree, policy)
        return rollback(self.lat, self.tree, X, self.depth(t), pol)


def support_points(grid: TimeGrid, t: float, k: int) -> np.ndarray:
    """All values of ``(tau_1..tau_k) <= t`` charged by the discrete default law; shape ``(M, k)``."""
    rows = np.zeros((1, 0))
    zero = np.zeros(grid.n_steps + 1)
    for _ in range(k):
        prev = rows[:, -1] if rows.shape[1] else np.zeros(rows.shape[0])
        loc, mass, _ = atoms_after(zero, grid, prev)
        valid = (np.arange(grid.n_steps)[None, :] >= grid.cell_start(prev)[:, None]) & (loc <= t)
        r, j = np.nonzero(valid)
        rows = np.hstack([rows[r], loc[r, j][:, None]])
    return rows


# -- construction and simulation ----------------------------------------

def _invert(cum: np.ndarray, grid: TimeGrid, marks: np.ndarray, prev: np.ndarray):
    """Own-clock crossing times of ``marks``; inf where the crossing is beyond ``t_max - prev``."""
    reach = np.interp(grid.t_max - prev, grid.nodes, cum)
    tt = np.interp(marks, cum, grid.nodes)
    return np.where(marks <= reach, tt, np.inf)


def _times_from_cum(cums: Sequence[np.ndarray], grid: TimeGrid, marks: np.ndarray):
    """Sequential inversion for a batch sharing one factor path. Returns (tilde, tau)."""
    P, N = marks.shape
    tilde = np.full((P, N), np.inf)
    tau = np.full((P, N), np.inf)
    prev = np.zeros(P)
    alive = np.ones(P, dtype=bool)
    for n in range(N):
        if not alive.any():
            break
        step = _invert(cums[n], grid, marks[alive, n], prev[alive])
        tilde[alive, n] = step
        nxt = prev[alive] + step
        stuck = np.isfinite(nxt) & (nxt <= prev[alive])
        nxt[stuck] = np.nextafter(prev[alive][stuck], np.inf)
        tau[alive, n] = nxt
        prev[alive] = np.where(np.isfinite(nxt), nxt, prev[alive])
        alive[alive] = np.isfinite(step)
    return tilde, tau


def construct_default_times(model: IntensityModel, exp_marks: Sequence[float], factor_path=None,
                            grid: TimeGrid | None = None, lat: RobustFactorLattice | None = None
                            ) -> DefaultScenario:
    """Invert own-clock cumulative hazards at the marks; later levels censor after a censored one.

    ``factor_path`` may be None (deterministic model), a :class:`FactorPath`, an
    array of lattice state indices (requires ``lat``) or factor values at the grid nodes.
    """
    if grid is None:
        raise DomainError("a TimeGrid is required")
    marks = np.asarray(exp_marks, dtype=float).reshape(-1)
    if marks.size == 0 or marks.size > model.n_levels:
        raise DomainError(f"need between 1 and {model.n_levels} marks")
    if np.any(~(marks > 0)):
        raise DomainError("exponential marks must be positive")
    states = None
    if isinstance(factor_path, FactorPath):
        xs, states = factor_path.values, factor_path.states
    elif factor_path is None:
        xs = None
    else:
        arr = np.asarray(factor_path)
        if lat is not None and arr.size == lat.n_steps + 1:
            states = arr.astype(int)
            xs = lat.fine_values(states[None], grid)[0]
        else:
            xs = np.asarray(arr, dtype=float)
    cums = [model.cumulative(n, grid, xs) for n in range(1, marks.size + 1)]
    tilde, tau = _times_from_cum(cums, grid, marks[None])
    return DefaultScenario(marks, states, tilde[0], tau[0], ~np.isfinite(tau[0]))


@dataclass
class ScenarioBatch:
    """Vectorized scenario stream; iterating yields :class:`DefaultScenario` records."""

    path_index: np.ndarray
    states: np.ndarray
    exp_marks: np.ndarray
    inter_arrival: np.ndarray
    default_times: np.ndarray
    censored: np.ndarray

    def __len__(self) -> int:
        return self.path_index.size

    def __iter__(self) -> Iterator[DefaultScenario]:
        for i in range(len(self)):
            yield DefaultScenario(self.exp_marks[i], self.states[i], self.inter_arrival[i],
                                  self.default_times[i], self.censored[i], int(self.path_index[i]))

    def counts(self, t: float) -> np.ndarray:
        """``N_t``: number of defaults at or before ``t`` per scenario."""
        return (self.default_times <= t).sum(axis=1)

    def ordered(self) -> np.ndarray:
        """Per scenario: non-censored default times positive and strictly increasing,
        with censoring absorbing."""
        tau = self.default_times
        fin = np.isfinite(tau)
        ok = np.where(fin[:, 0], tau[:, 0] > 0, True)
        if tau.shape[1] > 1:
            both = fin[:, 1:] & fin[:, :-1]
            gaps = np.where(both, tau[:, 1:] - np.where(both, tau[:, :-1], 0.0), 1.0)
            ok &= np.all(gaps > 0, axis=1)
            ok &= np.all(fin[:, 1:] <= fin[:, :-1], axis=1)
        return ok


def simulate_scenarios(model: IntensityModel, lat: RobustFactorLattice, policy, n_paths: int,
                       seed: int, grid: TimeGrid, n_levels: int | None = None,
                       path_offset: int = 0) -> ScenarioBatch:
    """Monte Carlo scenarios under the single prior selected by ``policy``.

    Marks and factor paths come from counter-based streams keyed by
    ``(seed, path index)``; ``path_offset`` selects a chunk of the stream so
    chunks can be produced independently and concatenated.
    """
    if n_paths < 0:
        raise DomainError("n_paths must be nonnegative")
    N = model.n_levels if n_levels is None else int(n_levels)
    idx = np.arange(path_offset, path_offset + n_paths, dtype=np.int64)
    states = sample_paths(lat, policy, seed, idx) if n_paths else np.zeros((0, lat.n_steps + 1), int)
    marks = exponential_marks(seed, idx, N) if n_paths else np.zeros((0, N))
    tilde = np.full((n_paths, N), np.inf)
    tau = np.full((n_paths, N), np.inf)
    if n_paths:
        if model.deterministic:
            groups = [(np.arange(n_paths), None)]
        else:
            uniq, inv = np.unique(states, axis=0, return_inverse=True)
            inv = inv.reshape(-1)
            order = np.argsort(inv, kind="stable")
            bounds = np.searchsorted(inv[order], np.arange(uniq.shape[0] + 1))
            groups = [(order[bounds[g]:bounds[g + 1]], uniq[g]) for g in range(uniq.shape[0])]
        lat.check_fine_grid(grid)
        for rows, st in groups:
            xs = None if st is None else lat.fine_values(st[None], grid)[0]
            cums = [model.cumulative(n, grid, xs) for n in range(1, N + 1)]
            tilde[rows], tau[rows] = _times_from_cum(cums, grid, marks[rows])
    return ScenarioBatch(idx, states, marks, tilde, tau, ~np.isfinite(tau))


# -- fixed-prior decomposition and Monte Carlo oracle ---------------------

def conditional_expectation_fixed_prior(model: IntensityModel, lat: RobustFactorLattice, policy,
                                        phi, t: float, regime: tuple, grid: TimeGrid,
                                        n_levels: int | None = None, engine: PathEngine | None = None
                                        ) -> ConditionalValue:
    """Regime-k term of the decomposition under one prior, per factor prefix at ``t``.

    ``regime`` is ``(k, u_(k))``.  ``policy`` is a kernel index, a Markov table or a
    :class:`~multidefault.priors.NodePolicy`.
    """
    eng = engine or PathEngine(model, lat, grid, n_levels)
    phi = as_payoff(phi, eng.n_levels)
    k, u = regime
    u = check_regime(k, u, t, eng.n_levels)
    vals = eng.regime_values(phi, t, k, u[None, :], policy=0 if policy is None else policy)[:, 0]
    d = eng.depth(t)
    return ConditionalValue(t, d, vals, prefixes=eng.tree.prefixes(d), lattice=lat)


class OracleEstimate(NamedTuple):
    mean: float
    stderr: float
    kept: int


def oracle_conditional_expectation(model: IntensityModel, lat: RobustFactorLattice, policy, phi,
                                   t: float, regime: tuple, n_paths: int, seed: int, grid: TimeGrid,
                                   prefix: Sequence[int] | None = None, w_match: float | None = None,
                                   min_kept: int = MIN_KEPT, n_levels: int | None = None,
                                   batch: ScenarioBatch | None = None) -> OracleEstimate:
    """Brute-force Monte Carlo: keep scenarios in the regime at ``t`` and average ``phi(tau)``.

    Observed default times are matched within a window of width ``w_match``
    (default: one grid cell) centred on ``u_(k)``; the factor prefix at ``t`` must
    equal ``prefix`` when the lattice has more than one prefix class there.
    """
    N = model.n_levels if n_levels is None else int(n_levels)
    phi = as_payoff(phi, N)
    k, u = regime
    u = check_regime(k, u, t, N)
    w = grid.dt if w_match is None else float(w_match)
    b = batch or simulate_scenarios(model, lat, policy, n_paths, seed, grid, N)
    tau = b.default_times
    keep = (tau <= t).sum(axis=1) == k
    if k:
        keep &= np.all(np.abs(tau[:, :k] - u[None, :]) <= 0.5 * w, axis=1)
    d = lat.depth_at(t)
    if prefix is not None:
        prefix = np.asarray(prefix, dtype=int)
        if prefix.size != d + 1:
            raise DomainError(f"prefix must have {d + 1} entries at t={t}")
        keep &= np.all(b.states[:, : d + 1] == prefix[None, :], axis=1)
    elif d > 0 and np.unique(b.states[:, : d + 1], axis=0).shape[0] > 1:
        raise DomainError("several prefix classes at t; pass `prefix`")
    kept = int(keep.sum())
    if kept < min_kept:
        raise InsufficientConditioningError(kept, min_kept)
    rows = np.flatnonzero(keep)
    vals = np.empty(kept)
    uniq, inv = np.unique(b.states[rows], axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    for g in range(uniq.shape[0]):
        sel = inv == g
        xs = lat.fine_values(uniq[g][None], grid)[0]
        vals[sel] = phi(tau[rows[sel]], FactorPath(-1, uniq[g], xs))
    return OracleEstimate(float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(kept)), kept)
