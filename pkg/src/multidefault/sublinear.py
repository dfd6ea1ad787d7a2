"""The enlarged-filtration sublinear operator and its verification harness.

On ``{tau_k <= t < tau_{k+1}}`` with observed ``u_(k)`` the operator is

    E_t( exp(Lambda^{k+1}(t - u_k)) E^[ 1{tau~_{k+1} > t - u_k} phi(u_(k), ...) ] )

with ``E_t`` the lattice supremum.  The inner expectation is evaluated per
lattice path with the discrete default law of :mod:`multidefault.grid`, so the
operator is exact for the discretized model and values at arbitrary ``u`` are
available without interpolation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .defaults import (FactorPath, PathEngine, PayoffDecomposition, as_payoff, check_regime,
                       support_points)
from .errors import DomainError
from .grid import TimeGrid
from .intensity import IntensityModel
from .priors import PATH_ENUM_CAP, ConditionalValue, RobustFactorLattice, node_policy, rollback

TOL_DPP = 1e-7
FULL_ENUM_STEPS = 64
SAMPLE_POINTS = 256


class RegimeValue:
    """Lazily evaluated regime values of the operator at time ``t``.

    ``compute(k, U)`` returns an array ``(Q, M)``: one row per factor prefix class
    at ``t`` and one column per row of ``U`` (observed default times).
    Results are cached per ``(k, u)``.
    """

    def __init__(self, engine: PathEngine, phi: PayoffDecomposition, t: float, policy=None):
        engine.grid.node_index(t)
        self.engine, self.phi, self.t = engine, phi, float(t)
        self.n_levels = engine.n_levels
        self.depth = engine.depth(t)
        self.prefixes = engine.tree.prefixes(self.depth)
        self._policy = None if policy is None else node_policy(engine.lat, engine.tree, policy)
        self._cache: dict = {}

    @property
    def n_classes(self) -> int:
        return self.prefixes.shape[0]

    def compute(self, k: int, U) -> np.ndarray:
        U = np.asarray(U, dtype=float).reshape(-1, k) if k else np.zeros((1, 0))
        for row in U:
            check_regime(k, row, self.t, self.n_levels)
        keys = [(k, row.tobytes()) for row in U]
        todo = [i for i, key in enumerate(keys) if key not in self._cache]
        if todo:
            sub = U[todo]
            uniq, inv = np.unique(sub, axis=0, return_inverse=True)
            vals = self._evaluate(k, uniq)
            for j, i in enumerate(todo):
                self._cache[keys[i]] = vals[:, inv.reshape(-1)[j]]
        return np.stack([self._cache[key] for key in keys], axis=1)

    def _evaluate(self, k: int, U: np.ndarray) -> np.ndarray:
        X = self.engine.inner(self.phi, self.t, k, U)
        return rollback(self.engine.lat, self.engine.tree, X, self.depth, self._policy)

    def node(self, prefix=None) -> int:
        if prefix is None:
            if self.n_classes != 1:
                raise DomainError("several prefix classes at t; pass `prefix`")
            return 0
        return self.engine.tree.node_of(prefix)

    def value(self, k: int, u=(), prefix=None) -> float:
        return float(self.compute(k, np.asarray(u, dtype=float)[None, :] if k else None)[self.node(prefix), 0])

    def regime(self, k: int, u=()) -> ConditionalValue:
        vals = self.compute(k, np.asarray(u, dtype=float)[None, :] if k else None)[:, 0]
        return ConditionalValue(self.t, self.depth, vals, prefixes=self.prefixes, lattice=self.engine.lat)

    def table(self, k: int, U=None) -> tuple[np.ndarray, np.ndarray]:
        """``(U, values)`` over all support points of regime ``k`` unless ``U`` is given."""
        U = support_points(self.engine.grid, self.t, k) if U is None else np.asarray(U, dtype=float)
        return U, self.compute(k, U)

    def bound(self, M: float) -> float:
        """``M exp(Lambda_max)``: a priori bound on regime values of payoffs bounded by ``M``."""
        lam = max(float(np.max(c[:, -1])) for c in self.engine.cum)
        return M * np.exp(lam)


def _engine(model, lat, grid, n_levels, cap, engine):
    if engine is not None:
        return engine
    if grid is None:
        raise DomainError("a TimeGrid is required")
    return PathEngine(model, lat, grid, n_levels, cap)


def sublinear_operator(model: IntensityModel, lat: RobustFactorLattice, phi, t: float,
                       grid: TimeGrid | None = None, n_levels: int | None = None,
                       cap: int = PATH_ENUM_CAP, engine: PathEngine | None = None) -> RegimeValue:
    """The operator over ``n_levels`` ordered defaults (default: all levels of ``model``)."""
    eng = _engine(model, lat, grid, n_levels, cap, engine)
    return RegimeValue(eng, as_payoff(phi, eng.n_levels), t)


def restricted_operator(model: IntensityModel, lat: RobustFactorLattice, phi_m, t: float, m: int,
                        grid: TimeGrid | None = None, cap: int = PATH_ENUM_CAP) -> RegimeValue:
    """The operator over the first ``m`` defaults; ``phi_m`` takes ``m`` coordinates."""
    if not (1 <= m <= model.n_levels):
        raise DomainError(f"m must lie in 1..{model.n_levels}")
    return sublinear_operator(model, lat, phi_m, t, grid, n_levels=m, cap=cap)


# -- weak dynamic programming -----------------------------------------

class SampleSpec(NamedTuple):
    max_points: int = SAMPLE_POINTS
    seed: int = 0


@dataclass
class DPPReport:
    min_gap: float
    max_abs_gap: float
    argmin: dict
    n_points: int
    sampled: bool
    seed: int | None
    hypotheses_met: bool
    tol: float = TOL_DPP
    records: list = field(default_factory=list, repr=False)

    @property
    def passed(self) -> bool:
        return self.min_gap >= -self.tol


def value_as_payoff(rv: RegimeValue) -> PayoffDecomposition:
    """Re-expand the regime values at ``t`` as a payoff of ``(u_1..u_N, path)``.

    The regime is read off the coordinates (``k = #{u_i <= t}``) and the factor
    prefix at ``t`` off the path's leaf index in the engine's tree.
    """
    eng, t = rv.engine, rv.t
    anc = eng.tree.anc[rv.depth]

    def fn(u: np.ndarray, path: FactorPath) -> np.ndarray:
        out = np.empty(u.shape[0])
        node = anc[path.index]
        ks = (u <= t).sum(axis=1)
        for k in np.unique(ks):
            rows = np.flatnonzero(ks == k)
            out[rows] = rv.compute(int(k), u[rows, :k])[node]
        return out

    return PayoffDecomposition(fn, rv.n_levels, f"bar_{getattr(rv.phi, 'name', 'value')}")


def _support(grid: TimeGrid, s: float, k: int, n_levels: int, spec: SampleSpec | None):
    U = support_points(grid, s, k)
    full = n_levels <= 2 and grid.n_steps <= FULL_ENUM_STEPS
    if spec is None and full:
        return U, False
    spec = spec or SampleSpec()
    if U.shape[0] <= spec.max_points:
        return U, False
    rng = np.random.default_rng(spec.seed)
    pick = np.sort(rng.choice(U.shape[0], spec.max_points, replace=False))
    return U[pick], True


def dpp_gaps(engine: PathEngine, phi: PayoffDecomposition, s: float, t: float,
             spec: SampleSpec | None = None):
    """Per regime at ``s``: ``(U, lhs, rhs)`` with ``lhs = E_s(E_t(phi))`` and ``rhs = E_s(phi)``."""
    if s > t:
        raise DomainError(f"need s <= t, got s={s}, t={t}")
    inner = RegimeValue(engine, phi, t)
    lhs_op = RegimeValue(engine, value_as_payoff(inner), s)
    rhs_op = RegimeValue(engine, phi, s)
    out, sampled = [], False
    for k in range(engine.n_levels + 1):
        U, smp = _support(engine.grid, s, k, engine.n_levels, spec)
        sampled |= smp
        if U.shape[0] == 0:
            continue
        out.append((k, U, lhs_op.compute(k, U), rhs_op.compute(k, U)))
    return out, sampled, lhs_op.prefixes


def verify_weak_dpp(model: IntensityModel, lat: RobustFactorLattice, phi, s: float, t: float,
                    grid: TimeGrid | None = None, n_levels: int | None = None,
                    sample: SampleSpec | None = None, allow_signed: bool = False,
                    tol: float = TOL_DPP, cap: int = PATH_ENUM_CAP,
                    engine: PathEngine | None = None) -> DPPReport:
    """Compare ``E_s(E_t(Y))`` with ``E_s(Y)`` over regimes, observed times and prefixes at ``s``.

    Negative payoff values raise :class:`DomainError` unless ``allow_signed``; in that
    case the report is returned with ``hypotheses_met = False``.
    """
    eng = _engine(model, lat, grid, n_levels, cap, engine)
    phi = as_payoff(phi, eng.n_levels)
    eng.require_nonnegative = not allow_signed
    signed = False
    try:
        rows, sampled, prefixes = dpp_gaps(eng, phi, s, t, sample)
    finally:
        eng.require_nonnegative = False
    if allow_signed:
        signed = _takes_negative(eng, phi, t)
    best, worst, arg, n, records = np.inf, 0.0, {}, 0, []
    for k, U, lhs, rhs in rows:
        gap = lhs - rhs
        n += gap.size
        q, m = np.unravel_index(int(np.argmin(gap)), gap.shape)
        if gap[q, m] < best:
            best = float(gap[q, m])
            arg = {"regime": k, "u": tuple(map(float, U[m])), "prefix": tuple(map(int, prefixes[q]))}
        worst = max(worst, float(np.max(np.abs(gap))))
        for q in range(gap.shape[0]):
            for m in range(gap.shape[1]):
                records.append((k, tuple(U[m]), tuple(prefixes[q]), lhs[q, m], rhs[q, m], gap[q, m]))
    return DPPReport(best, worst, arg, n, sampled, sample.seed if sample else None,
                     not signed, tol, records)


def _takes_negative(eng: PathEngine, phi: PayoffDecomposition, t: float) -> bool:
    eng.require_nonnegative = True
    try:
        for k in range(eng.n_levels + 1):
            U = support_points(eng.grid, t, k)
            if U.shape[0]:
                eng.inner(phi, t, k, U[: SAMPLE_POINTS])
    except DomainError:
        return True
    finally:
        eng.require_nonnegative = False
    return False


# -- commutation conditions (two defaults) ----------------------------------

class Residual(NamedTuple):
    condition: int
    residual: float
    lhs: float
    rhs: float
    u: tuple
    prefix: tuple


class _TwoLevel:
    """Per-path discrete ingredients for two ordered defaults at times ``s <= t``."""

    def __init__(self, eng: PathEngine, phi: PayoffDecomposition, s: float, t: float):
        if eng.n_levels != 2:
            raise DomainError("this check is stated for two defaults")
        self.eng, self.phi, self.s, self.t = eng, phi, s, t
        self.d = eng.depth(t)
        self.P = eng.n_paths
        self.loc1 = eng.atoms(1, np.zeros(1), 0)[0][0]
        self.m1 = np.stack([eng.atoms(1, np.zeros(1), p)[1][0] for p in range(self.P)])

    def E(self, X: np.ndarray) -> np.ndarray:
        return rollback(self.eng.lat, self.eng.tree, X, self.d)

    def at(self, X: np.ndarray) -> np.ndarray:
        return self.eng.tree.at_depth(X, self.d)

    def G1(self, u1: np.ndarray) -> np.ndarray:
        """``E^[1{tau~_2 > t - u_1} phi(u_1, u_1 + tau~_2)]`` per path; shape ``(P, M)``."""
        I1 = self.eng.inner(self.phi, self.t, 1, u1[:, None])
        S2 = np.stack([self.eng.survival(2, self.t - u1, p) for p in range(self.P)])
        return S2 * I1

    def second_terms(self, u1: np.ndarray, lo: float, hi: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Atoms of ``tau_2`` in ``(lo, hi]`` after each ``u_1``: (owner, b, per-path m2 * phi)."""
        loc, _, _ = self.eng.atoms(2, u1, 0)
        sel = (loc > lo) & (loc <= hi) & (np.arange(loc.shape[1])[None, :] >=
                                          self.eng.grid.cell_start(u1)[:, None])
        r, j = np.nonzero(sel)
        W = np.zeros((self.P, r.size))
        for p in range(self.P):
            _, mass, _ = self.eng.atoms(2, u1, p)
            vals = self.phi(np.column_stack([u1[r], loc[r, j]]), self.eng.factor_path(p))
            W[p] = mass[r, j] * vals
        return r, loc[r, j], W


def _residual(cond: int, lhs: np.ndarray, rhs: np.ndarray, U: np.ndarray, prefixes) -> Residual:
    lhs, rhs = np.atleast_2d(lhs), np.atleast_2d(rhs)
    diff = np.abs(lhs - rhs)
    if diff.size == 0:
        return Residual(cond, 0.0, 0.0, 0.0, (), ())
    q, m = np.unravel_index(int(np.argmax(diff)), diff.shape)
    u = tuple(map(float, U[m])) if U is not None and U.size else ()
    return Residual(cond, float(diff[q, m]), float(lhs[q, m]), float(rhs[q, m]), u,
                    tuple(map(int, prefixes[q])))


def check_commutation_conditions(model: IntensityModel, lat: RobustFactorLattice, phi, s: float,
                                 t: float, grid: TimeGrid | None = None, cap: int = PATH_ENUM_CAP,
                                 engine: PathEngine | None = None) -> list[Residual]:
    """Residuals of the six sufficient conditions for the strong principle (two defaults).

    Each condition swaps an outer expectation over default coordinates (a sum
    over atoms with F_t-measurable weights) with ``E_t``, or splits ``E_t`` of a
    sum.  Residuals are maxima over prefix classes at ``t`` and observed ``u_1``.
    """
    eng = _engine(model, lat, grid, 2, cap, engine)
    phi = as_payoff(phi, 2)
    if s > t:
        raise DomainError(f"need s <= t, got s={s}, t={t}")
    two = _TwoLevel(eng, phi, s, t)
    pre = eng.tree.prefixes(two.d)
    loc1 = two.loc1
    mid = (loc1 > s) & (loc1 <= t)
    a = loc1[mid]
    out = []

    # (1) u_1 in (s, t]: the survival weight of tau~_2 is F_t-measurable
    if a.size:
        G = two.G1(a)
        S2 = np.stack([eng.survival(2, t - a, p) for p in range(two.P)])
        out.append(_residual(1, two.at(S2) * two.E(G), two.E(S2 * G), a[:, None], pre))
        # (2) integrate u_1 against the law of tau_1 over (s, t]
        m1 = two.m1[:, mid]
        lhs = (two.at(m1) * two.E(G)).sum(axis=1, keepdims=True)
        rhs = two.E((m1 * G).sum(axis=1, keepdims=True))
        out.append(_residual(2, lhs, rhs, None, pre))
    else:
        out += [Residual(1, 0.0, 0.0, 0.0, (), ()), Residual(2, 0.0, 0.0, 0.0, (), ())]

    # (3) both defaults in (s, t]
    if a.size:
        r, _, W = two.second_terms(a, s, t)
        W = W * two.m1[:, mid][:, r]
        C_parts = W
    else:
        C_parts = np.zeros((two.P, 0))
    lhs = two.E(C_parts).sum(axis=1, keepdims=True) if C_parts.shape[1] else np.zeros((pre.shape[0], 1))
    C = C_parts.sum(axis=1, keepdims=True)
    out.append(_residual(3, lhs, two.E(C), None, pre))

    # (4) additivity over the three regimes seen from s
    S1 = np.stack([eng.survival(1, t, p) for p in range(two.P)])[:, None]
    A = S1 * eng.inner(phi, t, 0, None)
    B = (two.m1[:, mid] * G).sum(axis=1, keepdims=True) if a.size else np.zeros((two.P, 1))
    out.append(_residual(4, two.E(A) + two.E(B) + two.E(C), two.E(A + B + C), None, pre))

    # (5), (6): first default at or before s
    early = loc1[loc1 <= s]
    if early.size:
        r, _, W = two.second_terms(early, s, t)
        lhs5 = np.zeros((pre.shape[0], early.size))
        D = np.zeros((two.P, early.size))
        if W.shape[1]:
            np.add.at(lhs5, (slice(None), r), two.E(W))
            np.add.at(D, (slice(None), r), W)
        out.append(_residual(5, lhs5, two.E(D), early[:, None], pre))
        G0 = two.G1(early)
        out.append(_residual(6, two.E(G0) + two.E(D), two.E(G0 + D), early[:, None], pre))
    else:
        out += [Residual(5, 0.0, 0.0, 0.0, (), ()), Residual(6, 0.0, 0.0, 0.0, (), ())]
    return out
