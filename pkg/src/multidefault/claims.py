"""i-th-to-default claims: survival and recovery legs for two ordered defaults.

Prices are regime values of the sublinear operator.  For two defaults the
inner expectations collapse to sums over the discrete law of ``tau_1`` and of
``tau_2`` given ``tau_1``; these closed forms are rolled back with the same
lattice evaluator as the generic operator, so they agree with it to rounding.
Other levels and general payoffs go through :func:`price_claim` with the
generic engine.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .defaults import FactorPath, PathEngine, PayoffDecomposition
from .errors import BoundViolationError, DomainError
from .grid import TimeGrid
from .intensity import IntensityModel
from .priors import PATH_ENUM_CAP, RobustFactorLattice, rollback
from .sublinear import TOL_DPP, RegimeValue, SampleSpec, dpp_gaps


@dataclass(frozen=True)
class SurvivalLeg:
    """Pays ``Y`` at ``T`` if ``tau_i > T``; ``Y`` is a constant or a function of the factor path."""

    i: int
    T: float
    Y: float | Callable[[FactorPath], float] | None = None

    def payoff(self, n_levels: int) -> PayoffDecomposition:
        return PayoffDecomposition.survival(self.i, self.T, n_levels, self.Y)


@dataclass(frozen=True)
class RecoveryLeg:
    """Pays ``Z_{tau_i}`` if ``tau_i`` falls in ``window = (lo, hi]``; ``0 <= Z <= M``."""

    i: int
    window: tuple
    M: float
    Z: float | Callable[[np.ndarray, FactorPath], np.ndarray] = 1.0

    def payoff(self, n_levels: int) -> PayoffDecomposition:
        lo, hi = self.window
        return PayoffDecomposition.recovery(self.i, lo, hi, n_levels, self.Z)


Claim = SurvivalLeg | RecoveryLeg


class ClaimValue(RegimeValue):
    """Regime values given by a per-path formula ``formula(k, U) -> (P, M)`` or None (zero)."""

    def __init__(self, engine: PathEngine, t: float, formula, name: str):
        super().__init__(engine, None, t)
        self.formula, self.name = formula, name

    def _evaluate(self, k: int, U: np.ndarray) -> np.ndarray:
        X = self.formula(k, U)
        if X is None:
            return np.zeros((self.n_classes, U.shape[0]))
        return rollback(self.engine.lat, self.engine.tree, X, self.depth)


# -- per-path ingredients ---------------------------------------------------

def _y_values(eng: PathEngine, Y) -> np.ndarray:
    if Y is None:
        return np.ones(eng.n_paths)
    vals = np.array([float(Y(eng.factor_path(p))) if callable(Y) else float(Y)
                     for p in range(eng.n_paths)])
    if np.any(~np.isfinite(vals)) or np.any(vals < 0):
        raise DomainError("Y must be finite and nonnegative on every lattice path")
    return vals


def _z_eval(Z, times: np.ndarray, path: FactorPath) -> np.ndarray:
    if callable(Z):
        return np.broadcast_to(np.asarray(Z(times, path), dtype=float), times.shape)
    return np.full(times.shape, float(Z))


def check_bound(eng: PathEngine, Z, M: float, horizon: float) -> None:
    """Raise unless ``0 <= Z <= M`` at every grid node up to ``horizon`` on every path."""
    if not M > 0:
        raise DomainError("the bound M must be positive")
    nodes = eng.grid.nodes[eng.grid.nodes <= horizon * (1 + 1e-12)]
    for p in range(eng.n_paths):
        z = _z_eval(Z, nodes, eng.factor_path(p))
        if np.any(z < 0):
            raise DomainError("Z must be nonnegative")
        if np.any(z > M):
            j = int(np.argmax(z > M))
            raise BoundViolationError(f"Z={z[j]} exceeds M={M} at t={nodes[j]} on path {p}")


class _Ingredients:
    def __init__(self, eng: PathEngine):
        self.eng = eng
        self.P = eng.n_paths
        self.loc1 = eng.atoms(1, np.zeros(1), 0)[0][0]
        self.m1 = np.stack([eng.atoms(1, np.zeros(1), p)[1][0] for p in range(self.P)])

    def S(self, level: int, y) -> np.ndarray:
        """Survival of ``tau~_level`` at own-clock ``y`` on every path; shape ``(P,) + shape(y)``."""
        return np.stack([self.eng.survival(level, y, p) for p in range(self.P)])

    def first(self, lo: float, hi: float) -> tuple[np.ndarray, np.ndarray]:
        """Atoms of ``tau_1`` in ``(lo, hi]``: locations and per-path masses ``(P, A)``."""
        sel = (self.loc1 > lo) & (self.loc1 <= hi)
        return self.loc1[sel], self.m1[:, sel]

    def second_sum(self, u1: np.ndarray, lo: float, hi: float, Z) -> np.ndarray:
        """``sum_b m2(b | u_1) Z(b)`` over atoms ``b`` of ``tau_2`` in ``(lo, hi]``; shape ``(P, M)``."""
        out = np.zeros((self.P, u1.size))
        if u1.size == 0:
            return out
        for p in range(self.P):
            loc, mass, _ = self.eng.atoms(2, u1, p)
            mass = np.where((loc > lo) & (loc <= hi), mass, 0.0)
            r, j = np.nonzero(mass > 0)
            if r.size:
                z = _z_eval(Z, loc[r, j], self.eng.factor_path(p))
                out[p] = np.bincount(r, mass[r, j] * z, minlength=u1.size)
        return out


def _engine(model, lat, grid, levels, cap, engine) -> PathEngine:
    if model.n_levels < levels:
        raise DomainError(f"this claim needs a model with at least {levels} levels")
    if engine is not None:
        if engine.n_levels < levels:
            raise DomainError(f"engine covers {engine.n_levels} levels, need {levels}")
        return engine
    if grid is None:
        raise DomainError("a TimeGrid is required")
    return PathEngine(model, lat, grid, min(model.n_levels, 2), cap)


def _times(grid: TimeGrid, *ts: float) -> None:
    for x in ts:
        grid.node_index(x)
    if any(a > b for a, b in zip(ts, ts[1:])):
        raise DomainError(f"times must be ordered, got {ts}")


# -- pricing ---------------------------------------------------------------

def price_survival_first(model: IntensityModel, lat: RobustFactorLattice, Y, T: float, t: float,
                         grid: TimeGrid | None = None, cap: int = PATH_ENUM_CAP,
                         engine: PathEngine | None = None) -> ClaimValue:
    """Regime 0: ``E_t(Y exp(-(Lambda^1(T) - Lambda^1(t))))``; other regimes vanish."""
    eng = _engine(model, lat, grid, 1, cap, engine)
    _times(eng.grid, t, T)
    ing, y = _Ingredients(eng), _y_values(eng, Y)

    def formula(k, U):
        if k:
            return None
        return (y * ing.S(1, T) / ing.S(1, t))[:, None]

    return ClaimValue(eng, t, formula, "survival_first")


def price_survival_second(model: IntensityModel, lat: RobustFactorLattice, Y, T: float, t: float,
                          grid: TimeGrid | None = None, cap: int = PATH_ENUM_CAP,
                          engine: PathEngine | None = None) -> ClaimValue:
    """Price of ``1{tau_2 > T} Y`` in regimes 0 and 1; regime 2 vanishes."""
    eng = _engine(model, lat, grid, 2, cap, engine)
    _times(eng.grid, t, T)
    ing, y = _Ingredients(eng), _y_values(eng, Y)

    def formula(k, U):
        if k == 0:
            a, m1 = ing.first(t, T)
            mid = (m1 * ing.S(2, T - a)).sum(axis=1) if a.size else np.zeros(ing.P)
            return (y * (mid + ing.S(1, T)) / ing.S(1, t))[:, None]
        if k == 1:
            u1 = U[:, 0]
            return y[:, None] * ing.S(2, T - u1) / ing.S(2, t - u1)
        return None

    return ClaimValue(eng, t, formula, "survival_second")


def price_recovery_first(model: IntensityModel, lat: RobustFactorLattice, Z, window: tuple, M: float,
                         grid: TimeGrid | None = None, cap: int = PATH_ENUM_CAP,
                         engine: PathEngine | None = None) -> ClaimValue:
    """Price at ``t`` of ``1{t < tau_1 <= s} Z_{tau_1}`` with ``window = (t, s]``."""
    eng = _engine(model, lat, grid, 1, cap, engine)
    t, s = window
    _times(eng.grid, t, s)
    check_bound(eng, Z, M, s)
    ing = _Ingredients(eng)

    def formula(k, U):
        if k:
            return None
        a, m1 = ing.first(t, s)
        z = np.stack([_z_eval(Z, a, eng.factor_path(p)) for p in range(ing.P)])
        return ((m1 * z).sum(axis=1) / ing.S(1, t))[:, None]

    return ClaimValue(eng, t, formula, "recovery_first")


def price_recovery_second(model: IntensityModel, lat: RobustFactorLattice, Z, window: tuple, M: float,
                          grid: TimeGrid | None = None, cap: int = PATH_ENUM_CAP,
                          engine: PathEngine | None = None) -> ClaimValue:
    """Price at ``t`` of ``1{t < tau_2 <= s} Z_{tau_2}`` with ``window = (t, s]``."""
    eng = _engine(model, lat, grid, 2, cap, engine)
    t, s = window
    _times(eng.grid, t, s)
    check_bound(eng, Z, M, s)
    ing = _Ingredients(eng)

    def formula(k, U):
        if k == 0:
            a, m1 = ing.first(t, s)
            inner = ing.second_sum(a, t, s, Z)
            return ((m1 * inner).sum(axis=1) / ing.S(1, t))[:, None]
        if k == 1:
            u1 = U[:, 0]
            return ing.second_sum(u1, t, s, Z) / ing.S(2, t - u1)
        return None

    return ClaimValue(eng, t, formula, "recovery_second")


def price_claim(claim: Claim, model: IntensityModel, lat: RobustFactorLattice, t: float,
                grid: TimeGrid | None = None, method: str = "auto", cap: int = PATH_ENUM_CAP,
                engine: PathEngine | None = None) -> RegimeValue:
    """Price any leg; ``method`` is ``"formula"``, ``"generic"`` or ``"auto"``."""
    closed = claim.i in (1, 2)
    if method == "formula" and not closed:
        raise DomainError("closed forms exist for the first two defaults only")
    if method not in ("auto", "formula", "generic"):
        raise DomainError(f"unknown method {method!r}")
    if closed and method != "generic":
        if isinstance(claim, SurvivalLeg):
            fn = price_survival_first if claim.i == 1 else price_survival_second
            return fn(model, lat, claim.Y, claim.T, t, grid, cap, engine)
        lo, hi = claim.window
        if not np.isclose(lo, t):
            raise DomainError("closed-form recovery prices need the window to start at t")
        fn = price_recovery_first if claim.i == 1 else price_recovery_second
        return fn(model, lat, claim.Z, (t, hi), claim.M, grid, cap, engine)
    if not (1 <= claim.i <= model.n_levels):
        raise DomainError(f"level {claim.i} outside 1..{model.n_levels}")
    eng = engine or PathEngine(model, lat, grid, None, cap)
    if isinstance(claim, RecoveryLeg):
        check_bound(eng, claim.Z, claim.M, claim.window[1])
    return RegimeValue(eng, claim.payoff(eng.n_levels), t)


# -- tower-property conditions -------------------------------------------------

@dataclass
class TowerReport:
    conditions: dict
    equality: float
    tol: float = TOL_DPP
    lhs: float = float("nan")
    rhs: float = float("nan")
    where: dict = field(default_factory=dict)

    @property
    def conditions_hold(self) -> bool:
        return all(r <= self.tol for r in self.conditions.values())

    @property
    def equality_holds(self) -> bool:
        return self.equality <= self.tol

    @property
    def consistent(self) -> bool:
        """The sufficient conditions imply the tower equality."""
        return self.equality_holds or not self.conditions_hold


def _tower_equality(eng, phi, s, t, sample, tol, conds):
    rows, _, prefixes = dpp_gaps(eng, phi, s, t, sample)
    best, lhs, rhs, where = 0.0, np.nan, np.nan, {}
    for k, U, L, R in rows:
        d = np.abs(L - R)
        q, m = np.unravel_index(int(np.argmax(d)), d.shape)
        if d[q, m] >= best:
            best, lhs, rhs = float(d[q, m]), float(L[q, m]), float(R[q, m])
            where = {"regime": k, "u": tuple(map(float, U[m])), "prefix": tuple(map(int, prefixes[q]))}
    return TowerReport(conds, best, tol, lhs, rhs, where)


def _two_level(model, lat, grid, cap, engine, s, t, T):
    eng = _engine(model, lat, grid, 2, cap, engine)
    if eng.n_levels != 2:
        eng = PathEngine(model, lat, eng.grid, 2, cap)
    _times(eng.grid, s, t, T)
    ing = _Ingredients(eng)
    d = eng.depth(t)
    E = lambda X: rollback(eng.lat, eng.tree, X, d)
    at = lambda X: eng.tree.at_depth(X, d)
    return eng, ing, E, at


def check_tower_survival(model: IntensityModel, lat: RobustFactorLattice, Y, s: float, t: float,
                         T: float, grid: TimeGrid | None = None, tol: float = TOL_DPP,
                         sample: SampleSpec | None = None, cap: int = PATH_ENUM_CAP,
                         engine: PathEngine | None = None) -> TowerReport:
    """Sufficient conditions (1), (2) and the tower equality for ``1{tau_2 > T} Y``."""
    eng, ing, E, at = _two_level(model, lat, grid, cap, engine, s, t, T)
    y = _y_values(eng, Y)[:, None]
    a_in, m_in = ing.first(s, t)
    a_out, m_out = ing.first(t, T)
    F_in = y * ing.S(2, T - a_in) if a_in.size else np.zeros((ing.P, 0))
    F_out = y * ing.S(2, T - a_out) if a_out.size else np.zeros((ing.P, 0))
    lhs1 = (at(m_in) * E(F_in)).sum(axis=1)
    rhs1 = E((m_in * F_in).sum(axis=1, keepdims=True))[:, 0]
    A = (m_out * F_out).sum(axis=1, keepdims=True) + y * ing.S(1, T)[:, None]
    B = (m_in * F_in).sum(axis=1, keepdims=True)
    lhs2 = E(A) + E(B)
    rhs2 = E(A + B)
    conds = {"cond1": float(np.max(np.abs(lhs1 - rhs1))), "cond2": float(np.max(np.abs(lhs2 - rhs2)))}
    phi = PayoffDecomposition.survival(2, T, 2, Y)
    return _tower_equality(eng, phi, s, t, sample, tol, conds)


def check_tower_recovery(model: IntensityModel, lat: RobustFactorLattice, Z, s: float, t: float,
                         T: float, M: float, grid: TimeGrid | None = None, tol: float = TOL_DPP,
                         sample: SampleSpec | None = None, cap: int = PATH_ENUM_CAP,
                         engine: PathEngine | None = None) -> TowerReport:
    """Sufficient conditions (I), (II) and the tower equality for ``1{0 < tau_2 < T} Z_{tau_2}``.

    The right-hand side of (II) is taken as ``E_t`` of the sum of the two distinct
    terms on its left-hand side.
    """
    eng, ing, E, at = _two_level(model, lat, grid, cap, engine, s, t, T)
    check_bound(eng, Z, M, T)
    a_in, m_in = ing.first(s, t)
    a_out, m_out = ing.first(t, T)
    R = ing.second_sum(a_in, t, T, Z)
    lhsI = (at(m_in) * E(R)).sum(axis=1)
    RI = (m_in * R).sum(axis=1, keepdims=True)
    rhsI = E(RI)[:, 0]
    W = (m_out * ing.second_sum(a_out, 0.0, T, Z)).sum(axis=1, keepdims=True)
    lhsII = E(W) + E(RI)
    rhsII = E(W + RI)
    conds = {"condI": float(np.max(np.abs(lhsI - rhsI))), "condII": float(np.max(np.abs(lhsII - rhsII)))}
    phi = PayoffDecomposition.recovery(2, 0.0, T, 2, Z)
    return _tower_equality(eng, phi, s, t, sample, tol, conds)
