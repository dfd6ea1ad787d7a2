"""Finite prior families on a factor lattice and the sublinear expectation.

A :class:`RobustFactorLattice` is a time-inhomogeneous Markov chain whose
transition row at every (step, state) may be chosen from a finite kernel set.
The prior family is every history-dependent selection of rows, which is
stable under pasting by construction.  ``E_t`` is computed by backward
induction over the tree of path prefixes (exact) or, for functionals that
declare a :class:`MarkovReduction`, over an augmented state (binned).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

from .errors import CapacityError, DomainError
from .grid import TimeGrid
from .rng import STREAM_FACTOR, uniforms

PATH_ENUM_CAP = 2**20
N_HAZARD_BINS = 64
_ROW_TOL = 1e-12


class RobustFactorLattice:
    """Factor lattice with a finite kernel set per step.

    Parameters
    ----------
    grid : lattice time grid with ``L`` steps; slice ``d`` sits at ``grid.nodes[d]``.
    values : ``L + 1`` arrays of factor values, one per slice.
    kernels : ``L`` arrays of shape ``(K_d, S_d, S_{d+1})``; row ``[k, i]`` is the
        law of the next state from state ``i`` under kernel ``k``.
    initial_state : index into ``values[0]``.
    """

    def __init__(self, grid: TimeGrid, values: Sequence, kernels: Sequence, initial_state: int = 0):
        self.grid = grid
        L = grid.n_steps
        self.values = [np.asarray(v, dtype=float).reshape(-1) for v in values]
        self.kernels = [np.asarray(k, dtype=float) for k in kernels]
        if len(self.values) != L + 1:
            raise DomainError(f"need {L + 1} state slices, got {len(self.values)}")
        if len(self.kernels) != L:
            raise DomainError(f"need {L} kernel sets, got {len(self.kernels)}")
        for d, v in enumerate(self.values):
            if v.size == 0:
                raise DomainError(f"empty state space at slice {d}")
        for d, k in enumerate(self.kernels):
            if k.ndim == 2:
                k = self.kernels[d] = k[None]
            shape = (len(self.values[d]), len(self.values[d + 1]))
            if k.ndim != 3 or k.shape[0] == 0 or k.shape[1:] != shape:
                raise DomainError(f"kernel set at step {d} must have shape (K, {shape[0]}, {shape[1]})")
            if np.any(k < 0) or not np.all(np.isfinite(k)):
                raise DomainError(f"negative kernel entry at step {d}")
            dev = np.abs(k.sum(axis=2) - 1.0)
            if np.any(dev > _ROW_TOL):
                kk, row = np.unravel_index(np.argmax(dev), dev.shape)
                raise DomainError(f"kernel {kk} row {row} at step {d} sums to {k[kk, row].sum():.15g}")
        if not (0 <= initial_state < self.values[0].size):
            raise DomainError("initial_state out of range")
        self.initial_state = int(initial_state)

    # -- constructors -------------------------------------------------
    @classmethod
    def constant(cls, t_max: float, value: float = 0.0) -> "RobustFactorLattice":
        """One-state, one-kernel lattice (deterministic factor)."""
        return cls(TimeGrid(t_max, 1), [[value], [value]], [np.ones((1, 1, 1))])

    @classmethod
    def binomial(cls, t_max: float, n_steps: int, x0: float, step: float,
                 p_up: Sequence[float]) -> "RobustFactorLattice":
        """Recombining additive binomial lattice, one kernel per up-probability."""
        p_up = np.atleast_1d(np.asarray(p_up, dtype=float))
        if np.any((p_up < 0) | (p_up > 1)):
            raise DomainError("p_up must lie in [0, 1]")
        values = [x0 + step * (2 * np.arange(d + 1) - d) for d in range(n_steps + 1)]
        kernels = []
        for d in range(n_steps):
            k = np.zeros((p_up.size, d + 1, d + 2))
            i = np.arange(d + 1)
            k[:, i, i + 1] = p_up[:, None]
            k[:, i, i] = 1 - p_up[:, None]
            kernels.append(k)
        return cls(TimeGrid(t_max, n_steps), values, kernels)

    # -- basic queries ------------------------------------------------
    @property
    def n_steps(self) -> int:
        return self.grid.n_steps

    @property
    def t_max(self) -> float:
        return self.grid.t_max

    def n_kernels(self, d: int) -> int:
        return self.kernels[d].shape[0]

    @property
    def is_singleton(self) -> bool:
        return all(k.shape[0] == 1 for k in self.kernels)

    @property
    def is_degenerate(self) -> bool:
        """True when the factor never moves (a single reachable path)."""
        return self.path_count() == 1 and np.ptp(np.concatenate(self.values)) == 0

    def depth(self, t: float) -> int:
        """Slice index of a lattice node ``t``."""
        return self.grid.node_index(t)

    def depth_at(self, t: float) -> int:
        """Number of revealed transitions at an arbitrary time ``t`` (last slice at or before ``t``)."""
        self.grid.check_time(t)
        r = t / self.grid.dt
        j = int(round(r))
        return j if abs(r - j) < 1e-9 else int(np.floor(r))

    def _reach(self, d: int) -> np.ndarray:
        return self.kernels[d].max(axis=0) > 0

    def path_count(self) -> int:
        count = np.zeros(self.values[0].size, dtype=object)
        count[self.initial_state] = 1
        for d in range(self.n_steps):
            count = (self._reach(d).astype(object) * count[:, None]).sum(axis=0)
        return int(count.sum())

    def fine_values(self, states: np.ndarray, fine: TimeGrid) -> np.ndarray:
        """Factor values at the nodes of a finer grid; piecewise constant, right-continuous."""
        states = np.atleast_2d(states)
        ratio = self.check_fine_grid(fine)
        slice_of = np.minimum(np.arange(fine.n_steps + 1) // ratio, self.n_steps)
        out = np.empty((states.shape[0], fine.n_steps + 1))
        for d in range(self.n_steps + 1):
            cols = slice_of == d
            out[:, cols] = self.values[d][states[:, d]][:, None]
        return out

    def check_fine_grid(self, fine: TimeGrid) -> int:
        if abs(fine.t_max - self.t_max) > 1e-12 * self.t_max or fine.n_steps % self.n_steps:
            raise DomainError(
                f"quadrature grid ({fine.t_max}, {fine.n_steps}) must refine the lattice grid "
                f"({self.t_max}, {self.n_steps})")
        return fine.n_steps // self.n_steps

    def tree(self, cap: int = PATH_ENUM_CAP) -> "PathTree":
        count = self.path_count()
        if count > cap:
            raise CapacityError(
                f"lattice has {count} paths > path_enum_cap={cap}; supply a Markov reduction")
        cache = self.__dict__.setdefault("_tree_cache", {})
        if "tree" not in cache:
            cache["tree"] = PathTree.build(self)
        return cache["tree"]


@dataclass
class PathTree:
    """Tree of reachable path prefixes; children of a node are contiguous."""

    state: list
    parent: list
    offsets: list
    anc: list = field(default_factory=list)

    @classmethod
    def build(cls, lat: RobustFactorLattice) -> "PathTree":
        state = [np.array([lat.initial_state])]
        parent = [np.array([-1])]
        offsets = [np.array([0])]
        for d in range(lat.n_steps):
            reach = lat._reach(d)
            counts_by_state = reach.sum(axis=1)
            ptr = np.concatenate(([0], np.cumsum(counts_by_state)))
            idx = np.nonzero(reach)[1]
            prev = state[-1]
            counts = counts_by_state[prev]
            off = np.concatenate(([0], np.cumsum(counts)[:-1]))
            total = int(counts.sum())
            within = np.arange(total) - np.repeat(off, counts)
            state.append(idx[np.repeat(ptr[prev], counts) + within])
            parent.append(np.repeat(np.arange(prev.size), counts))
            offsets.append(off)
        tree = cls(state, parent, offsets)
        L = lat.n_steps
        anc = [None] * (L + 1)
        anc[L] = np.arange(state[L].size)
        for d in range(L, 0, -1):
            anc[d - 1] = parent[d][anc[d]]
        tree.anc = anc
        return tree

    @property
    def depth_max(self) -> int:
        return len(self.state) - 1

    @cached_property
    def paths(self) -> np.ndarray:
        """Leaf paths as state indices, shape ``(P, L + 1)``."""
        L = self.depth_max
        return np.stack([self.state[d][self.anc[d]] for d in range(L + 1)], axis=1)

    @property
    def n_paths(self) -> int:
        return self.state[-1].size

    def n_nodes(self, d: int) -> int:
        return self.state[d].size

    def prefixes(self, d: int) -> np.ndarray:
        first = self.first_leaf(d)
        return self.paths[first, : d + 1]

    def first_leaf(self, d: int) -> np.ndarray:
        return np.searchsorted(self.anc[d], np.arange(self.n_nodes(d)))

    def at_depth(self, leaf_values: np.ndarray, d: int) -> np.ndarray:
        """Node values of a quantity that is measurable at depth ``d`` (read from the first leaf)."""
        return np.asarray(leaf_values)[self.first_leaf(d)]

    def node_of(self, prefix: Sequence[int]) -> int:
        d = len(prefix) - 1
        hit = np.flatnonzero(np.all(self.prefixes(d) == np.asarray(prefix), axis=1))
        if hit.size == 0:
            raise DomainError(f"prefix {tuple(prefix)} is not reachable")
        return int(hit[0])


# -- policies ---------------------------------------------------------

def node_policy(lat: RobustFactorLattice, tree: PathTree, policy) -> list:
    """Normalize a policy to per-node kernel indices for depths ``0..L-1``.

    Accepts an int (same kernel everywhere), a Markov table indexed
    ``[step][state]``, or a list of per-node arrays.
    """
    L = lat.n_steps
    if policy is None:
        policy = 0
    if np.isscalar(policy):
        out = [np.full(tree.n_nodes(d), int(policy)) for d in range(L)]
    elif isinstance(policy, NodePolicy):
        out = [np.asarray(p, dtype=int) for p in policy.choices]
        if len(out) != L or any(out[d].size != tree.n_nodes(d) for d in range(L)):
            raise DomainError("node policy does not match the path tree")
    else:
        out = []
        for d in range(L):
            row = np.atleast_1d(np.asarray(policy[d], dtype=int))
            if row.size == 1:
                row = np.full(lat.values[d].size, int(row[0]))
            if row.size < lat.values[d].size:
                raise DomainError(f"policy row {d} has {row.size} entries for {lat.values[d].size} states")
            out.append(row[tree.state[d]])
    for d, p in enumerate(out):
        if np.any((p < 0) | (p >= lat.n_kernels(d))):
            raise DomainError(f"invalid kernel index in policy at step {d}")
    return out


@dataclass(frozen=True)
class NodePolicy:
    """History-dependent policy: one kernel index per tree node at each depth."""

    choices: tuple


def markov_table(lat: RobustFactorLattice, policy) -> list:
    """Normalize a Markov policy to a list of per-state kernel index arrays."""
    L = lat.n_steps
    if policy is None:
        policy = 0
    if np.isscalar(policy):
        table = [np.full(lat.values[d].size, int(policy)) for d in range(L)]
    else:
        if len(policy) != L:
            raise DomainError(f"policy needs {L} rows")
        table = []
        for d in range(L):
            row = np.atleast_1d(np.asarray(policy[d], dtype=int))
            if row.size == 1:
                row = np.full(lat.values[d].size, int(row[0]))
            table.append(row)
    for d, row in enumerate(table):
        if row.size != lat.values[d].size or np.any((row < 0) | (row >= lat.n_kernels(d))):
            raise DomainError(f"invalid kernel index in policy at step {d}")
    return table


# -- backward induction -------------------------------------------------

def rollback(lat: RobustFactorLattice, tree: PathTree, leaf_values: np.ndarray, depth: int,
             policy: list | None = None, return_choice: bool = False):
    """Roll leaf values back to ``depth``; sup over kernels unless a node policy is given.

    ``leaf_values`` has shape ``(P, ...)``; the result has shape ``(n_nodes(depth), ...)``.
    Ties go to the lowest kernel index.
    """
    v = np.asarray(leaf_values, dtype=float)
    choices = {}
    for d in range(tree.depth_max, depth, -1):
        pst = tree.state[d - 1][tree.parent[d]]
        w = lat.kernels[d - 1][:, pst, tree.state[d]]  # (K, n_d)
        extra = (1,) * (v.ndim - 1)
        if policy is not None:
            ch = policy[d - 1][tree.parent[d]]
            wk = w[ch, np.arange(w.shape[1])].reshape((-1,) + extra)
            v = np.add.reduceat(wk * v, tree.offsets[d], axis=0)
        else:
            sums = np.add.reduceat(w.reshape(w.shape + extra) * v[None], tree.offsets[d], axis=1)
            if return_choice:
                choices[d - 1] = np.argmax(sums.reshape(sums.shape[0], sums.shape[1], -1)[..., 0], axis=0)
            v = sums.max(axis=0)
    return (v, choices) if return_choice else v


# -- path functionals -------------------------------------------------

@dataclass(frozen=True)
class MarkovReduction:
    """Functional ``payoff(x_L, A)`` of the terminal factor and ``A = sum_d increment(d, x_d)``.

    ``increment`` is None for terminal-only functionals (exact reduction);
    otherwise ``A`` is binned on ``n_bins`` uniform points of its reachable range.
    """

    payoff: Callable[[np.ndarray, np.ndarray], np.ndarray]
    increment: Callable[[int, np.ndarray], np.ndarray] | None = None
    n_bins: int = N_HAZARD_BINS

    def accumulated(self, lat: RobustFactorLattice, states: np.ndarray, upto: int) -> np.ndarray:
        states = np.atleast_2d(states)
        acc = np.zeros(states.shape[0])
        if self.increment is not None:
            for d in range(upto):
                acc += self.increment(d, lat.values[d][states[:, d]])
        return acc

    def evaluate(self, lat: RobustFactorLattice, states: np.ndarray) -> np.ndarray:
        states = np.atleast_2d(states)
        acc = self.accumulated(lat, states, lat.n_steps)
        xl = lat.values[-1][states[:, -1]]
        return np.asarray(self.payoff(xl[:, None], acc[:, None]), dtype=float)[:, 0]


@dataclass(frozen=True)
class PathFunctional:
    """Map from full lattice paths ``(P, L + 1)`` of state indices to values ``(P,)``."""

    evaluate: Callable[[np.ndarray], np.ndarray]
    reduction: MarkovReduction | None = None

    @classmethod
    def from_reduction(cls, lat: RobustFactorLattice, red: MarkovReduction) -> "PathFunctional":
        return cls(lambda states: red.evaluate(lat, states), red)

    @classmethod
    def terminal(cls, lat: RobustFactorLattice, g: Callable[[np.ndarray], np.ndarray]) -> "PathFunctional":
        red = MarkovReduction(lambda x, a: g(x) + 0.0 * a)
        return cls.from_reduction(lat, red)

    @classmethod
    def constant(cls, c: float) -> "PathFunctional":
        return cls(lambda states: np.full(np.atleast_2d(states).shape[0], float(c)))


@dataclass
class ConditionalValue:
    """``E_t`` of a functional as a function of the path prefix at ``t``."""

    t: float
    depth: int
    values: np.ndarray
    prefixes: np.ndarray | None = None
    # Markov-mode fields
    states: np.ndarray | None = None
    bins: np.ndarray | None = None
    reduction: MarkovReduction | None = None
    lattice: RobustFactorLattice | None = None

    @property
    def markov(self) -> bool:
        return self.bins is not None

    @property
    def bin_width(self) -> float:
        return float(self.bins[1] - self.bins[0]) if self.markov and self.bins.size > 1 else 0.0

    def at(self, prefix: Sequence[int] | None = None):
        if prefix is None:
            if self.depth != 0:
                raise DomainError("a prefix is required for t > 0")
            prefix = [self.lattice.initial_state if self.lattice else 0]
        prefix = np.asarray(prefix, dtype=int)
        if prefix.size != self.depth + 1:
            raise DomainError(f"prefix must have {self.depth + 1} entries")
        if self.markov:
            acc = self.reduction.accumulated(self.lattice, prefix[None], self.depth)[0]
            return float(np.interp(acc, self.bins, self.values[prefix[-1]]))
        hit = np.flatnonzero(np.all(self.prefixes == prefix, axis=1))
        if hit.size == 0:
            raise DomainError(f"prefix {tuple(prefix)} is not reachable")
        return self.values[hit[0]]

    def as_dict(self) -> dict:
        if self.markov:
            raise DomainError("as_dict is only available for prefix-indexed values")
        return {tuple(int(s) for s in p): v for p, v in zip(self.prefixes, self.values)}


def _markov_rollback(lat: RobustFactorLattice, red: MarkovReduction, depth: int, policy=None):
    L = lat.n_steps
    if red.increment is None:
        bins = np.zeros(1)
    else:
        lo = [np.zeros(1)]
        hi = [np.zeros(1)]
        reach_lo, reach_hi = np.full(lat.values[0].size, np.inf), np.full(lat.values[0].size, -np.inf)
        reach_lo[lat.initial_state] = reach_hi[lat.initial_state] = 0.0
        for d in range(L):
            inc = np.asarray(red.increment(d, lat.values[d]), dtype=float)
            r = lat._reach(d)
            nlo = np.where(r, (reach_lo + inc)[:, None], np.inf).min(axis=0)
            nhi = np.where(r, (reach_hi + inc)[:, None], -np.inf).max(axis=0)
            reach_lo, reach_hi = nlo, nhi
        a0, a1 = 0.0, float(np.max(reach_hi[np.isfinite(reach_hi)]))
        a0 = min(a0, float(np.min(reach_lo[np.isfinite(reach_lo)])))
        bins = np.linspace(a0, a1 if a1 > a0 else a0 + 1.0, red.n_bins)
    v = np.asarray(red.payoff(lat.values[L][:, None], bins[None, :]), dtype=float)
    v = np.broadcast_to(v, (lat.values[L].size, bins.size)).copy()
    table = None if policy is None else markov_table(lat, policy)
    for d in range(L - 1, depth - 1, -1):
        if red.increment is None:
            shifted = np.broadcast_to(v[None], (lat.values[d].size,) + v.shape)
        else:
            inc = np.asarray(red.increment(d, lat.values[d]), dtype=float)
            pts = bins[None, :] + inc[:, None]
            shifted = np.stack([np.stack([np.interp(pts[i], bins, v[j]) for j in range(v.shape[0])])
                                for i in range(pts.shape[0])])  # (S_d, S_{d+1}, B)
        exp = np.einsum("kij,ijb->kib", lat.kernels[d], shifted)
        if table is None:
            v = exp.max(axis=0)
        else:
            v = exp[table[d], np.arange(exp.shape[1])]
    return v, bins


def _expectation(lat, f: PathFunctional, t: float, policy, cap: int, prefer_markov: bool):
    depth = lat.depth(t)
    use_markov = f.reduction is not None and (prefer_markov or lat.path_count() > cap)
    if use_markov:
        v, bins = _markov_rollback(lat, f.reduction, depth, policy)
        return ConditionalValue(t, depth, v, states=np.arange(lat.values[depth].size), bins=bins,
                                reduction=f.reduction, lattice=lat)
    tree = lat.tree(cap)
    leaf = np.asarray(f.evaluate(tree.paths), dtype=float)
    pol = None if policy is None else node_policy(lat, tree, policy)
    vals = rollback(lat, tree, leaf, depth, pol)
    return ConditionalValue(t, depth, vals, prefixes=tree.prefixes(depth), lattice=lat)


def conditional_sublinear_expectation(lat: RobustFactorLattice, f: PathFunctional, t: float,
                                      cap: int = PATH_ENUM_CAP, prefer_markov: bool = False
                                      ) -> ConditionalValue:
    """``E_t(f)``: supremum over the prior family, per prefix class at lattice node ``t``."""
    return _expectation(lat, f, t, None, cap, prefer_markov)


def conditional_linear_expectation(lat: RobustFactorLattice, f: PathFunctional, t: float, policy,
                                   cap: int = PATH_ENUM_CAP, prefer_markov: bool = False
                                   ) -> ConditionalValue:
    """``E^P[f | F_t]`` under the single prior selected by ``policy``."""
    return _expectation(lat, f, t, 0 if policy is None else policy, cap, prefer_markov)


def verify_tower_property(lat: RobustFactorLattice, f: PathFunctional, s: float, t: float,
                          cap: int = PATH_ENUM_CAP) -> float:
    """``max |E_s(f) - E_s(E_t(f))|`` over prefix classes at ``s``."""
    ds, dt_ = lat.depth(s), lat.depth(t)
    if ds > dt_:
        raise DomainError("need s <= t")
    tree = lat.tree(cap)
    leaf = np.asarray(f.evaluate(tree.paths), dtype=float)
    inner = rollback(lat, tree, leaf, dt_)
    composed = rollback(lat, tree, inner[tree.anc[dt_]], ds)
    direct = rollback(lat, tree, leaf, ds)
    return float(np.max(np.abs(direct - composed)))


# -- sampling -----------------------------------------------------------

def sample_paths(lat: RobustFactorLattice, policy, seed: int, path_index) -> np.ndarray:
    """Sample factor paths (state indices) under a Markov policy; one row per path index."""
    table = markov_table(lat, policy)
    path_index = np.atleast_1d(np.asarray(path_index, dtype=np.int64))
    u = uniforms(seed, path_index, STREAM_FACTOR, max(lat.n_steps, 1))
    out = np.empty((path_index.size, lat.n_steps + 1), dtype=np.int64)
    out[:, 0] = lat.initial_state
    for d in range(lat.n_steps):
        cur = out[:, d]
        rows = lat.kernels[d][table[d][cur], cur]  # (P, S_{d+1})
        cdf = np.cumsum(rows, axis=1)
        nxt = (cdf <= u[:, d:d + 1] * cdf[:, -1:]).sum(axis=1)
        out[:, d + 1] = np.minimum(nxt, rows.shape[1] - 1)
    return out


def sample_path(lat: RobustFactorLattice, policy, seed: int, path_index: int = 0) -> np.ndarray:
    """One factor path; deterministic in ``(seed, path_index)``."""
    return sample_paths(lat, policy, seed, [path_index])[0]
