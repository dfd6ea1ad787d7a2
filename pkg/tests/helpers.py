"""Random instances shared by the tests."""

import itertools

import numpy as np

from multidefault.grid import TimeGrid
from multidefault.intensity import FactorDriven, PiecewiseConstant
from multidefault.priors import NodePolicy, RobustFactorLattice


def random_lattice(rng, L, S, K, t_max=1.0, sparse=0.3):
    values = [np.array([1.0])] + [rng.uniform(0.2, 2.0, S) for _ in range(L)]
    kernels = []
    for d in range(L):
        rows = rng.dirichlet(np.ones(S), size=(K, values[d].size))
        rows[rng.random(rows.shape) < sparse] = 0.0
        dead = rows.sum(axis=2) == 0
        rows[dead, 0] = 1.0
        kernels.append(rows / rows.sum(axis=2, keepdims=True))
    return RobustFactorLattice(TimeGrid(t_max, L), values, kernels)


def random_piecewise(rng, n_levels=2, n_knots=3, t_max=2.0):
    knots = np.concatenate(([0.0], np.sort(rng.uniform(0.1, t_max, n_knots - 1))))
    values = rng.uniform(0.3, 2.0, (n_levels, n_knots))
    return PiecewiseConstant(knots, values)


def random_affine(rng, n_levels=2):
    return FactorDriven.affine(rng.uniform(0.2, 1.0, n_levels), rng.uniform(0.2, 1.5, n_levels))


def all_node_policies(lat, tree):
    """Every history-dependent kernel selection (small lattices only)."""
    sizes = [tree.n_nodes(d) for d in range(lat.n_steps)]
    per_depth = [list(itertools.product(range(lat.n_kernels(d)), repeat=sizes[d])) for d in range(lat.n_steps)]
    for combo in itertools.product(*per_depth):
        yield NodePolicy(tuple(np.array(c) for c in combo))
