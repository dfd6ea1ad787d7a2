import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from multidefault.errors import CapacityError, DomainError
from multidefault.grid import TimeGrid
from multidefault.priors import (MarkovReduction, PathFunctional, RobustFactorLattice,
                                 conditional_linear_expectation, conditional_sublinear_expectation,
                                 sample_path, sample_paths, verify_tower_property)

from . import oracles as O
from .helpers import all_node_policies, random_lattice


@pytest.fixture
def binary():
    return RobustFactorLattice.binomial(2.0, 2, 0.0, 1.0, [0.4, 0.6])


def terminal_sum(lat):
    return PathFunctional.terminal(lat, lambda x: x)


def test_binary_example(binary):
    v = conditional_sublinear_expectation(binary, terminal_sum(binary), 0.0)
    assert v.at() == pytest.approx(O.BINARY_LATTICE_SUP, abs=1e-15)


def test_binary_tower(binary):
    f = terminal_sum(binary)
    assert verify_tower_property(binary, f, 0.0, 1.0) <= 1e-12
    assert verify_tower_property(binary, f, 1.0, 1.0) == 0.0


def test_constant_is_fixed_point(binary):
    for t in (0.0, 1.0, 2.0):
        v = conditional_sublinear_expectation(binary, PathFunctional.constant(3.5), t)
        np.testing.assert_allclose(v.values, 3.5, atol=1e-14)


def test_singleton_matches_matrix_products():
    lat = RobustFactorLattice.binomial(3.0, 3, 0.0, 1.0, [0.35])
    g = lambda x: x ** 2
    v = conditional_sublinear_expectation(lat, PathFunctional.terminal(lat, g), 0.0).at()
    dist = np.array([1.0])
    for k in lat.kernels:
        dist = dist @ k[0]
    assert v == pytest.approx(dist @ g(lat.values[-1]), abs=1e-14)


def test_linear_under_kernel(binary):
    f = terminal_sum(binary)
    assert conditional_linear_expectation(binary, f, 0.0, 1).at() == pytest.approx(0.4)
    assert conditional_linear_expectation(binary, f, 0.0, 0).at() == pytest.approx(-0.4)


def test_off_grid_time(binary):
    with pytest.raises(DomainError):
        conditional_sublinear_expectation(binary, terminal_sum(binary), 0.5)


def test_capacity_error():
    lat = RobustFactorLattice.binomial(1.0, 4, 0.0, 1.0, [0.5])
    f = PathFunctional(lambda paths: paths.sum(axis=1))
    with pytest.raises(CapacityError):
        conditional_sublinear_expectation(lat, f, 0.0, cap=8)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_monotone_sublinear_homogeneous(seed):
    rng = np.random.default_rng(seed)
    lat = random_lattice(rng, 3, 3, 2)
    P = lat.tree().n_paths
    a, b = rng.normal(size=P), rng.normal(size=P)
    leaf = lambda v: PathFunctional(lambda paths, v=v: v)
    for t in (0.0, 1 / 3, 2 / 3):
        Ea = conditional_sublinear_expectation(lat, leaf(a), t).values
        Eb = conditional_sublinear_expectation(lat, leaf(b), t).values
        assert np.all(conditional_sublinear_expectation(lat, leaf(a + b), t).values <= Ea + Eb + 1e-12)
        assert np.all(conditional_sublinear_expectation(lat, leaf(np.maximum(a, b)), t).values >= Ea - 1e-12)
        np.testing.assert_allclose(conditional_sublinear_expectation(lat, leaf(2.5 * a), t).values,
                                   2.5 * Ea, atol=1e-12)


def test_measurable_factor_pulls_out():
    rng = np.random.default_rng(5)
    lat = random_lattice(rng, 3, 3, 2)
    tree = lat.tree()
    f = rng.normal(size=tree.n_paths)
    g = np.abs(rng.normal(size=tree.n_nodes(1)))[tree.anc[1]]
    t = 1 / 3
    lhs = conditional_sublinear_expectation(lat, PathFunctional(lambda p: g * f), t).values
    rhs = tree.at_depth(g, 1) * conditional_sublinear_expectation(lat, PathFunctional(lambda p: f), t).values
    np.testing.assert_allclose(lhs, rhs, atol=1e-13)


@pytest.mark.parametrize("L, S, K", [(1, 2, 2), (2, 3, 2), (3, 2, 2), (3, 3, 2)])
def test_consistency_by_policy_enumeration(L, S, K):
    rng = np.random.default_rng(100 * L + 10 * S + K)
    lat = random_lattice(rng, L, S, K)
    tree = lat.tree()
    f = rng.normal(size=tree.n_paths)
    fun = PathFunctional(lambda p: f)
    for d in range(L + 1):
        t = lat.grid.nodes[d]
        sup = conditional_sublinear_expectation(lat, fun, t).values
        best = np.full_like(sup, -np.inf)
        for pol in all_node_policies(lat, tree):
            best = np.maximum(best, conditional_linear_expectation(lat, fun, t, pol).values)
        np.testing.assert_allclose(sup, best, atol=1e-14)


def test_markov_reduction_matches_paths():
    rng = np.random.default_rng(3)
    lat = random_lattice(rng, 3, 3, 2)
    red = MarkovReduction(lambda x, A: np.exp(-A) * (1 + x), increment=None)
    by_path = PathFunctional(lambda p: red.evaluate(lat, p))
    for t in (0.0, 1 / 3):
        mk = conditional_sublinear_expectation(lat, PathFunctional.from_reduction(lat, red), t, prefer_markov=True)
        ex = conditional_sublinear_expectation(lat, by_path, t)
        for pre in ex.prefixes:
            assert mk.at(pre) == pytest.approx(ex.at(pre), abs=1e-13)


def test_binned_reduction_error_is_small():
    lat = RobustFactorLattice.binomial(1.0, 6, 1.0, 0.1, [0.3, 0.7])
    inc = lambda d, x: x / 6
    red = MarkovReduction(lambda x, A: np.exp(-A), increment=inc, n_bins=256)
    mk = conditional_sublinear_expectation(lat, PathFunctional.from_reduction(lat, red), 0.0, prefer_markov=True)
    ex = conditional_sublinear_expectation(lat, PathFunctional(lambda p: red.evaluate(lat, p)), 0.0)
    assert mk.at() == pytest.approx(ex.at(), abs=1e-4)


def test_sample_path_determinism_and_degenerate():
    lat = RobustFactorLattice(TimeGrid(1.0, 3), [[0.0, 1.0]] * 4, [np.eye(2)] * 3)
    np.testing.assert_array_equal(sample_path(lat, 0, 9), [0, 0, 0, 0])
    b = RobustFactorLattice.binomial(1.0, 5, 0.0, 1.0, [0.4, 0.6])
    np.testing.assert_array_equal(sample_path(b, 1, 42, 7), sample_path(b, 1, 42, 7))


def test_sample_frequency():
    lat = RobustFactorLattice.binomial(1.0, 1, 0.0, 1.0, [0.6])
    paths = sample_paths(lat, 0, 2024, np.arange(100_000))
    assert abs(paths[:, 1].mean() - 0.6) <= 0.005


def test_invalid_policy():
    lat = RobustFactorLattice.binomial(1.0, 2, 0.0, 1.0, [0.4, 0.6])
    with pytest.raises(DomainError):
        sample_path(lat, 2, 0)


def test_kernel_rows_validated():
    with pytest.raises(DomainError, match="sums to"):
        RobustFactorLattice(TimeGrid(1.0, 1), [[0.0], [0.0, 1.0]], [[[0.5, 0.4]]])
