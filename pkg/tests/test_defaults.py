import math

import numpy as np
import pytest
from scipy import integrate

from multidefault.defaults import (PathEngine, PayoffDecomposition, ScenarioBatch,
                                   conditional_expectation_fixed_prior, construct_default_times,
                                   oracle_conditional_expectation, simulate_scenarios, support_points)
from multidefault.errors import DomainError, InsufficientConditioningError
from multidefault.grid import TimeGrid
from multidefault.intensity import ConstantPerLevel, SelfExciting
from multidefault.priors import RobustFactorLattice

from . import oracles as O
from .helpers import random_affine

G2 = TimeGrid(2.0, 2000)
FLAT2 = RobustFactorLattice.constant(2.0)


def test_construct_examples():
    sc = construct_default_times(ConstantPerLevel([1, 2]), [1.0, 1.0], grid=G2)
    np.testing.assert_allclose(sc.inter_arrival, [1.0, 0.5], atol=1e-12)
    np.testing.assert_allclose(sc.default_times, [1.0, 1.5], atol=1e-12)
    sc = construct_default_times(ConstantPerLevel([1]), [math.log(2)], grid=G2)
    assert sc.default_times[0] == pytest.approx(math.log(2), abs=1e-12)


def test_construct_self_exciting_large_gamma():
    g = TimeGrid(3.0, 30_000)
    sc = construct_default_times(SelfExciting(1.0, 1e3, 1), [2.0], grid=g)
    # the decaying term adds about 1/gamma of hazard
    assert abs(sc.default_times[0] - 2.0) <= g.dt + 1e-3


def test_construct_censoring_and_errors():
    sc = construct_default_times(ConstantPerLevel([1, 1, 1]), [1.5, 1.0, 0.1], grid=G2)
    assert list(sc.censored) == [False, True, True]
    assert np.isinf(sc.default_times[1:]).all()
    with pytest.raises(DomainError):
        construct_default_times(ConstantPerLevel([1]), [0.0], grid=G2)


def test_hazard_at_crossing_equals_mark():
    m = SelfExciting(lambda t: 0.5 * np.exp(-t), 1.0, 3)
    marks = np.array([0.3, 0.8, 0.2])
    sc = construct_default_times(m, marks, grid=G2)
    for n in range(3):
        cum = m.cumulative(n + 1, G2)
        assert np.interp(sc.inter_arrival[n], G2.nodes, cum) == pytest.approx(marks[n], abs=1e-12)


def test_simulation_examples():
    b = simulate_scenarios(ConstantPerLevel([1, 2]), FLAT2, 0, 100_000, 17, G2)
    assert b.ordered().all()
    assert abs((b.default_times[:, 0] > 1).mean() - O.EXP_M1) <= O.CI_EXP_M1
    assert abs((b.default_times[:, 1] > 1).mean() - O.HYPO_SURVIVAL) <= O.CI_HYPO


def test_simulation_chunks_merge():
    m, lat = random_affine(np.random.default_rng(0)), RobustFactorLattice.binomial(2.0, 4, 1.0, 0.3, [0.3, 0.7])
    full = simulate_scenarios(m, lat, 1, 3000, 5, G2)
    parts = [simulate_scenarios(m, lat, 1, 1000, 5, G2, path_offset=a) for a in (2000, 0, 1000)]
    parts.sort(key=lambda p: p.path_index[0])
    np.testing.assert_array_equal(full.default_times, np.concatenate([p.default_times for p in parts]))
    np.testing.assert_array_equal(full.states, np.concatenate([p.states for p in parts]))


def test_zero_paths():
    b = simulate_scenarios(ConstantPerLevel([1]), FLAT2, 0, 0, 1, G2)
    assert len(b) == 0 and list(b) == []


def test_avoidance_proxy():
    # two defaults in the same cell no more often than the continuous law predicts
    g = TimeGrid(2.0, 200)
    b = simulate_scenarios(ConstantPerLevel([1, 2]), FLAT2, 0, 100_000, 3, g)
    both = np.isfinite(b.default_times).all(axis=1)
    cell = np.floor(b.default_times[both] / g.dt)
    same = float(np.mean(np.concatenate([cell[:, 0] == cell[:, 1], np.zeros((~both).sum(), bool)])))
    p = sum(integrate.quad(lambda a, hi=hi: math.exp(-a) * (1 - math.exp(-2 * (hi - a))), hi - g.dt, hi)[0]
            for hi in g.nodes[1:])
    assert same <= p + 3 * math.sqrt(p * (1 - p) / 100_000)
    assert same > 0  # exact avoidance cannot hold after discretization


def test_fixed_prior_examples():
    m = ConstantPerLevel([1, 2])
    phi = PayoffDecomposition.survival(2, 1.0, 2)
    cv = conditional_expectation_fixed_prior(m, FLAT2, 0, phi, 0.5, (1, [0.4]), G2)
    assert cv.values[0] == pytest.approx(O.EXP_M1, abs=1e-9)
    one = PayoffDecomposition.survival(1, 1.0, 1)
    cv = conditional_expectation_fixed_prior(ConstantPerLevel([1]), FLAT2, 0, one, 0.0, (0, []), G2)
    assert cv.values[0] == pytest.approx(O.EXP_M1, abs=1e-12)
    const = PayoffDecomposition(lambda u, p: 0.7 + u[:, 0] * u[:, 1], 2)
    cv = conditional_expectation_fixed_prior(m, FLAT2, 0, const, 1.0, (2, [0.3, 0.9]), G2)
    assert cv.values[0] == pytest.approx(0.7 + 0.27, abs=1e-15)


def test_fixed_prior_rejects_bad_regime():
    m = ConstantPerLevel([1, 2])
    phi = PayoffDecomposition.survival(2, 1.0, 2)
    for regime in ((1, [0.6]), (2, [0.3, 0.2]), (1, []), (3, [0.1, 0.2, 0.3])):
        with pytest.raises(DomainError):
            conditional_expectation_fixed_prior(m, FLAT2, 0, phi, 0.5, regime, G2)


def test_memoryless_reconstruction():
    m = ConstantPerLevel([1.3, 0.7])
    # a long horizon so that censoring does not break the shift
    g, lat = TimeGrid(12.0, 2400), RobustFactorLattice.constant(12.0)
    phi = PayoffDecomposition(lambda u, p: np.where(np.isfinite(u[:, 1]), np.exp(-(u[:, 1] - u[:, 0])), 0.0), 2)
    a = conditional_expectation_fixed_prior(m, lat, 0, phi, 0.6, (1, [0.2]), g).values[0]
    b = conditional_expectation_fixed_prior(m, lat, 0, phi, 1.0, (1, [0.6]), g).values[0]
    assert a == pytest.approx(b, abs=1e-5)


def test_regime_additivity():
    m = ConstantPerLevel([1.0, 1.5])
    g = TimeGrid(2.0, 200)
    eng = PathEngine(m, FLAT2, g)
    phi = PayoffDecomposition(lambda u, p: np.exp(-0.5 * np.minimum(u[:, 1], 2.0)) + (u[:, 0] > 1.2), 2)
    total = eng.regime_values(phi, 0.0, 0, None)[0, 0]
    b = simulate_scenarios(m, FLAT2, 0, 4000, 8, g)
    t = 0.8
    ks = b.counts(t)
    vals = np.empty(len(b))
    for k in range(3):
        rows = np.flatnonzero(ks == k)
        if rows.size:
            vals[rows] = eng.regime_values(phi, t, k, b.default_times[rows, :k])[0]
    se = vals.std(ddof=1) / math.sqrt(vals.size)
    assert abs(vals.mean() - total) <= 3 * se


def test_oracle_examples():
    m = ConstantPerLevel([1.0])
    one = PayoffDecomposition.survival(1, 1.0, 1)
    est = oracle_conditional_expectation(m, FLAT2, 0, one, 0.0, (0, []), 100_000, 4, G2)
    assert abs(est.mean - O.EXP_M1) <= 3 * est.stderr
    # regime N with a payoff that is constant near u
    m2 = ConstantPerLevel([1.0, 2.0])
    phi = PayoffDecomposition(lambda u, p: 0.25 + (u[:, 1] > 0.5), 2)
    est = oracle_conditional_expectation(m2, FLAT2, 0, phi, 1.5, (2, [0.4, 1.0]), 100_000, 4, G2, w_match=0.1)
    assert est.mean == 1.25 and est.stderr == 0.0


def test_oracle_agrees_with_decomposition():
    m = ConstantPerLevel([0.8, 1.6])
    g = TimeGrid(2.0, 1000)
    phi = PayoffDecomposition.survival(2, 1.2, 2)
    exact = conditional_expectation_fixed_prior(m, FLAT2, 0, phi, 0.6, (1, [0.3]), g).values[0]
    est = oracle_conditional_expectation(m, FLAT2, 0, phi, 0.6, (1, [0.3]), 100_000, 12, g, w_match=0.05)
    assert abs(est.mean - exact) <= 3 * est.stderr


def test_oracle_insufficient():
    m = ConstantPerLevel([1.0, 2.0])
    phi = PayoffDecomposition.survival(2, 1.0, 2)
    with pytest.raises(InsufficientConditioningError) as exc:
        oracle_conditional_expectation(m, FLAT2, 0, phi, 1.0, (2, [0.3, 0.5]), 2000, 1, G2)
    assert exc.value.kept < 200


def test_support_points_are_atoms():
    g = TimeGrid(1.0, 8)
    U = support_points(g, 0.5, 2)
    assert np.all(U[:, 0] < U[:, 1]) and np.all(U <= 0.5)
    assert U.shape[0] == 4 + 3 + 2 + 1  # second atoms after each first-cell atom
