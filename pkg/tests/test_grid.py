import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from multidefault.errors import DomainError
from multidefault.grid import (TimeGrid, atoms_after, cumulative_trapezoid, default_density_integral,
                               integrate_curve)

from . import oracles as O


def test_grid_nodes():
    g = TimeGrid(3.0, 7)
    assert g.nodes[0] == 0 and g.nodes[-1] == 3.0
    assert np.all(np.diff(g.nodes) > 0)
    assert g.dt == pytest.approx(3 / 7)


@pytest.mark.parametrize("t_max, n", [(0.0, 3), (-1.0, 3), (1.0, 0), (1.0, 2.5)])
def test_grid_rejects_bad_input(t_max, n):
    with pytest.raises(DomainError):
        TimeGrid(t_max, n)


@given(st.floats(0, 1))
def test_bracket_is_unique(t):
    g = TimeGrid(1.0, 10)
    j, w = g.bracket(t)
    assert 0 <= j < 10 and 0 <= w <= 1
    assert (1 - w) * g.nodes[j] + w * g.nodes[j + 1] == pytest.approx(t, abs=1e-12)


def test_node_index():
    g = TimeGrid(1.0, 4)
    assert g.node_index(0.75) == 3
    with pytest.raises(DomainError):
        g.node_index(0.3)


def test_integrate_constant_and_zero():
    for n in (1, 10, 333):
        g = TimeGrid(3.0, n)
        assert integrate_curve(2.0, g)(3.0) == pytest.approx(6.0, abs=1e-12)
        assert np.all(integrate_curve(0.0, g).values == 0)


def test_integrate_linear_exact():
    g = TimeGrid(1.0, 1000)
    assert integrate_curve(lambda t: t, g)(1.0) == pytest.approx(0.5, abs=1e-15)


def test_integrate_negative_names_node():
    g = TimeGrid(1.0, 4)
    with pytest.raises(DomainError, match="node 3"):
        integrate_curve(lambda t: 0.6 - t, g)


def test_density_examples():
    g = TimeGrid(1.0, 10_000)
    assert default_density_integral(1.0, 1.0, 0, 1, g) == pytest.approx(O.EXP_CDF_1, abs=1e-6)
    val = default_density_integral(lambda x: np.exp(-2 * (1 - x)), 1.0, 0, 1, g)
    assert val == pytest.approx(O.DENSITY_TILTED, abs=1e-6)
    assert default_density_integral(1.0, 1.0, 0, 0, g) == 0.0


def test_density_errors():
    g = TimeGrid(1.0, 10)
    with pytest.raises(DomainError):
        default_density_integral(1.0, 1.0, 0.6, 0.5, g)
    with pytest.raises(DomainError):
        default_density_integral(1.0, 1.0, 0.0, 1.5, g)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.05, 3.0), st.floats(0.0, 2.0), st.floats(0, 1), st.floats(0, 1))
def test_density_normalization_and_monotone(c0, c1, a, b):
    g = TimeGrid(1.0, 50)
    lam = lambda t: c0 + c1 * np.sin(3 * t) ** 2
    a, b = min(a, b), max(a, b)
    cum = integrate_curve(lam, g)
    assert default_density_integral(1.0, lam, 0, b, g) == pytest.approx(1 - math.exp(-cum(b)), abs=1e-13)
    assert default_density_integral(1.0, lam, 0, b, g) >= default_density_integral(1.0, lam, a, b, g) - 1e-15


def test_density_second_order():
    h = lambda x: np.cos(2 * x)
    lam = lambda t: 1 + t
    ref = default_density_integral(h, lam, 0, 1, TimeGrid(1.0, 640))
    errs = [abs(default_density_integral(h, lam, 0, 1, TimeGrid(1.0, n)) - ref) for n in (16, 32)]
    assert errs[0] / errs[1] >= 3


def test_atoms_conserve_mass():
    g = TimeGrid(1.0, 20)
    cum = cumulative_trapezoid(np.full(21, 1.5), g.dt)
    prev = np.array([0.0, 0.13, 0.5, 0.97])
    loc, mass, cens = atoms_after(cum, g, prev)
    np.testing.assert_allclose(mass.sum(axis=1) + cens, 1.0, atol=1e-14)
    assert np.all(np.where(mass > 0, loc > prev[:, None], True))
    # atoms never sit on grid nodes
    assert not np.any(np.isclose(loc[mass > 0] / g.dt, np.round(loc[mass > 0] / g.dt), atol=1e-9))
