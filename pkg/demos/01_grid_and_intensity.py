"""
Hazard quadrature and intensity models
======================================

Cumulative hazards live on a uniform time grid. This demo integrates a few
intensity curves, checks the hypoexponential law of the second default and
shows how the error shrinks as the grid is refined.
"""

import math

import numpy as np

from multidefault import TimeGrid, ConstantPerLevel, SelfExciting, PiecewiseConstant
from multidefault.grid import default_density_integral, integrate_curve
from multidefault.intensity import counting_jump_intensity, survival_probability

grid = TimeGrid(2.0, 1000)

# a constant rate integrates exactly
curve = integrate_curve(lambda t: np.full_like(t, 1.5), grid)
print("Lambda(1) for rate 1.5:", curve(1.0))

# survival under a piecewise-constant intensity; the trapezoid smears the
# jump at a knot over one cell, so the error is first order in dt here
pw = PiecewiseConstant([0.0, 0.5, 1.2], [[0.4, 1.0, 0.6], [1.0, 1.0, 1.0]])
print("P(tau_1 > 1) piecewise:", survival_probability(pw, 1, 1.0, 0.0, grid=grid),
      "exact:", math.exp(-(0.4 * 0.5 + 1.0 * 0.5)))

# P(tau_2 <= 1) for rates 1 then 3: integrate the first default's density
# against the distribution of the second inter-arrival time
exact = 1 - (3 * math.exp(-1) - math.exp(-3)) / 2
for n in (10, 100, 1000, 10_000):
    g = TimeGrid(2.0, n)
    val = default_density_integral(lambda a: 1 - np.exp(-3 * (1 - a)), 1.0, 0.0, 1.0, g)
    print(f"n_steps={n:6d}  P(tau_2 <= 1) = {val:.10f}  error = {abs(val - exact):.2e}")

# the counting process picks up intensity after each default
hawkes = SelfExciting(lambda t: 0.5 * np.exp(-t), gamma=1.0, n_levels=5)
for hist in ([], [0.3], [0.3, 0.35]):
    j = counting_jump_intensity(hawkes, 0.4, hist)
    print(f"history {hist}: jump intensity at 0.4 = {j.rate:.4f}")
