"""
The enlarged operator and weak dynamic programming
==================================================

With two defaults and an ambiguous factor, the operator on the enlarged
information flow is only weakly time consistent: evaluating in two steps can
cost more than evaluating at once. The commutation checker shows which
sufficient condition breaks.
"""

import numpy as np

from multidefault import FactorDriven, RobustFactorLattice, TimeGrid
from multidefault.sublinear import check_commutation_conditions, sublinear_operator, verify_weak_dpp

grid = TimeGrid(1.0, 32)
model = FactorDriven.affine([0.5, 1.0], [0.5, 1.0])
ambiguous = RobustFactorLattice.binomial(1.0, 4, 2.0, 0.5, [0.3, 0.7])
single = RobustFactorLattice.binomial(1.0, 4, 2.0, 0.5, [0.5])


def phi(u, path):
    # an early first default pays the terminal factor, a late one its mirror image
    x = path.value_at(1.0, grid)
    return np.where(u[:, 0] <= 0.6, x, 4.0 - x)


rv = sublinear_operator(model, ambiguous, phi, 0.5, grid)
print("regime 0 values by prefix at t=0.5:", np.round(rv.regime(0).values, 4))
print("regime 1, u_1 = 0.2:", np.round(rv.regime(1, [0.2]).values, 4))

for name, lat in (("single prior", single), ("two kernels", ambiguous)):
    rep = verify_weak_dpp(model, lat, phi, 0.25, 0.5, grid)
    print(f"{name}: min gap {rep.min_gap:.2e}, max gap {rep.max_abs_gap:.4f}, points {rep.n_points}")

for r in check_commutation_conditions(model, ambiguous, phi, 0.25, 0.5, grid):
    print(f"  condition {r.condition}: residual {r.residual:.3e}")
