"""
Sublinear expectations on a factor lattice
==========================================

Model uncertainty about the factor is a set of transition kernels per node.
The sublinear conditional expectation is a backward induction that takes the
best kernel at every node, and it keeps the tower property exactly.
"""

import numpy as np

from multidefault import RobustFactorLattice
from multidefault.priors import (PathFunctional, conditional_linear_expectation,
                                 conditional_sublinear_expectation, verify_tower_property)

lat = RobustFactorLattice.binomial(1.0, 4, x0=2.0, step=0.5, p_up=[0.3, 0.7])
call = PathFunctional.terminal(lat, lambda x: np.maximum(x - 2.0, 0.0))
put = PathFunctional.terminal(lat, lambda x: np.maximum(2.0 - x, 0.0))

for name, f in (("call", call), ("put", put)):
    sup = conditional_sublinear_expectation(lat, f, 0.0).values[0]
    low = conditional_linear_expectation(lat, f, 0.0, policy=0).values[0]
    high = conditional_linear_expectation(lat, f, 0.0, policy=1).values[0]
    print(f"{name}: p_up=0.3 -> {low:.4f}, p_up=0.7 -> {high:.4f}, sup -> {sup:.4f}")

# sublinearity: the straddle costs less than call plus put
straddle = PathFunctional.terminal(lat, lambda x: np.abs(x - 2.0))
s = conditional_sublinear_expectation(lat, straddle, 0.0).values[0]
parts = sum(conditional_sublinear_expectation(lat, f, 0.0).values[0] for f in (call, put))
print(f"straddle {s:.4f} <= call + put {parts:.4f}")

# values at an intermediate date, one per reachable prefix class
mid = conditional_sublinear_expectation(lat, straddle, 0.5)
for pre, v in zip(mid.prefixes, mid.values):
    print("prefix", pre, "value", round(float(v), 4))

print("tower deviation:", verify_tower_property(lat, straddle, 0.25, 0.75))
