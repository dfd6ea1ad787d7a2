"""
Pricing default-contingent claims
=================================

Survival and recovery legs on the first two defaults have closed forms built
from the same discrete default law as the generic engine. The tower checks
report when two-step pricing agrees with one-step pricing.
"""

import math

import numpy as np

from multidefault import ConstantPerLevel, FactorDriven, RobustFactorLattice, TimeGrid
from multidefault.claims import (RecoveryLeg, SurvivalLeg, check_tower_recovery, check_tower_survival,
                                 price_claim, price_recovery_second, price_survival_second)

grid = TimeGrid(2.0, 10_000)
flat = RobustFactorLattice.constant(2.0)
m = ConstantPerLevel([1.0, 2.0])
print("second-to-default survival to 1:", price_survival_second(m, flat, None, 1.0, 0.0, grid).value(0),
      "exact:", 2 * math.exp(-1) - math.exp(-2))
print("second-to-default protection on (0, 1]:",
      price_recovery_second(m, flat, 1.0, (0.0, 1.0), 1.0, grid).value(0))

# an ambiguous factor: closed forms and the generic engine agree exactly
g = TimeGrid(1.0, 32)
model = FactorDriven.affine([0.5, 1.0], [0.5, 1.0])
lat = RobustFactorLattice.binomial(1.0, 4, 2.0, 0.5, [0.3, 0.7])
xT = lambda p: float(p.value_at(1.0, g))
for claim in (SurvivalLeg(2, 0.75, xT), RecoveryLeg(2, (0.25, 1.0), 4.0, lambda u, p: p.value_at(u, g))):
    a = price_claim(claim, model, lat, 0.25, g, method="formula").compute(0, None)[:, 0]
    b = price_claim(claim, model, lat, 0.25, g, method="generic").compute(0, None)[:, 0]
    print(type(claim).__name__, "by prefix:", np.round(a, 5), "max diff", np.max(np.abs(a - b)))

for Y, label in ((1.0, "Y = 1"), (xT, "Y = x_T")):
    rep = check_tower_survival(model, lat, Y, 0.25, 0.5, 0.75, g)
    print(f"survival tower, {label}: conditions {rep.conditions}, equality gap {rep.equality:.2e}")
rep = check_tower_recovery(model, lat, 0.5, 0.25, 0.5, 0.75, 1.0, g)
print(f"recovery tower, Z = 0.5: conditions {rep.conditions}, equality gap {rep.equality:.2e}")
