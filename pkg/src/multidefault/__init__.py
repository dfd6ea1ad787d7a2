"""Ordered default times under model uncertainty.

Cox-type construction of ordered defaults, a sublinear conditional expectation
on a finite family of factor priors, the regime-decomposed operator on the
default-enlarged filtration, i-th-to-default claim pricing and numerical
checks of the dynamic programming and tower properties.
"""

__version__ = "0.1.0"

from .claims import (RecoveryLeg, SurvivalLeg, check_tower_recovery, check_tower_survival, price_claim,
                     price_recovery_first, price_recovery_second, price_survival_first,
                     price_survival_second)
from .defaults import (DefaultScenario, FactorPath, PathEngine, PayoffDecomposition, ScenarioBatch,
                       conditional_expectation_fixed_prior, construct_default_times,
                       oracle_conditional_expectation, simulate_scenarios, support_points)
from .errors import (BoundViolationError, CapacityError, ConfigError, DomainError,
                     InsufficientConditioningError, MultiDefaultError)
from .grid import IntegratedCurve, TimeGrid, default_density_integral, integrate_curve
from .intensity import (ConstantPerLevel, FactorDriven, IntensityModel, PiecewiseConstant, SelfExciting,
                        counting_jump_intensity, level_intensity, shifted_intensity, survival_probability)
from .priors import (MarkovReduction, NodePolicy, PathFunctional, RobustFactorLattice,
                     conditional_linear_expectation, conditional_sublinear_expectation, sample_path,
                     verify_tower_property)
from .sublinear import (RegimeValue, check_commutation_conditions, restricted_operator, sublinear_operator,
                        verify_weak_dpp)
