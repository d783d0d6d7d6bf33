"""Solvers for multiproduct pricing against a buyer who chooses what to learn.

Core objects: Scenario (truncated elliptical values), Direction and TypeLine
(linear learning and posterior means), optimal_mechanism (the seller's best
menu against a line), best_direction (the buyer's best line against a menu),
and find_equilibrium (simultaneous-move fixed points).
"""

from .errors import (
    BudgetError,
    BundleEqError,
    CheckFailure,
    InputError,
    ModelError,
    NumericError,
)
from .value_model import (
    CoordinateMarginal,
    Direction,
    Scenario,
    TypeDistribution,
    TypeLine,
    coordinate_marginal,
    posterior_line,
    signal_marginal,
    type_distribution,
)

__all__ = [
    "BudgetError",
    "BundleEqError",
    "CheckFailure",
    "InputError",
    "ModelError",
    "NumericError",
    "CoordinateMarginal",
    "Direction",
    "Scenario",
    "TypeDistribution",
    "TypeLine",
    "coordinate_marginal",
    "posterior_line",
    "signal_marginal",
    "type_distribution",
]
