"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: input/model problems exit 2, numeric
failures (including search budgets) exit 3, failed invariant checks exit 4.
"""


class BundleEqError(Exception):
    """Base class for all package errors."""


class InputError(BundleEqError):
    """Bad arguments, malformed files, or schema violations."""


class ModelError(InputError):
    """Scenario that is mathematically invalid (e.g. covariance not PD)."""


class NumericError(BundleEqError):
    """Quadrature, bracketing, or convergence failure inside a solver."""


class BudgetError(NumericError):
    """A grid or search was asked to exceed its configured size budget."""


class CheckFailure(BundleEqError):
    """An invariant/certificate suite reported a failure."""
