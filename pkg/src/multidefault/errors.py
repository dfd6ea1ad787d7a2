"""Exception hierarchy shared by all modules."""


class MultiDefaultError(Exception):
    """Base class for engine errors."""


class DomainError(MultiDefaultError, ValueError):
    """An argument lies outside the domain of an operation."""


class CapacityError(MultiDefaultError):
    """A computation would exceed a configured capacity limit."""


class BoundViolationError(DomainError):
    """A declared bound (e.g. the recovery bound M) is exceeded."""


class InsufficientConditioningError(MultiDefaultError):
    """Too few Monte Carlo scenarios matched a conditioning event."""

    def __init__(self, kept: int, required: int):
        super().__init__(f"only {kept} scenarios matched the regime (need {required})")
        self.kept = kept
        self.required = required


class ConfigError(MultiDefaultError):
    """Invalid scenario configuration."""
