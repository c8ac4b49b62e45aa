"""Exception types shared across the package."""


class DomainError(ValueError):
    """Evaluation point lies outside a function's domain."""


class InvalidActionError(ValueError):
    """Transmission decision is infeasible for the current backlog."""


class ConfigError(ValueError):
    """Experiment configuration is missing, malformed, or inconsistent."""


class NumericalAssumptionError(RuntimeError):
    """A structural assumption the algorithms rely on failed numerically."""


class ConcavityError(NumericalAssumptionError):
    """Sampled values violate concavity beyond tolerance."""
