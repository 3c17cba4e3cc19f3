"""Exception types raised across the package."""


class PerturbMapError(Exception):
    """Base class for all errors raised by perturbmap."""


class DomainError(PerturbMapError, ValueError):
    """Argument outside the domain where the operation is defined."""


class BracketError(PerturbMapError, ValueError):
    """Bracket endpoints do not enclose a sign change."""


class ConvergenceError(PerturbMapError, RuntimeError):
    pass


class DegenerateSignError(PerturbMapError, ValueError):
    """Too few sign changes to build a sign-group reduction."""


class EmptySetError(PerturbMapError, ValueError):
    pass


class PreconditionError(PerturbMapError, ValueError):
    pass


class SimulationOverflow(PerturbMapError, OverflowError):
    """A trajectory left the region where the map is meaningful."""


class ConfigError(PerturbMapError, ValueError):
    """Invalid configuration document; ``field`` names the offending entry."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")
