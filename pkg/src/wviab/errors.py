"""Exception types shared across the package."""


class WviabError(Exception):
    """Base class for all package errors."""


class DimensionError(WviabError, ValueError):
    """Two measures (or a measure and a field) live in different dimensions."""


class NumericalError(WviabError, ArithmeticError):
    """A non-finite value appeared in a state, image or velocity."""


class BaseMismatchError(WviabError, ValueError):
    """A tangent vector was applied to a measure it was not sampled on."""


class ControlGridMismatch(WviabError, ValueError):
    """A selection does not cover the requested horizon or has the wrong shape."""


class FieldAuditError(WviabError, ValueError):
    """Randomized spot-checks contradict the declared growth/Lipschitz constants."""


class NotInConstraint(WviabError, ValueError):
    """A base measure expected to lie in a constraint set does not."""


class DomainError(WviabError, ValueError):
    """A Lyapunov functional was evaluated outside its domain."""


class ScenarioError(WviabError, ValueError):
    """A scenario or registry entry is malformed."""
