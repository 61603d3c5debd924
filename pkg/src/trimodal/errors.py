"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Caller handed us data that violates an operation's preconditions."""


class ShapeError(ValidationError):
    """Operand shapes are incompatible."""


class ContractError(RuntimeError):
    """An internal invariant was violated; indicates a bug upstream."""
