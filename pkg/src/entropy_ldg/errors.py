"""Exception types shared across the package."""


class InvalidArgument(ValueError):
    """A parameter is outside its admissible range."""


class NumericDomainError(ValueError):
    """A function was evaluated where it is not finite."""


class SingularStateError(ArithmeticError):
    """Entropy Hessian became non-finite on some element."""

    def __init__(self, message: str, element: int | None = None):
        super().__init__(message)
        self.element = element


class DivergedStateError(ArithmeticError):
    """Residual or iterate became non-finite."""


class NotConvergedError(RuntimeError):
    """Newton iteration hit its iteration cap."""

    def __init__(self, message: str, residual_norm: float = float("nan"), iterations: int = 0):
        super().__init__(message)
        self.residual_norm = residual_norm
        self.iterations = iterations


class TimeStepUnderflow(RuntimeError):
    """Adaptive step size fell below the allowed floor."""
