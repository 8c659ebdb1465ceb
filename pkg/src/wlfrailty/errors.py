"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain of a function."""


class QuadratureError(ArithmeticError):
    """Adaptive quadrature ran out of subdivisions before meeting tolerance."""

    def __init__(self, message, value=None, err_est=None):
        super().__init__(message)
        self.value = value
        self.err_est = err_est


class ConvergenceError(RuntimeError):
    """An iterative solver stopped without converging.

    ``state`` carries whatever partial result the solver had reached, so a
    caller can inspect or resume from it.
    """

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


class SingularHessianError(ConvergenceError):
    """Newton iterations hit a singular (or non negative-definite) Hessian."""


class NotPositiveDefiniteError(ArithmeticError):
    """Observed information matrix is not positive definite."""

    def __init__(self, message, eigenvalue):
        super().__init__(message)
        self.eigenvalue = eigenvalue


class DataError(ValueError):
    """Malformed input data. ``line`` is the 1-based file line when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
