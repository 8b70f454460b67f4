"""Exception types shared across the engine.

Every user-facing failure carries a short machine-readable ``code`` so that
the CLI can map it to a stable exit status and tests can assert on the exact
failure mode instead of matching message text.
"""


class EngineError(Exception):
    """Base class for all errors raised by this package."""

    code = "engine_error"

    def __init__(self, message: str, *, code: str | None = None):
        super().__init__(message)
        if code is not None:
            self.code = code


class ValidationError(EngineError, ValueError):
    """Invalid input data or configuration (CLI exit status 2)."""

    code = "validation_error"


class NumericalError(EngineError, ArithmeticError):
    """Numerical failure such as Cholesky exhaustion (CLI exit status 3)."""

    code = "numerical_error"
