"""Exception types shared across the package.

User-input problems (bad parameters, malformed files) derive from ValueError
so callers can catch broadly.  Numerical failures derive from
ArithmeticError: a failed self-check points at an internal bug, while a
degenerate division points at an unstable parameter choice.
"""


class ParameterError(ValueError):
    """An argument violates a documented precondition."""


class ShapeError(ValueError):
    """Array dimensions are incompatible with the requested operation."""


class FormatError(ValueError):
    """A file exists but its contents are not in a supported format."""


class NumericalConsistencyError(ArithmeticError):
    """An internal numerical invariant failed (e.g. a non-real inverse FFT)."""


class DivisionDegeneracyError(ArithmeticError):
    """A ratio with zero stabilizer hit a zero denominator."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""
