"""Exception hierarchy shared by all perorbit modules.

Every message raised at an operation boundary is prefixed with
``module.operation:`` so batch logs and CLI diagnostics name their origin.
"""


class PerorbitError(Exception):
    """Base class for all errors raised by this package."""


# --- expression language -------------------------------------------------

class ExprError(PerorbitError):
    pass


class ParseError(ExprError):
    """Syntax error with a byte offset and the set of tokens expected there."""

    def __init__(self, message, offset, expected=()):
        super().__init__(f"{message} (offset {offset}; expected {sorted(expected)})")
        self.offset = offset
        self.expected = frozenset(expected)


class UnknownIdentifierError(ExprError):
    def __init__(self, name, offset):
        super().__init__(f"unknown identifier '{name}' (offset {offset})")
        self.name = name
        self.offset = offset


class DomainEvalError(ExprError):
    """Evaluation hit a domain error (sqrt of a negative, division by zero)."""

    def __init__(self, message, node):
        super().__init__(message)
        self.node = node


class NonSmoothWarning(UserWarning):
    """abs/norm differentiated at a kink; the subderivative 0 was returned."""


class ValidationError(PerorbitError):
    pass


# --- integration ----------------------------------------------------------

class IntegrationError(PerorbitError):
    def __init__(self, message, t=None):
        super().__init__(message if t is None else f"{message} (at t={t!r})")
        self.t = t


class StepSizeUnderflow(IntegrationError):
    pass


class MaxStepsExceeded(IntegrationError):
    pass


class NonFiniteDerivative(IntegrationError):
    pass


class StateBoundExceeded(IntegrationError):
    pass


# --- dichotomy ------------------------------------------------------------

class ImaginaryAxisEigenvalue(PerorbitError):
    pass


class SingularMatrix(ImaginaryAxisEigenvalue):
    """A sign iterate could not be inverted.

    In exact arithmetic a singular Newton iterate of the matrix sign function
    occurs only when the input has an eigenvalue on the imaginary axis, hence
    the subclass relationship.
    """


class UnboundedGrowth(PerorbitError):
    pass


class ContractionViolated(PerorbitError):
    pass


# --- degree ---------------------------------------------------------------

class ZeroOnBoundary(PerorbitError):
    pass


class NonConvergent(PerorbitError):
    pass


class ContourNotFound(PerorbitError):
    pass


# --- orbit solving --------------------------------------------------------

class OrbitSolveError(PerorbitError):
    pass


class NoZeroFound(OrbitSolveError):
    pass


class MaxIterations(OrbitSolveError):
    pass


class SingularJacobian(OrbitSolveError):
    pass


class DivergedOutsideDomain(OrbitSolveError):
    pass


# --- CLI ------------------------------------------------------------------

class ConfigError(PerorbitError):
    pass
