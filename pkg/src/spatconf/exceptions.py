"""Exception hierarchy.

Every error carries a short machine-readable ``code`` which the command line
front end prints on failure.
"""


class SpatConfError(Exception):
    code = "E_SPATCONF"


class ValidationError(SpatConfError, ValueError):
    code = "E_VALIDATION"


class NumericalError(SpatConfError, ArithmeticError):
    code = "E_NUMERICAL"


class UndefinedBiasError(ValidationError):
    """The covariate has zero norm in the precision metric."""

    code = "E_UNDEFINED_BIAS"


class PreconditionError(ValidationError):
    code = "E_PRECONDITION"


class IdentifiabilityError(ValidationError):
    """The joint model matrix ``[x | B_sp]`` is rank deficient at zero smoothing."""

    code = "E_IDENTIFIABILITY"


class DegenerateCovariateError(ValidationError):
    code = "E_DEGENERATE_COVARIATE"


class InsufficientFrequencyError(DegenerateCovariateError):
    """The cap-selected part of the covariate is numerically zero."""

    code = "E_INSUFFICIENT_FREQUENCY"


class DataError(ValidationError):
    code = "E_DATA"


class OutputError(SpatConfError):
    code = "E_IO"
