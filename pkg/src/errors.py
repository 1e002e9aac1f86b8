"""
Exception hierarchy for the sparse dyadic classification toolkit
"""


class SparseDyadicError(Exception):
    """Base class for every error raised by the toolkit"""


class ValidationError(SparseDyadicError, ValueError):
    """Input rejected before any computation (exit code 2 on the CLI)"""


class DomainError(ValidationError):
    """A point coordinate lies outside the unit cube"""


class NoParentError(ValidationError):
    """Parent requested for the root cell"""


class StructureError(ValidationError):
    """A tree has the wrong arity or an illegal node value"""


class DimensionMismatchError(ValidationError):
    """Two objects living in different dimensions were combined"""


class ParameterRangeError(ValidationError):
    """A numeric parameter is outside its admissible range"""


class DocumentError(ValidationError):
    """A JSON or CSV document could not be parsed into a domain object"""


class ConfigurationError(ValidationError):
    """Environment or experiment configuration is invalid"""


class UnsupportedTailError(SparseDyadicError):
    """A weight function has no closed-form tail"""


class InfeasibleBudgetError(SparseDyadicError):
    """A rule cannot be closed within the per-level budget"""


class CertificateError(SparseDyadicError):
    """A distribution or bound certificate does not hold"""


class NeighborError(ValidationError):
    """Hellinger closed form requested for a non-neighbouring pair"""
