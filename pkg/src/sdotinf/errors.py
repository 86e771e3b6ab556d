"""Exception hierarchy for semidiscrete transport computations.

All errors raised by this package derive from :class:`SemidiscreteError`,
so callers can catch one base class at pipeline boundaries.  The concrete
classes mirror the failure modes of the geometry / measure / solver layers.
"""


class SemidiscreteError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(SemidiscreteError):
    """Inputs disagree on the ambient dimension or vector length."""


class UnsupportedExactDimension(SemidiscreteError):
    """Exact geometry or an exact backend was requested where only
    Monte Carlo is available (d >= 3, or non-polygonal supports)."""


class NotBuiltAgainstSupport(SemidiscreteError):
    """A diagram was built against a different support than the measure's."""


class EmptyFacet(SemidiscreteError):
    """Facet has no geometry to integrate over."""


class NoSampler(SemidiscreteError):
    """The reference measure cannot produce random samples."""


class NotInterior(SemidiscreteError):
    """A weight vector has a zero (or negative) component, so the dual
    problem has no solution with all cells charged."""


class EmptyCell(SemidiscreteError):
    """A Laguerre cell carries zero mass where positive mass is required."""


class MaxIterationsExceeded(SemidiscreteError):
    """The dual solver ran out of Newton steps or line-search halvings."""


class DegenerateConfiguration(SemidiscreteError):
    """The reduced Hessian is numerically singular despite positive masses."""


class SingularHessian(SemidiscreteError):
    """Sensitivity computation failed because the Hessian is singular."""


class NotPSD(SemidiscreteError):
    """A matrix required to be positive semidefinite is not."""


class EmptyDraws(SemidiscreteError):
    """A quantile was requested from an empty collection of draws."""


class ConfigError(SemidiscreteError):
    """A problem configuration failed validation."""
