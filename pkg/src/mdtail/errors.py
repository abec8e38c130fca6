"""Exception types shared across the package."""


class MdtailError(Exception):
    """Base class for all package errors."""


class ParameterError(MdtailError, ValueError):
    """An argument is outside its allowed parameter range."""


class DomainError(MdtailError, ValueError):
    """A mathematical operation was requested outside its domain."""


class InvalidModelError(MdtailError, ValueError):
    """The perturbed density 1 + theta*a is not a valid probability density.

    Carries ``margin``, the essential infimum of the density (nonpositive
    when invalid).
    """

    def __init__(self, message, margin=None):
        super().__init__(message)
        self.margin = margin


class QuadratureError(MdtailError, RuntimeError):
    """Adaptive quadrature failed to converge.

    Carries the partial result and its error estimate.
    """

    def __init__(self, message, value=None, err_est=None):
        super().__init__(message)
        self.value = value
        self.err_est = err_est


class TiltRangeError(MdtailError, ValueError):
    """The requested tilted mean is unreachable inside the mgf domain.

    Carries ``sup_mean``, the largest tilted mean achieved during the search.
    """

    def __init__(self, message, sup_mean=None):
        super().__init__(message)
        self.sup_mean = sup_mean


class SupportError(MdtailError, ValueError):
    """Absolute continuity is violated (Q puts mass outside P's support)."""


class ConfigError(MdtailError, ValueError):
    """An experiment configuration violates a documented constraint."""
