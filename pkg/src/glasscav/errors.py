"""Exception and warning types shared across the package."""


class GlasscavError(Exception):
    """Base class for all package errors."""


class SingularArgumentError(GlasscavError, ValueError):
    """A kernel was evaluated at a point where it is a distribution, not a function."""


class UnsupportedGeometryError(GlasscavError, ValueError):
    """The requested cavity geometry is outside what the model handles."""


class ConvergenceError(GlasscavError, RuntimeError):
    """An iterative solver failed to meet its tolerance within its budget."""


class IntegratorError(GlasscavError, RuntimeError):
    """The ODE integrator could not take an acceptable step."""


class ConstraintError(GlasscavError, RuntimeError):
    """Rejection sampling could not satisfy the geometric constraints."""


class DegenerateImageError(GlasscavError, ValueError):
    """An image carries no usable signal (for example, it is identically zero)."""


class GridCoverageError(GlasscavError, ValueError):
    """A source lies outside the imaged region."""


class NumericalRangeError(GlasscavError, ValueError):
    """A physical quantity fell outside its admissible range."""


class GridResolutionWarning(UserWarning):
    """The pixel grid under-resolves the oscillator modes carrying the field."""


class RankDeficiencyWarning(UserWarning):
    """Two fit sources overlap so closely that their amplitudes are poorly determined."""


class QuadratureWarning(UserWarning):
    """Refining the quadrature changed some coupling entries beyond tolerance."""
