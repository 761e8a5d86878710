"""Exception types shared across the package."""


class NvChargeError(Exception):
    """Base class for all package errors."""


class InvalidParameterError(NvChargeError):
    """A numeric argument is out of its valid domain (negative rate, NaN, ...)."""


class UndefinedStationaryStateError(NvChargeError):
    """Both switching rates are zero, so no stationary distribution exists."""


class TruncationError(NvChargeError):
    """A probability distribution could not be truncated below the tail-mass target."""

    def __init__(self, message, tail_mass=None):
        super().__init__(message)
        self.tail_mass = tail_mass


class RebinningError(NvChargeError):
    """A requested counting time is not commensurate with the trace binning."""


class ConvergenceError(NvChargeError):
    """An iterative fit did not converge; carries the best result found so far."""

    def __init__(self, message, best_so_far=None, diagnostics=None):
        super().__init__(message)
        self.best_so_far = best_so_far
        self.diagnostics = diagnostics


class InsufficientEventsError(NvChargeError):
    """Too few switching events in the data to estimate rates."""


class DegenerateDataError(NvChargeError):
    """The data cannot constrain the requested model (e.g. all powers equal)."""


class QuadratureError(NvChargeError):
    """Numerical integration failed to reach the requested tolerance."""

    def __init__(self, message, achieved_tol=None):
        super().__init__(message)
        self.achieved_tol = achieved_tol


class AlignmentError(NvChargeError):
    """Spectra to be combined do not share the same detuning grid."""


class ConfigurationError(NvChargeError):
    """A configuration block is structurally invalid."""


class RangeNotFoundError(NvChargeError):
    """No interior field maximum was found on the scanned density grid."""
