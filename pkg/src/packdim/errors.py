"""Exception hierarchy.

Usage errors (bad parameters, malformed files, capacity limits) map to CLI
exit code 2; runtime estimation failures map to exit code 3.
"""


class PackdimError(Exception):
    """Base class for all packdim errors."""


class ParameterError(PackdimError, ValueError):
    """A parameter or input file violates a documented precondition."""


class CapacityError(ParameterError):
    """A construction would exceed the configured atom cap."""


class InfeasibleError(ParameterError):
    """A construction is impossible for the given parameters."""


class FormatError(ParameterError):
    """A file does not conform to the documented format."""


class EstimationError(PackdimError, RuntimeError):
    """An estimator could not produce a well-defined result."""
