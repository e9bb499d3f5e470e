"""Semantic exception hierarchy.

Callers can catch ``GaussBubblesError`` for anything raised by this package,
or the specific subclasses when they need to distinguish bad inputs
(precondition-style errors) from resource/accuracy problems (capacity and
precision errors). The CLI maps the two groups to distinct exit codes.
"""


class GaussBubblesError(Exception):
    """Base class for all package errors."""


class ContractViolationError(GaussBubblesError):
    """Mismatched shapes/dimensions or an invalid object construction."""


class DomainError(GaussBubblesError):
    """A numeric parameter is outside its mathematical domain."""


class ConfigError(GaussBubblesError):
    """An integration/experiment configuration is internally inconsistent."""


class PreconditionError(GaussBubblesError):
    """A documented operation precondition does not hold for these inputs."""


class DegenerateCellError(GaussBubblesError):
    """A partition cell is empty where the operation needs positive mass."""


class DegeneratePairError(GaussBubblesError):
    """Two cells carry identical affine functionals."""


class UnsupportedGeometryError(GaussBubblesError):
    """The operation needs polyhedral facet geometry and none is available."""


class CapacityError(GaussBubblesError):
    """A dense table would exceed the configured size budget."""


class PrecisionError(GaussBubblesError):
    """Monte Carlo noise is too large for the requested quantity."""


class CalibrationError(GaussBubblesError):
    """Volume calibration failed to converge.

    Carries the last iterate and its residual so callers can inspect or
    resume from the failure point.
    """

    def __init__(self, message, partition=None, residual=None):
        super().__init__(message)
        self.partition = partition
        self.residual = residual
