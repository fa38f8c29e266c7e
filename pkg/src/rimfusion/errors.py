"""Exception types raised across the package."""


class RimFusionError(Exception):
    """Base class for all package errors."""


class SingularGeometry(RimFusionError):
    """The normal-space Gram matrix of a vertex set is numerically singular."""


class PoleEncountered(RimFusionError):
    """The scaling retraction hit one of its poles."""


class DegenerateBase(RimFusionError):
    """The base segment of a triangle has (numerically) zero length."""


class DegenerateTriangle(RimFusionError):
    """Vertices are collinear or coincident, so no body frame exists."""


class NonFiniteCost(RimFusionError):
    """A solver produced a NaN or infinite cost."""


class SingularNormalEquations(RimFusionError):
    """Gauss-Newton normal equations are rank deficient."""


class NonMonotonicTimestamps(RimFusionError):
    """Timestamps of a sample stream are not strictly increasing."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class SingularInnovation(RimFusionError):
    """The innovation covariance of a Kalman update cannot be inverted."""


class IndefiniteCovariance(RimFusionError):
    """A covariance matrix is not positive definite, even after jitter."""


class InvalidWaypoints(RimFusionError):
    """Waypoints cannot define a trajectory."""


class MisalignedTracks(RimFusionError):
    """Truth and estimate tracks do not share timestamps."""


class ConfigError(RimFusionError):
    """An experiment configuration is malformed."""


class ParseError(RimFusionError):
    """A CSV input file is malformed."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class RuntimeFailure(RimFusionError):
    """An estimation algorithm failed during a run."""

    def __init__(self, message, algorithm=None):
        if algorithm is not None:
            message = f"{algorithm}: {message}"
        super().__init__(message)
        self.algorithm = algorithm
