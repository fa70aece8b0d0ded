"""Exception types shared across the package."""


class SonarlocError(Exception):
    """Base class for all package errors."""


class DegeneratePointError(SonarlocError):
    """A point collapsed onto the sonar origin, projection undefined."""


class NonPositiveDefiniteError(SonarlocError):
    """A covariance that must be positive definite is not."""


class AssemblyError(SonarlocError):
    """The factor graph cannot be linearized into a valid system."""


class SingularSystemError(SonarlocError):
    """Normal equations are numerically rank deficient without damping."""


class DivergenceError(SonarlocError):
    """The optimizer cost increased beyond recovery."""


class TriangulationError(SonarlocError):
    """Landmark triangulation is rank deficient for the given motion."""


class StreamError(SonarlocError):
    """Malformed sample or measurement stream."""


class ConfigError(SonarlocError):
    """Invalid scenario or run configuration."""
