"""Exception types shared across the package."""


class CausalVelocityError(Exception):
    """Base class for all errors raised by this package."""


class DegenerateVariance(CausalVelocityError):
    """A coordinate has zero (or numerically zero) standard deviation."""


class EmptyResult(CausalVelocityError):
    """An operation removed every usable data point."""


class ParseError(CausalVelocityError):
    """A data file contains a malformed row."""

    def __init__(self, path, line_no, message):
        self.path = str(path)
        self.line_no = line_no
        super().__init__(f"{self.path}:{line_no}: {message}")


class MissingMeta(CausalVelocityError):
    """The pair metadata file is absent from the corpus directory."""


class AllPointsIdentical(CausalVelocityError):
    """Bandwidth selection failed because all points coincide."""


class SingularSystem(CausalVelocityError):
    """A kernel system could not be factorized even after regularization."""


class NonInvertibleMechanism(CausalVelocityError):
    """Analytic scores need an invertible mechanism with available inverse."""


class UnsupportedOrder(CausalVelocityError):
    """Requested derivative-penalty order is not implemented."""


class IndexOutOfRange(CausalVelocityError, IndexError):
    """A per-point accessor was asked for an index beyond the data."""


class DirectionTagged(CausalVelocityError):
    """Wraps an error raised while handling one candidate direction."""

    def __init__(self, direction, cause):
        self.direction = direction
        self.cause = cause
        super().__init__(f"[{direction}] {cause}")


class NonFiniteLoss(CausalVelocityError):
    """Optimization produced a NaN/Inf loss."""

    def __init__(self, iteration, value):
        self.iteration = iteration
        self.value = value
        super().__init__(f"loss became non-finite ({value}) at iteration {iteration}")


class StepLimitExceeded(CausalVelocityError):
    """The ODE integrator hit its step budget before reaching the endpoint."""


class NonFiniteState(CausalVelocityError):
    """The integrated state diverged; carries the abscissa where it happened."""

    def __init__(self, u):
        self.u = u
        super().__init__(f"state became non-finite near u={u}")


class QuadratureFailure(CausalVelocityError):
    """Numerical integration of a monotone-map integrand did not converge."""


class IntegrationFailure(CausalVelocityError):
    """One or more trajectory integrations failed; carries failing indices."""

    def __init__(self, indices, causes=None):
        self.indices = list(indices)
        self.causes = causes or []
        super().__init__(f"integration failed at indices {self.indices}")


class EmptyInput(CausalVelocityError):
    """A metric was requested for an empty row collection."""
