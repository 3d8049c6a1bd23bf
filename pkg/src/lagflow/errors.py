"""Exception types shared across the package."""


class LagflowError(Exception):
    """Base class for all package errors."""


class DomainError(LagflowError, ValueError):
    """An argument lies outside the admissible domain (e.g. tau outside [0, pi/2])."""


class ConeViolationError(LagflowError, ValueError):
    """A spectrum or matrix is not in the positive cone.

    The offending eigenvalue is kept on ``eigenvalue``.
    """

    def __init__(self, eigenvalue, message=None):
        self.eigenvalue = float(eigenvalue)
        if message is None:
            message = f"eigenvalue {self.eigenvalue!r} is not > 1e-12 (outside the positive cone)"
        super().__init__(message)


class RangeError(LagflowError, ValueError):
    """A target value lies outside the range of a monotone function on a bracket."""


class RegionError(LagflowError, ValueError):
    """A spectrum does not belong to the requested cone region."""


class ConfigError(LagflowError, ValueError):
    """Malformed or inconsistent solver / CLI configuration."""


class ConvexityLossError(LagflowError, RuntimeError):
    """The discrete Hessian stopped being positive definite during the flow."""

    def __init__(self, node, eigenvalue, step):
        self.node = node
        self.eigenvalue = float(eigenvalue)
        self.step = step
        super().__init__(
            f"convexity lost at node {node} in step {step}: "
            f"smallest Hessian eigenvalue {self.eigenvalue:.3e}"
        )


class BoundaryNewtonError(LagflowError, RuntimeError):
    """The boundary-condition solve failed to reach its tolerance."""
