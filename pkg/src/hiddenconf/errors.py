"""Exception types raised by the simulator."""


class GridError(ValueError):
    """Invalid grid layout (dimension count, point counts, memory cap)."""


class FieldError(ValueError):
    """A wave field failed a construction or validity check."""


class NumericalError(FloatingPointError):
    """Non-finite values appeared during propagation or evaluation."""


class BoundaryViolation(RuntimeError):
    """Density reached the periodic boundary of the grid."""


class SamplingError(RuntimeError):
    """Rejection sampling could not make progress."""


class BranchError(RuntimeError):
    """Branch decomposition found an unexpected component structure."""


class ScenarioError(ValueError):
    """A measurement scenario violates one of its invariants."""


class ConfigError(ValueError):
    """Scenario configuration could not be parsed or validated."""
