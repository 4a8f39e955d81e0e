"""Exception types shared across the solver."""


class VemError(Exception):
    """Base class for all solver errors."""


class DegenerateGrid(VemError):
    """Grid nodes are repeated, non-monotone, or too few."""


class StepFailure(VemError):
    """Adaptive integration failed: step underflow or step budget exhausted."""


class NonFiniteField(VemError):
    """An ODE right-hand side returned NaN or Inf."""


class NonFiniteDynamics(NonFiniteField):
    """Problem dynamics returned NaN or Inf during state propagation."""


class NonFiniteCallback(VemError):
    """A problem callback returned NaN or Inf at a probe point."""


class SingularSystem(VemError):
    """A dense linear system is singular or numerically rank-deficient."""


class TfCollapse(VemError):
    """Terminal-time evolution collapsed the horizon below its minimum width."""
