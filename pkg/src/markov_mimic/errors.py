"""Exception types shared across the package."""


class GridAlignmentError(ValueError):
    """A time argument does not fall on the simulation grid."""


class IntegrabilityError(ValueError):
    """A kernel integral that must be finite is not."""


class UnsupportedKernelError(ValueError):
    """The kernel representation does not support the requested operation."""


class ScenarioError(RuntimeError):
    """Scenario coefficients are invalid at a reachable state."""


class EstimationError(RuntimeError):
    """Conditional-expectation regression could not be carried out."""


class StateLookupError(LookupError):
    """A (t, z) pair cannot be resolved against a projection table."""


class UnsupportedScenarioError(ValueError):
    """The scenario has no closed-form projection."""
