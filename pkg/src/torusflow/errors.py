"""Exception types shared across the package.

Two failure families matter to callers. ValidationError means an input or a
configuration broke a documented contract before any work started; the CLI
maps it to exit code 1. SimulationError means a run was accepted and then
failed while marching (NaN, stability rejection, blow-up guard); the CLI maps
it to exit code 2.
"""


class TorusflowError(Exception):
    """Base class for package errors."""


class ValidationError(TorusflowError, ValueError):
    """An input violated a documented precondition."""


class SimulationError(TorusflowError, RuntimeError):
    """A run failed after validation passed."""


class IntegrationAborted(SimulationError):
    """Non-finite values appeared while time stepping.

    Carries the step index at which the first NaN or Inf was seen.
    """

    def __init__(self, step: int, message: str | None = None):
        self.step = step
        super().__init__(message or f"non-finite field values at step {step}")
