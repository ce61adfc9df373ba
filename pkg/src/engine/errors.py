"""
Exception hierarchy for the Loewner laboratory.
"""

from typing import Optional


class LabError(Exception):
    """Base class for every error raised by the engine."""
    pass


class InvalidArgumentError(LabError, ValueError):
    """An argument failed a precondition (negative kappa, empty mesh, ...)."""
    pass


class MeshMismatchError(LabError):
    """Two objects that must share a time mesh do not."""
    pass


class SingularInputError(LabError):
    """
    A map was evaluated at one of its singular points.

    Attributes:
        stage: Index of the chain block that failed, if known
    """

    def __init__(self, message: str, stage: Optional[int] = None):
        if stage is not None:
            message = f"stage {stage}: {message}"
        super().__init__(message)
        self.stage = stage


class SwallowedPointError(LabError):
    """
    A forward Loewner trajectory reached the driver.

    Attributes:
        blowup_time: Time at which the trajectory entered the swallow radius
    """

    def __init__(self, message: str, blowup_time: float):
        super().__init__(f"{message} (t ~ {blowup_time:.6g})")
        self.blowup_time = blowup_time


class NumericalFailure(LabError):
    """
    A numerical stage failed (integrator, retries exhausted, step floor reached).

    Attributes:
        stage: Short name of the failing stage
    """

    def __init__(self, message: str, stage: str = ""):
        if stage:
            message = f"[{stage}] {message}"
        super().__init__(message)
        self.stage = stage
