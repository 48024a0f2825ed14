"""Exception hierarchy for leaksim."""

from __future__ import annotations


class LeaksimError(Exception):
    """Base class for all simulator errors."""


class ConfigError(LeaksimError, ValueError):
    """Invalid or inconsistent experiment configuration."""


class ChannelError(LeaksimError, ValueError):
    """A channel violates trace preservation, shape or incoherence requirements."""


class SamplingError(LeaksimError, RuntimeError):
    """Born sampling failed inside a trajectory.

    Carries the uid of the offending operation so the abort can be reported.
    """

    def __init__(self, message: str, op_uid: int | None = None) -> None:
        super().__init__(message if op_uid is None else f"op {op_uid}: {message}")
        self.op_uid = op_uid


class ScheduleError(LeaksimError, RuntimeError):
    """The operation graph cannot be ordered."""


class DecodingError(LeaksimError, RuntimeError):
    """Detector graph construction or matching failed."""


class ModelError(LeaksimError, ValueError):
    """A rate model has unphysical parameters."""


class FitError(LeaksimError, ValueError):
    """A fit had too few usable points or did not converge."""
