"""Exception types shared across the toolkit.

Plain ``ValueError`` is raised for ordinary bad arguments; the classes here
cover conditions callers may want to catch separately (file parsing,
configured resource caps, experiment-plan validation, diverging training).
"""


class GhostKitError(Exception):
    """Base class for toolkit-specific errors."""


class UnsupportedSizeError(GhostKitError, ValueError):
    """Requested dimensions are not representable by the construction."""


class ResourceLimitError(GhostKitError):
    """Operation would exceed a configured resource cap."""


class FormatError(GhostKitError):
    """File is missing, unreadable, or not in the expected format."""


class CorruptionError(FormatError):
    """File parsed but failed its integrity check (truncation, bad checksum)."""


class PlanError(GhostKitError, ValueError):
    """Experiment plan is inconsistent or references missing artifacts."""


class TrainingDivergedError(GhostKitError, RuntimeError):
    """Training loss became non-finite; carries the offending epoch and step."""

    def __init__(self, epoch: int, step: int, loss: float):
        self.epoch = epoch
        self.step = step
        self.loss = loss
        super().__init__(
            f"training diverged at epoch {epoch}, step {step} (loss={loss!r})"
        )
