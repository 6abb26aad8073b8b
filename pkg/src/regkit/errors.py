"""Exception types shared across the toolkit."""

from __future__ import annotations


class RegkitError(Exception):
    """Base class for all toolkit errors."""


class ParseError(RegkitError):
    """A mesh or point-cloud file could not be parsed.

    Carries the offending path and 1-based line number so CLI users can
    locate the problem.
    """

    def __init__(self, path: str, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.path = path
        self.line = line


class UnsupportedFormatError(RegkitError):
    """File extension or header does not match any supported format."""


class EmptyCloudError(RegkitError):
    """An operation that requires points received an empty cloud."""


class TooFewCorrespondencesError(RegkitError):
    """Pose solving needs at least three correspondences."""


class DegenerateConfigurationError(RegkitError):
    """Correspondences do not constrain a rotation (rank-deficient)."""


class NoCorrespondencesError(RegkitError):
    """Hard selection rejected every candidate match; pair is unregistrable."""


class TrainingDivergedError(RegkitError):
    """Training loss became non-finite.

    ``last_loss`` holds the last finite loss value and ``history`` the
    per-epoch losses recorded before the divergence.
    """

    def __init__(self, message: str, last_loss: float, history: list[float]):
        super().__init__(message)
        self.last_loss = last_loss
        self.history = history
