"""Exception taxonomy for the scoring pipeline.

Every error raised by this package derives from :class:`AcneScoreError`,
so callers can catch the whole family at module boundaries (CLI, service)
while tests assert on the specific subclass.
"""

from __future__ import annotations


class AcneScoreError(Exception):
    """Base class for all package errors."""


class InvalidScore(AcneScoreError):
    """A severity score was non-finite or otherwise unusable."""


class ManifestError(AcneScoreError):
    """A training manifest row could not be parsed."""

    def __init__(self, line: int, cause: str):
        super().__init__(f"manifest line {line}: {cause}")
        self.line = line
        self.cause = cause


class GoldenFormatError(AcneScoreError):
    """A golden-set row violates the 11-label format."""


class ConfigError(AcneScoreError):
    """A config file contained an unknown or unparseable key."""


class BackendError(AcneScoreError):
    """A detector or embedding backend failed (corrupt or missing artifact).

    Distinct from a clean "nothing detected" result, which backends signal
    by returning ``None`` / an empty candidate list.
    """


class InvalidLandmarks(BackendError):
    """A backend produced a landmark set violating the landmark invariants."""


class GeometryError(AcneScoreError):
    """Patch geometry could not produce enough viable skin area."""


class NoFaceFound(AcneScoreError):
    """Both the landmark detector and the one-eye fallback found nothing."""


class RollSpecError(AcneScoreError):
    """A roll size is out of range for the patch it is applied to."""


class EmptyDataset(AcneScoreError):
    """An operation requiring at least one sample received none."""


class MissingLabel(AcneScoreError):
    """An unlabeled patch reached a step that requires labels."""


class InputShapeError(AcneScoreError):
    """An array or image did not match the expected dimensions."""


class DivergenceError(AcneScoreError):
    """Training produced a non-finite loss."""

    def __init__(self, step: int):
        super().__init__(f"non-finite loss at optimization step {step}")
        self.step = step


class ModelFormatError(AcneScoreError):
    """A head artifact file is truncated, corrupt, or version-mismatched."""


class ImageDecodeError(AcneScoreError):
    """Bytes could not be decoded as a supported image format."""


class ShapeError(AcneScoreError):
    """Two sequences that must align have different lengths."""


class EmptyInput(AcneScoreError):
    """A metric received an empty sequence."""


class PanelError(AcneScoreError):
    """Golden records disagree on the rater panel."""


class UndefinedCorrelation(AcneScoreError):
    """Pearson correlation is undefined for constant input."""


class EvaluationError(AcneScoreError):
    """Evaluation could not score a single image."""
