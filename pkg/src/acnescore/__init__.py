"""Acne-severity scoring from selfie images.

Pipeline: extract forehead/cheek/chin skin patches (landmarks with a
one-eye fallback), optionally expand training patches by rolling
augmentation, embed patches with a pretrained backbone, score them with a
small regression head, and average per-patch scores into a 1-5 severity.
"""

__version__ = "0.1.0"

from .core import (  # noqa: F401
    ImageBuffer,
    PatchKind,
    Rect,
    SeverityLabel,
    SeverityScore,
    clamp_score,
)
