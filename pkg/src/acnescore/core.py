"""Shared domain types and numeric conventions.

Conventions used throughout the package:

* images are 8-bit RGB rasters with a top-left pixel origin and y
  increasing downward;
* severity labels are the integers 1..5 (0, "not acne", is rejected);
* continuous severity scores are clamped to [1.0, 5.0] at public
  boundaries, while internal training math runs on raw head output.

All types here are immutable values and safe to share across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum, IntEnum

import numpy as np

from .errors import InvalidScore

SCORE_MIN = 1.0
SCORE_MAX = 5.0

# BT.601 luma weights; the single RGB->luma conversion used everywhere.
LUMA_WEIGHTS = (0.299, 0.587, 0.114)

#: Continuous severity on the label scale. Plain float; call
#: :func:`clamp_score` before handing a value to a public boundary.
SeverityScore = float


class SeverityLabel(IntEnum):
    """Discrete severity grade. Value 0 ("Not Acne") is not constructible."""

    CLEAR = 1
    ALMOST_CLEAR = 2
    MILD = 3
    MODERATE = 4
    SEVERE = 5

    @property
    def display_name(self) -> str:
        return _DISPLAY_NAMES[self]


_DISPLAY_NAMES = {
    SeverityLabel.CLEAR: "Clear",
    SeverityLabel.ALMOST_CLEAR: "Almost Clear",
    SeverityLabel.MILD: "Mild",
    SeverityLabel.MODERATE: "Moderate",
    SeverityLabel.SEVERE: "Severe",
}


class PatchKind(Enum):
    """The four facial regions a skin patch can come from."""

    FOREHEAD = "forehead"
    LEFT_CHEEK = "left_cheek"
    RIGHT_CHEEK = "right_cheek"
    CHIN = "chin"


@dataclass(frozen=True)
class Rect:
    """Axis-aligned pixel rectangle, top-left origin.

    A rect is only usable against an image when it lies fully inside it
    and has w, h >= 1; geometry code validates at the point of use so that
    degenerate rects (e.g. an empty intersection) remain representable.
    """

    x: int
    y: int
    w: int
    h: int

    @property
    def area(self) -> int:
        return max(0, self.w) * max(0, self.h)

    @property
    def x2(self) -> int:
        return self.x + self.w

    @property
    def y2(self) -> int:
        return self.y + self.h

    def intersect(self, other: "Rect") -> "Rect":
        """Intersection rect; may have w or h <= 0 when disjoint."""
        x1 = max(self.x, other.x)
        y1 = max(self.y, other.y)
        x2 = min(self.x2, other.x2)
        y2 = min(self.y2, other.y2)
        return Rect(x1, y1, x2 - x1, y2 - y1)

    def contains_point(self, x: float, y: float) -> bool:
        return self.x <= x < self.x2 and self.y <= y < self.y2


@dataclass(frozen=True, eq=False)
class ImageBuffer:
    """Decoded 8-bit RGB raster; the unit of ingestion and patching.

    Wraps an (h, w, 3) uint8 array in R,G,B channel order. The pixel data
    is copied on construction and frozen, so instances are immutable
    values.
    """

    pixels: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.pixels)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValueError(f"expected (h, w, 3) RGB array, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"image must be at least 1x1, got shape {arr.shape}")
        if arr.dtype != np.uint8:
            raise ValueError(f"expected uint8 pixels, got {arr.dtype}")
        arr = np.ascontiguousarray(arr).copy()
        arr.setflags(write=False)
        object.__setattr__(self, "pixels", arr)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def bounds(self) -> Rect:
        return Rect(0, 0, self.width, self.height)

    def crop(self, rect: Rect) -> "ImageBuffer":
        if rect.w < 1 or rect.h < 1:
            raise ValueError(f"cannot crop degenerate rect {rect}")
        if rect.x < 0 or rect.y < 0 or rect.x2 > self.width or rect.y2 > self.height:
            raise ValueError(f"rect {rect} not contained in {self.width}x{self.height} image")
        return ImageBuffer(self.pixels[rect.y : rect.y2, rect.x : rect.x2])


def luma(img: ImageBuffer) -> np.ndarray:
    """Per-pixel luma (float64, 0..255) of an RGB image."""
    r, g, b = LUMA_WEIGHTS
    px = img.pixels.astype(np.float64)
    return r * px[:, :, 0] + g * px[:, :, 1] + b * px[:, :, 2]


def mean_luma(img: ImageBuffer) -> float:
    return float(luma(img).mean())


def clamp_score(raw: float) -> SeverityScore:
    """Clamp a raw head output onto the [1, 5] label scale."""
    raw = float(raw)
    if not math.isfinite(raw):
        raise InvalidScore(f"score must be finite, got {raw!r}")
    return min(SCORE_MAX, max(SCORE_MIN, raw))
