"""Synthetic imagery for tests, experiments, and demo fixtures.

Two generators live here:

* lesion patches: square skin-toned patches with a known number of drawn
  lesion disks, where severity is a deterministic function of the count.
  Confining lesion positions to one half of the patch at training time
  reproduces the spatial-generalization failure that rolling augmentation
  is meant to fix, which makes these patches the workhorse of the
  augmentation experiments.
* a frontal synthetic face with symmetrically placed landmarks and ample
  margins, used wherever a real selfie would be (extraction tests, the
  service round-trip, CLI demos).
"""

from __future__ import annotations

import numpy as np

from .core import ImageBuffer, PatchKind, Rect, SeverityLabel
from .face_patches import NamedLandmarks, Point, SkinPatch

SKIN_RGB = (224, 178, 144)
LESION_RGB = (142, 52, 40)

LESIONS_PER_GRADE = 3


def severity_for_lesion_count(count: int) -> SeverityLabel:
    """Deterministic grade: one severity step per 3 lesions, capped at 5."""
    if count < 0:
        raise ValueError(f"lesion count must be >= 0, got {count}")
    return SeverityLabel(min(5, 1 + count // LESIONS_PER_GRADE))


def lesion_count_for(label: SeverityLabel, rng: np.random.Generator) -> int:
    """A lesion count whose severity maps back to ``label``."""
    return LESIONS_PER_GRADE * (int(label) - 1) + int(rng.integers(0, LESIONS_PER_GRADE))


def draw_lesion_patch(
    rng: np.random.Generator,
    count: int,
    size: int = 64,
    x_limit: float = 1.0,
    radius: int = 3,
) -> ImageBuffer:
    """Skin-toned square with ``count`` dark lesion disks drawn on it.

    ``x_limit`` restricts disk centers to the leftmost fraction of the
    patch (1.0 = anywhere), which is how the biased training condition is
    produced. Disks have a fixed radius and avoid overlapping (best
    effort), so total lesion area stays proportional to the count.
    """
    if not 0.0 < x_limit <= 1.0:
        raise ValueError(f"x_limit must be in (0, 1], got {x_limit}")
    px = np.empty((size, size, 3), dtype=np.uint8)
    px[:, :] = SKIN_RGB
    yy, xx = np.mgrid[0:size, 0:size]
    x_max = max(radius + 1, int(size * x_limit) - radius)
    centers: list[tuple[int, int]] = []
    for _ in range(count):
        for _attempt in range(200):
            cx = int(rng.integers(radius, x_max)) if x_max > radius else radius
            cy = int(rng.integers(radius, size - radius))
            if all((cx - ox) ** 2 + (cy - oy) ** 2 > (2 * radius) ** 2 for ox, oy in centers):
                break
        centers.append((cx, cy))
        mask = (xx - cx) ** 2 + (yy - cy) ** 2 <= radius**2
        px[mask] = LESION_RGB
    return ImageBuffer(px)


def make_lesion_dataset(
    n: int,
    rng: np.random.Generator,
    size: int = 64,
    x_limit: float = 1.0,
    kind: PatchKind = PatchKind.FOREHEAD,
) -> list[SkinPatch]:
    """``n`` labeled lesion patches with severity uniform over 1..5.

    All patches share one kind so the roll direction is uniform; the
    default (forehead) rolls horizontally, matching the x-axis bias knob.
    """
    patches: list[SkinPatch] = []
    for i in range(n):
        label = SeverityLabel(1 + i % 5)
        count = lesion_count_for(label, rng)
        img = draw_lesion_patch(rng, count, size=size, x_limit=x_limit)
        patches.append(SkinPatch(kind, Rect(0, 0, size, size), img, label=label))
    return patches


# ---------------------------------------------------------------------------
# Synthetic frontal face
# ---------------------------------------------------------------------------


def _fill_ellipse(px: np.ndarray, cx: float, cy: float, rx: float, ry: float, color) -> None:
    h, w = px.shape[:2]
    yy, xx = np.mgrid[0:h, 0:w]
    mask = ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2 <= 1.0
    px[mask] = color


def make_frontal_face(
    width: int = 640, height: int = 880, background: tuple[int, int, int] = (28, 30, 34)
) -> tuple[ImageBuffer, NamedLandmarks]:
    """A drawn frontal face whose landmarks admit all four skin patches.

    Proportions follow the usual portrait layout: eyes on the upper-third
    line separated by D, brows above, mouth and chin below, face edges
    wide enough that both cheek rects clear the margins.
    """
    px = np.empty((height, width, 3), dtype=np.uint8)
    px[:, :] = background
    cx = width / 2.0
    d = width * 0.28  # inter-eye distance
    eye_y = height * 0.42
    face_rx, face_ry = 1.15 * d, 1.55 * d
    face_cy = eye_y + 0.45 * d
    _fill_ellipse(px, cx, face_cy, face_rx, face_ry, SKIN_RGB)

    left_eye = Point(cx - d / 2.0, eye_y)
    right_eye = Point(cx + d / 2.0, eye_y)
    for eye in (left_eye, right_eye):
        _fill_ellipse(px, eye.x, eye.y, 0.16 * d, 0.09 * d, (250, 250, 250))
        _fill_ellipse(px, eye.x, eye.y, 0.06 * d, 0.06 * d, (40, 36, 30))
    brow_y = eye_y - 0.28 * d
    for ex in (left_eye.x, right_eye.x):
        _fill_ellipse(px, ex, brow_y, 0.2 * d, 0.035 * d, (70, 50, 40))
    mouth_y = eye_y + 1.05 * d
    _fill_ellipse(px, cx, mouth_y, 0.32 * d, 0.07 * d, (168, 88, 82))
    nose = Point(cx, eye_y + 0.55 * d)
    _fill_ellipse(px, nose.x, nose.y, 0.07 * d, 0.12 * d, (206, 152, 118))

    lm = NamedLandmarks(
        left_eye_center=left_eye,
        right_eye_center=right_eye,
        nose_tip=nose,
        mouth_left=Point(cx - 0.32 * d, mouth_y),
        mouth_right=Point(cx + 0.32 * d, mouth_y),
        chin_bottom=Point(cx, face_cy + face_ry * 0.98),
        left_brow_top=Point(left_eye.x, brow_y - 0.05 * d),
        right_brow_top=Point(right_eye.x, brow_y - 0.05 * d),
        face_left=Point(cx - face_rx * 0.97, eye_y + 0.6 * d),
        face_right=Point(cx + face_rx * 0.97, eye_y + 0.6 * d),
    )
    return ImageBuffer(px), lm


def landmark_sidecar_text(lm: NamedLandmarks) -> str:
    """Serialize landmarks in the ``point_name x y`` sidecar format."""
    lines = [f"{name} {p.x:.2f} {p.y:.2f}" for name, p in lm.points().items()]
    return "\n".join(lines) + "\n"


def eye_sidecar_text(rect: Rect, confidence: float | None = None) -> str:
    base = f"eye {rect.x} {rect.y} {rect.w} {rect.h}"
    return (base if confidence is None else f"{base} {confidence}") + "\n"
