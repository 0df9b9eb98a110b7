"""Skin-patch extraction: landmark-driven geometry with a one-eye fallback.

Extraction couples two detectors. The landmark path yields up to four
patches (forehead, both cheeks, chin); when no full face is found, a
single-eye detection infers forehead, the same-side cheek, and chin.
Nominal rects are clipped to the image and kept only while at least half
of their nominal area survives, so a face at the frame edge degrades to
fewer patches instead of slivers.

All rect sizes are expressed in units of the inter-eye distance D (for
the fallback, D is estimated from the eye-box width); the ratios live in
:class:`PatchGeometry` and are configurable.

Backends are pluggable. Sidecar backends read annotation files and serve
tests and fixtures; the model-backed backends wrap external detector
artifacts (a face-landmark network, an eye detector) and are only as
deterministic as those artifacts.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import NamedTuple, Protocol, Sequence, runtime_checkable

import cv2
import numpy as np

from .core import ImageBuffer, PatchKind, Rect, SeverityLabel
from .errors import BackendError, GeometryError, InvalidLandmarks, NoFaceFound


class Point(NamedTuple):
    x: float
    y: float


LANDMARK_NAMES = (
    "left_eye_center",
    "right_eye_center",
    "nose_tip",
    "mouth_left",
    "mouth_right",
    "chin_bottom",
    "left_brow_top",
    "right_brow_top",
    "face_left",
    "face_right",
)


@dataclass(frozen=True)
class NamedLandmarks:
    """The ten named facial points driving patch geometry.

    "left"/"right" are in image coordinates (the viewer's left), so
    ``left_eye_center.x < right_eye_center.x`` always holds.
    """

    left_eye_center: Point
    right_eye_center: Point
    nose_tip: Point
    mouth_left: Point
    mouth_right: Point
    chin_bottom: Point
    left_brow_top: Point
    right_brow_top: Point
    face_left: Point
    face_right: Point

    def __post_init__(self):
        if not self.left_eye_center.x < self.right_eye_center.x:
            raise InvalidLandmarks(
                f"left eye x={self.left_eye_center.x} must be left of right eye x={self.right_eye_center.x}"
            )

    @property
    def eye_distance(self) -> float:
        dx = self.right_eye_center.x - self.left_eye_center.x
        dy = self.right_eye_center.y - self.left_eye_center.y
        return float(np.hypot(dx, dy))

    @property
    def eye_midpoint(self) -> Point:
        return Point(
            (self.left_eye_center.x + self.right_eye_center.x) / 2.0,
            (self.left_eye_center.y + self.right_eye_center.y) / 2.0,
        )

    def points(self) -> dict[str, Point]:
        return {name: getattr(self, name) for name in LANDMARK_NAMES}

    def within(self, img: ImageBuffer) -> bool:
        return all(
            0 <= p.x < img.width and 0 <= p.y < img.height for p in self.points().values()
        )

    @classmethod
    def from_mapping(cls, points: dict[str, tuple[float, float]]) -> "NamedLandmarks":
        missing = [n for n in LANDMARK_NAMES if n not in points]
        if missing:
            raise InvalidLandmarks(f"missing landmark points: {missing}")
        extra = [n for n in points if n not in LANDMARK_NAMES]
        if extra:
            raise InvalidLandmarks(f"unknown landmark points: {extra}")
        return cls(**{name: Point(*points[name]) for name in LANDMARK_NAMES})


@dataclass(frozen=True)
class EyeBox:
    rect: Rect


@dataclass(frozen=True)
class EyeCandidate:
    rect: Rect
    confidence: float = 1.0


class ExtractionPath(Enum):
    LANDMARKS = "landmarks"
    EYE = "eye"


@dataclass(frozen=True, eq=False)
class SkinPatch:
    """A cropped facial region; the model's unit of input.

    ``label`` carries the whole-image severity when known; augmentation
    records its circular shift in ``shift`` (0 for originals).
    """

    kind: PatchKind
    source_rect: Rect
    pixels: ImageBuffer
    label: SeverityLabel | None = None
    via: ExtractionPath | None = None
    shift: int = 0

    def __post_init__(self):
        if (self.pixels.width, self.pixels.height) != (self.source_rect.w, self.source_rect.h):
            raise ValueError(
                f"patch pixels {self.pixels.width}x{self.pixels.height} do not match "
                f"source rect {self.source_rect.w}x{self.source_rect.h}"
            )

    def with_label(self, label: SeverityLabel | None) -> "SkinPatch":
        return replace(self, label=label)


@runtime_checkable
class LandmarkBackend(Protocol):
    """Detector contract: image in, complete landmark set or None out."""

    concurrent_safe: bool

    def detect(self, img: ImageBuffer) -> NamedLandmarks | None: ...


@runtime_checkable
class EyeBackend(Protocol):
    """Detector contract: image in, zero or more eye candidates out."""

    concurrent_safe: bool

    def detect(self, img: ImageBuffer) -> list[EyeCandidate]: ...


# ---------------------------------------------------------------------------
# Sidecar backends (annotation files; deterministic, used by tests/fixtures)
# ---------------------------------------------------------------------------


def parse_landmark_sidecar(text: str) -> NamedLandmarks:
    """Parse ``point_name x y`` lines into landmarks."""
    points: dict[str, tuple[float, float]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 3:
            raise BackendError(f"landmark sidecar line {lineno}: expected 'name x y', got {raw!r}")
        name, xs, ys = parts
        if name in points:
            raise BackendError(f"landmark sidecar line {lineno}: duplicate point {name!r}")
        try:
            points[name] = (float(xs), float(ys))
        except ValueError:
            raise BackendError(f"landmark sidecar line {lineno}: bad coordinates {raw!r}") from None
    return NamedLandmarks.from_mapping(points)


def parse_eye_sidecar(text: str) -> list[EyeCandidate]:
    """Parse ``eye x y w h [confidence]`` lines into eye candidates."""
    candidates: list[EyeCandidate] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if parts[0] != "eye" or len(parts) not in (5, 6):
            raise BackendError(f"eye sidecar line {lineno}: expected 'eye x y w h [conf]', got {raw!r}")
        try:
            x, y, w, h = (int(v) for v in parts[1:5])
            conf = float(parts[5]) if len(parts) == 6 else 1.0
        except ValueError:
            raise BackendError(f"eye sidecar line {lineno}: bad values {raw!r}") from None
        candidates.append(EyeCandidate(Rect(x, y, w, h), conf))
    return candidates


class SidecarLandmarkBackend:
    """Reads landmarks for one image from a sidecar file; missing file means NotFound."""

    concurrent_safe = True

    def __init__(self, sidecar_path: str | os.PathLike):
        self.sidecar_path = Path(sidecar_path)

    def detect(self, img: ImageBuffer) -> NamedLandmarks | None:
        if not self.sidecar_path.exists():
            return None
        return parse_landmark_sidecar(self.sidecar_path.read_text(encoding="utf-8"))


class SidecarEyeBackend:
    concurrent_safe = True

    def __init__(self, sidecar_path: str | os.PathLike):
        self.sidecar_path = Path(sidecar_path)

    def detect(self, img: ImageBuffer) -> list[EyeCandidate]:
        if not self.sidecar_path.exists():
            return []
        return parse_eye_sidecar(self.sidecar_path.read_text(encoding="utf-8"))


def image_digest(img: ImageBuffer) -> str:
    """Stable content key for an image (first 16 hex chars of sha256)."""
    return hashlib.sha256(img.pixels.tobytes()).hexdigest()[:16]


class DigestLandmarkBackend:
    """Content-addressed sidecar lookup: ``<digest>.landmarks`` in a directory.

    Lets a stateless consumer (the scoring service) resolve annotations for
    raw image bytes without any filename coupling.
    """

    concurrent_safe = True

    def __init__(self, directory: str | os.PathLike):
        self.directory = Path(directory)

    def detect(self, img: ImageBuffer) -> NamedLandmarks | None:
        path = self.directory / f"{image_digest(img)}.landmarks"
        if not path.exists():
            return None
        return parse_landmark_sidecar(path.read_text(encoding="utf-8"))


class DigestEyeBackend:
    concurrent_safe = True

    def __init__(self, directory: str | os.PathLike):
        self.directory = Path(directory)

    def detect(self, img: ImageBuffer) -> list[EyeCandidate]:
        path = self.directory / f"{image_digest(img)}.eye"
        if not path.exists():
            return []
        return parse_eye_sidecar(path.read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# Model-backed backends (external detector artifacts)
# ---------------------------------------------------------------------------


class YuNetLandmarkBackend:
    """Wraps an OpenCV FaceDetectorYN artifact (ONNX) as a landmark source.

    The detector reports a face box plus five points (eyes, nose tip,
    mouth corners); brow, chin, and face-edge points are synthesized from
    the box with fixed ratios. Serialize calls: the underlying net keeps
    per-call state.
    """

    concurrent_safe = False

    def __init__(self, model_path: str | os.PathLike, score_threshold: float = 0.6):
        path = Path(model_path)
        if not path.exists():
            raise BackendError(f"landmark model artifact not found: {path}")
        try:
            self._detector = cv2.FaceDetectorYN_create(
                str(path), "", (320, 320), score_threshold=score_threshold
            )
        except cv2.error as exc:
            raise BackendError(f"could not load landmark model {path}: {exc}") from exc

    def detect(self, img: ImageBuffer) -> NamedLandmarks | None:
        bgr = cv2.cvtColor(img.pixels, cv2.COLOR_RGB2BGR)
        self._detector.setInputSize((img.width, img.height))
        try:
            _, faces = self._detector.detect(bgr)
        except cv2.error as exc:
            raise BackendError(f"landmark model failed: {exc}") from exc
        if faces is None or len(faces) == 0:
            return None
        best = faces[np.argmax(faces[:, 14])]
        x, y, w, h = best[0:4]
        right_eye, left_eye = Point(best[4], best[5]), Point(best[6], best[7])
        # YuNet's "right eye" is the subject's right, i.e. the viewer's left.
        if right_eye.x > left_eye.x:
            left_eye, right_eye = right_eye, left_eye
        nose = Point(best[8], best[9])
        mouth_r, mouth_l = Point(best[10], best[11]), Point(best[12], best[13])
        if mouth_r.x < mouth_l.x:
            mouth_l, mouth_r = mouth_r, mouth_l
        eye_y = (left_eye.y + right_eye.y) / 2.0
        points = {
            "left_eye_center": left_eye,
            "right_eye_center": right_eye,
            "nose_tip": nose,
            "mouth_left": mouth_l,
            "mouth_right": mouth_r,
            "chin_bottom": Point((mouth_l.x + mouth_r.x) / 2.0, y + h),
            "left_brow_top": Point(left_eye.x, eye_y - 0.18 * h),
            "right_brow_top": Point(right_eye.x, eye_y - 0.18 * h),
            "face_left": Point(x, (left_eye.y + mouth_l.y) / 2.0),
            "face_right": Point(x + w, (right_eye.y + mouth_r.y) / 2.0),
        }
        clipped = {
            name: (min(max(p.x, 0.0), img.width - 1.0), min(max(p.y, 0.0), img.height - 1.0))
            for name, p in points.items()
        }
        return NamedLandmarks.from_mapping(clipped)


class OnnxEyeBackend:
    """Wraps an ONNX eye detector loaded through cv2.dnn.

    Artifact contract: input is a normalized (1,3,H,W) float blob of the
    full image; output is an (N,5) array of ``x y w h confidence`` rows in
    input-pixel units. Rows with confidence below ``threshold`` are
    dropped.
    """

    concurrent_safe = False

    def __init__(self, model_path: str | os.PathLike, threshold: float = 0.5):
        path = Path(model_path)
        if not path.exists():
            raise BackendError(f"eye model artifact not found: {path}")
        try:
            self._net = cv2.dnn.readNetFromONNX(str(path))
        except cv2.error as exc:
            raise BackendError(f"could not load eye model {path}: {exc}") from exc
        self.threshold = threshold

    def detect(self, img: ImageBuffer) -> list[EyeCandidate]:
        blob = img.pixels.astype(np.float32).transpose(2, 0, 1)[np.newaxis] / 255.0
        try:
            self._net.setInput(blob)
            out = np.asarray(self._net.forward())
        except cv2.error as exc:
            raise BackendError(f"eye model failed: {exc}") from exc
        out = out.reshape(-1, out.shape[-1])
        if out.shape[1] != 5:
            raise BackendError(f"eye model output must be (N,5), got {out.shape}")
        candidates = []
        for x, y, w, h, conf in out:
            if conf < self.threshold:
                continue
            candidates.append(EyeCandidate(Rect(int(round(x)), int(round(y)), int(round(w)), int(round(h))), float(conf)))
        return candidates


# ---------------------------------------------------------------------------
# Detection entry points
# ---------------------------------------------------------------------------


def detect_landmarks(backend: LandmarkBackend, img: ImageBuffer) -> NamedLandmarks | None:
    """Run a landmark backend and enforce the landmark invariants.

    Returns a complete landmark set or None (NotFound); a set violating
    the invariants (ordering, bounds) raises :class:`InvalidLandmarks`.
    """
    lm = backend.detect(img)
    if lm is None:
        return None
    if not lm.within(img):
        raise InvalidLandmarks(
            f"landmarks fall outside the {img.width}x{img.height} image: {lm.points()}"
        )
    return lm


def detect_single_eye(backend: EyeBackend, img: ImageBuffer) -> EyeBox | None:
    """Run the eye backend; keep the highest-confidence in-bounds candidate."""
    candidates = backend.detect(img)
    if not candidates:
        return None
    best = max(candidates, key=lambda c: c.confidence)
    r = best.rect
    if r.w < 1 or r.h < 1 or r.x < 0 or r.y < 0 or r.x2 > img.width or r.y2 > img.height:
        raise BackendError(f"eye candidate {r} outside {img.width}x{img.height} image")
    return EyeBox(r)


# ---------------------------------------------------------------------------
# Patch geometry
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PatchGeometry:
    """Patch-rect ratios, all in units of the inter-eye distance D.

    The landmark-path values place rects over the acne-dominant regions
    while avoiding eyes and lips; the eye-fallback values assume a profile
    view where only same-side skin is visible. ``min_area_fraction`` is
    the clipping survival rule: a patch is kept only when at least that
    fraction of its nominal area remains inside the image.
    """

    forehead_top: float = 0.9
    forehead_bottom: float = 0.1
    cheek_outer_margin: float = 0.05
    cheek_inner_margin: float = 0.1
    cheek_top: float = 0.4
    chin_top: float = 0.15
    min_area_fraction: float = 0.5
    # one-eye fallback
    eye_width_to_d: float = 2.2
    fb_brow_above_eye: float = 0.25
    fb_forehead_halfwidth: float = 0.6
    fb_cheek_top: float = 0.4
    fb_cheek_bottom: float = 1.6
    fb_cheek_outer: float = 0.55
    fb_cheek_inner: float = 0.15
    fb_chin_top: float = 2.1
    fb_chin_bottom: float = 2.8
    fb_chin_halfwidth: float = 0.45


DEFAULT_GEOMETRY = PatchGeometry()


def _to_rect(x0: float, y0: float, x1: float, y1: float) -> Rect:
    xi0, yi0 = int(round(x0)), int(round(y0))
    return Rect(xi0, yi0, int(round(x1)) - xi0, int(round(y1)) - yi0)


def _clip_and_keep(
    nominal: dict[PatchKind, Rect], img: ImageBuffer, geometry: PatchGeometry
) -> dict[PatchKind, Rect]:
    kept: dict[PatchKind, Rect] = {}
    for kind, rect in nominal.items():
        if rect.area <= 0:
            continue
        clipped = rect.intersect(img.bounds)
        if clipped.w < 1 or clipped.h < 1:
            continue
        if clipped.area >= geometry.min_area_fraction * rect.area:
            kept[kind] = clipped
    return kept


def _build_patches(
    rects: dict[PatchKind, Rect],
    img: ImageBuffer,
    via: ExtractionPath,
    label: SeverityLabel | None,
) -> list[SkinPatch]:
    order = (PatchKind.FOREHEAD, PatchKind.LEFT_CHEEK, PatchKind.RIGHT_CHEEK, PatchKind.CHIN)
    return [
        SkinPatch(kind, rects[kind], img.crop(rects[kind]), label=label, via=via)
        for kind in order
        if kind in rects
    ]


def patches_from_landmarks(
    lm: NamedLandmarks,
    img: ImageBuffer,
    geometry: PatchGeometry = DEFAULT_GEOMETRY,
    label: SeverityLabel | None = None,
) -> list[SkinPatch]:
    """Cut forehead/cheek/chin rects around the landmarks.

    Returns 2-4 patches depending on how much of the face is in frame;
    fewer than 2 viable patches raises :class:`GeometryError`.
    """
    d = lm.eye_distance
    if d <= 0:
        raise InvalidLandmarks("inter-eye distance must be positive")
    brow_y = min(lm.left_brow_top.y, lm.right_brow_top.y)
    nominal = {
        PatchKind.FOREHEAD: _to_rect(
            lm.left_brow_top.x,
            brow_y - geometry.forehead_top * d,
            lm.right_brow_top.x,
            brow_y - geometry.forehead_bottom * d,
        ),
        PatchKind.LEFT_CHEEK: _to_rect(
            lm.face_left.x + geometry.cheek_outer_margin * d,
            lm.left_eye_center.y + geometry.cheek_top * d,
            lm.left_eye_center.x - geometry.cheek_inner_margin * d,
            lm.mouth_left.y,
        ),
        PatchKind.RIGHT_CHEEK: _to_rect(
            lm.right_eye_center.x + geometry.cheek_inner_margin * d,
            lm.right_eye_center.y + geometry.cheek_top * d,
            lm.face_right.x - geometry.cheek_outer_margin * d,
            lm.mouth_right.y,
        ),
        PatchKind.CHIN: _to_rect(
            lm.mouth_left.x,
            max(lm.mouth_left.y, lm.mouth_right.y) + geometry.chin_top * d,
            lm.mouth_right.x,
            lm.chin_bottom.y,
        ),
    }
    kept = _clip_and_keep(nominal, img, geometry)
    if len(kept) < 2:
        raise GeometryError(
            f"insufficient skin area: only {len(kept)} viable patches from landmarks"
        )
    return _build_patches(kept, img, ExtractionPath.LANDMARKS, label)


def patches_from_eye(
    eye: EyeBox,
    img: ImageBuffer,
    geometry: PatchGeometry = DEFAULT_GEOMETRY,
    label: SeverityLabel | None = None,
) -> list[SkinPatch]:
    """Fallback geometry from a single detected eye (profile views).

    The eye is treated as left or right by which image half its center
    lies in; only same-side skin is assumed visible. Returns 2-3 patches.
    """
    r = eye.rect
    if r.w < 1 or r.h < 1:
        raise GeometryError(f"degenerate eye box {r}")
    if r.intersect(img.bounds) != r:
        raise GeometryError(f"eye box {r} not inside {img.width}x{img.height} image")
    d = geometry.eye_width_to_d * r.w
    ex, ey = r.x + r.w / 2.0, r.y + r.h / 2.0
    on_left_half = ex < img.width / 2.0
    brow_y = ey - geometry.fb_brow_above_eye * d
    nominal: dict[PatchKind, Rect] = {
        PatchKind.FOREHEAD: _to_rect(
            ex - geometry.fb_forehead_halfwidth * d,
            brow_y - geometry.forehead_top * d,
            ex + geometry.fb_forehead_halfwidth * d,
            brow_y - geometry.forehead_bottom * d,
        ),
        PatchKind.CHIN: _to_rect(
            ex - geometry.fb_chin_halfwidth * d,
            ey + geometry.fb_chin_top * d,
            ex + geometry.fb_chin_halfwidth * d,
            ey + geometry.fb_chin_bottom * d,
        ),
    }
    if on_left_half:
        nominal[PatchKind.LEFT_CHEEK] = _to_rect(
            ex - geometry.fb_cheek_outer * d,
            ey + geometry.fb_cheek_top * d,
            ex + geometry.fb_cheek_inner * d,
            ey + geometry.fb_cheek_bottom * d,
        )
    else:
        nominal[PatchKind.RIGHT_CHEEK] = _to_rect(
            ex - geometry.fb_cheek_inner * d,
            ey + geometry.fb_cheek_top * d,
            ex + geometry.fb_cheek_outer * d,
            ey + geometry.fb_cheek_bottom * d,
        )
    kept = _clip_and_keep(nominal, img, geometry)
    if len(kept) < 2:
        raise GeometryError(
            f"insufficient skin area: only {len(kept)} viable patches from eye fallback"
        )
    return _build_patches(kept, img, ExtractionPath.EYE, label)


def extract_patches(
    landmark_backend: LandmarkBackend,
    eye_backend: EyeBackend,
    img: ImageBuffer,
    geometry: PatchGeometry = DEFAULT_GEOMETRY,
    label: SeverityLabel | None = None,
) -> list[SkinPatch]:
    """The coupling method: landmark path first, one-eye fallback second.

    Raises :class:`NoFaceFound` when both detectors come up empty. Each
    returned patch carries the path that produced it in ``via``.
    """
    lm = detect_landmarks(landmark_backend, img)
    if lm is not None:
        return patches_from_landmarks(lm, img, geometry, label)
    eye = detect_single_eye(eye_backend, img)
    if eye is not None:
        return patches_from_eye(eye, img, geometry, label)
    raise NoFaceFound("neither the landmark model nor the one-eye fallback detected a face")


def resize_patch(img: ImageBuffer, side: int = 224) -> ImageBuffer:
    """Bilinear resize to the square side the embedding backend expects."""
    if side < 1:
        raise ValueError(f"side must be >= 1, got {side}")
    if img.width == side and img.height == side:
        return img
    return ImageBuffer(cv2.resize(img.pixels, (side, side), interpolation=cv2.INTER_LINEAR))


_OVERLAY_COLORS = {
    PatchKind.FOREHEAD: (66, 133, 244),
    PatchKind.LEFT_CHEEK: (52, 168, 83),
    PatchKind.RIGHT_CHEEK: (251, 188, 4),
    PatchKind.CHIN: (234, 67, 53),
}


def draw_patch_overlay(img: ImageBuffer, patches: Sequence[SkinPatch]) -> ImageBuffer:
    """Debug view: the source image with patch rects drawn on top."""
    canvas = img.pixels.copy()
    thickness = max(1, round(min(img.width, img.height) / 200))
    for patch in patches:
        r = patch.source_rect
        cv2.rectangle(canvas, (r.x, r.y), (r.x2 - 1, r.y2 - 1), _OVERLAY_COLORS[patch.kind], thickness)
    return ImageBuffer(canvas)
