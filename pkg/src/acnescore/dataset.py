"""Labeled-image ingestion, quality filtering, and golden-set building.

Two CSV formats are consumed here:

* training manifest (header required): ``image_id,path,rater_id,label``,
  one rater per training image;
* golden CSV: ``image_id,path,label_1,...,label_11`` with the rater order
  fixed by column; the consensus is the mean of the 11 labels.

Rows whose label is 0 ("not acne") or outside 1..5 are not errors: they
come back in a rejected list with a reason, and the caller decides what
to log. Structurally broken rows raise :class:`ManifestError`.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

from .config import QualityConfig
from .core import ImageBuffer, SeverityLabel, mean_luma
from .errors import GoldenFormatError, ManifestError, PanelError

PANEL_SIZE = 11

MANIFEST_COLUMNS = ("image_id", "path", "rater_id", "label")


@dataclass(frozen=True)
class LabeledImage:
    image_id: str
    path: Path
    rater_id: str
    label: SeverityLabel


class RejectReason(Enum):
    EXCLUDED_CLASS = "excluded_class"  # label 0 is out of the modeling domain
    OUT_OF_RANGE = "out_of_range"


@dataclass(frozen=True)
class RejectedRow:
    line: int
    image_id: str
    raw_label: int
    reason: RejectReason


@dataclass(frozen=True)
class ManifestResult:
    accepted: list[LabeledImage]
    rejected: list[RejectedRow]

    @property
    def total(self) -> int:
        return len(self.accepted) + len(self.rejected)


class QualityReason(Enum):
    OK = "ok"
    UNDEREXPOSED = "underexposed"
    OVEREXPOSED = "overexposed"
    LOW_RESOLUTION = "low_resolution"


@dataclass(frozen=True)
class QualityVerdict:
    keep: bool
    reason: QualityReason

    def __post_init__(self):
        if self.keep != (self.reason is QualityReason.OK):
            raise ValueError(f"keep={self.keep} inconsistent with reason={self.reason}")

    @classmethod
    def ok(cls) -> "QualityVerdict":
        return cls(True, QualityReason.OK)

    @classmethod
    def discard(cls, reason: QualityReason) -> "QualityVerdict":
        return cls(False, reason)


@dataclass(frozen=True)
class ClassHistogram:
    """Per-class counts over the five severity labels."""

    counts: dict[SeverityLabel, int] = field(
        default_factory=lambda: {label: 0 for label in SeverityLabel}
    )

    def __post_init__(self):
        full = {label: int(self.counts.get(label, 0)) for label in SeverityLabel}
        if any(v < 0 for v in full.values()):
            raise ValueError(f"negative count in {full}")
        object.__setattr__(self, "counts", full)

    def __getitem__(self, label: SeverityLabel) -> int:
        return self.counts[label]

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def modal_count(self) -> int:
        return max(self.counts.values())


@dataclass(frozen=True)
class GoldenRecord:
    """A test image with its full panel of labels and their consensus mean."""

    image_id: str
    path: Path
    labels: dict[str, SeverityLabel]
    consensus: float

    def __post_init__(self):
        if len(self.labels) != PANEL_SIZE:
            raise PanelError(
                f"golden record {self.image_id!r} has {len(self.labels)} labels, need {PANEL_SIZE}"
            )

    @classmethod
    def from_labels(cls, image_id: str, path: Path, labels: dict[str, SeverityLabel]) -> "GoldenRecord":
        consensus = sum(float(v) for v in labels.values()) / len(labels)
        return cls(image_id=image_id, path=path, labels=dict(labels), consensus=consensus)


def load_manifest(path: str | os.PathLike) -> ManifestResult:
    """Read a training manifest; label-domain violations go to ``rejected``."""
    accepted: list[LabeledImage] = []
    rejected: list[RejectedRow] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != MANIFEST_COLUMNS:
            raise ManifestError(1, f"expected header {','.join(MANIFEST_COLUMNS)}, got {header}")
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(MANIFEST_COLUMNS):
                raise ManifestError(line, f"expected {len(MANIFEST_COLUMNS)} fields, got {len(row)}")
            image_id, img_path, rater_id, raw_label = (cell.strip() for cell in row)
            if not image_id or not img_path or not rater_id:
                raise ManifestError(line, "empty image_id, path, or rater_id")
            try:
                value = int(raw_label)
            except ValueError:
                raise ManifestError(line, f"label {raw_label!r} is not an integer") from None
            if value == 0:
                rejected.append(RejectedRow(line, image_id, value, RejectReason.EXCLUDED_CLASS))
            elif not 1 <= value <= 5:
                rejected.append(RejectedRow(line, image_id, value, RejectReason.OUT_OF_RANGE))
            else:
                accepted.append(LabeledImage(image_id, Path(img_path), rater_id, SeverityLabel(value)))
    return ManifestResult(accepted, rejected)


def quality_filter(img: ImageBuffer, cfg: QualityConfig | None = None) -> QualityVerdict:
    """Exposure and resolution gate applied to training images.

    Depends only on pixel statistics and dimensions, so it is deterministic
    and safe to run over many images in parallel.
    """
    cfg = cfg or QualityConfig()
    lum = mean_luma(img)
    if lum < cfg.luma_lo:
        return QualityVerdict.discard(QualityReason.UNDEREXPOSED)
    if lum > cfg.luma_hi:
        return QualityVerdict.discard(QualityReason.OVEREXPOSED)
    if min(img.width, img.height) < cfg.min_side:
        return QualityVerdict.discard(QualityReason.LOW_RESOLUTION)
    return QualityVerdict.ok()


def class_distribution(labels: Iterable[SeverityLabel]) -> ClassHistogram:
    counts = {label: 0 for label in SeverityLabel}
    for label in labels:
        counts[SeverityLabel(label)] += 1
    return ClassHistogram(counts)


def build_golden(path: str | os.PathLike) -> list[GoldenRecord]:
    """Read the golden CSV; every row must carry exactly 11 labels."""
    records: list[GoldenRecord] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or len(header) < 3:
            raise GoldenFormatError(f"golden header missing or too short: {header}")
        header = [h.strip() for h in header]
        if header[0] != "image_id" or header[1] != "path":
            raise GoldenFormatError(f"golden header must start with image_id,path, got {header[:2]}")
        rater_ids = header[2:]
        if len(rater_ids) != PANEL_SIZE:
            raise GoldenFormatError(f"expected {PANEL_SIZE} label columns, got {len(rater_ids)}")
        if len(set(rater_ids)) != PANEL_SIZE:
            raise GoldenFormatError(f"duplicate rater columns in {rater_ids}")
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2 + PANEL_SIZE:
                raise GoldenFormatError(
                    f"line {line}: expected {2 + PANEL_SIZE} fields, got {len(row)}"
                )
            image_id, img_path = row[0].strip(), row[1].strip()
            labels: dict[str, SeverityLabel] = {}
            for rater_id, cell in zip(rater_ids, row[2:]):
                try:
                    labels[rater_id] = SeverityLabel(int(cell))
                except ValueError:
                    raise GoldenFormatError(
                        f"line {line}: label {cell!r} for rater {rater_id!r} not in 1..5"
                    ) from None
            records.append(GoldenRecord.from_labels(image_id, Path(img_path), labels))
    return records
