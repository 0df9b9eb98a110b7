"""Rolling augmentation: circular pixel shifts that rebalance the classes.

A patch rolled by s along its axis keeps its exact pixel multiset while
every lesion lands somewhere new, which is the point: a model trained on
rolled copies sees acne at positions the raw data never covered.

Per-kind directions: forehead patches roll right-to-left (horizontal);
cheek and chin patches roll bottom-to-top (vertical). The step size for
N rolls of a patch with X pixels along the roll axis is ``X // (N + 1)``,
and copy k is shifted by ``k * step`` so the N+1 variants (original
included) are evenly spaced over the extent.

Applied to training patches only, at native patch resolution, before any
resizing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Sequence

import numpy as np

from .core import ImageBuffer, PatchKind, SeverityLabel
from .dataset import ClassHistogram
from .errors import EmptyDataset, MissingLabel, RollSpecError
from .face_patches import SkinPatch


class RollAxis(Enum):
    HORIZONTAL = "horizontal"
    VERTICAL = "vertical"


@dataclass(frozen=True)
class RollSpec:
    axis: RollAxis
    roll_size: int

    def __post_init__(self):
        if self.roll_size < 0:
            raise RollSpecError(f"roll_size must be >= 0, got {self.roll_size}")


@dataclass(frozen=True)
class AugmentationPlan:
    """Roll counts per class, capped at ``cap`` rolls."""

    rolls_per_class: dict[SeverityLabel, int]
    cap: int

    def __post_init__(self):
        full = {label: int(self.rolls_per_class.get(label, 0)) for label in SeverityLabel}
        for label, n in full.items():
            if n < 0 or n > self.cap:
                raise ValueError(f"roll count {n} for class {label} outside [0, {self.cap}]")
        object.__setattr__(self, "rolls_per_class", full)

    def __getitem__(self, label: SeverityLabel) -> int:
        return self.rolls_per_class[label]


def roll_size(x: int, n: int) -> int:
    """Step size for n rolls over an extent of x pixels: int(x / (n+1))."""
    if x < 1:
        raise RollSpecError(f"extent must be >= 1, got {x}")
    if n < 0:
        raise RollSpecError(f"roll count must be >= 0, got {n}")
    return x // (n + 1)


def roll_direction_for(kind: PatchKind) -> RollAxis:
    return RollAxis.HORIZONTAL if kind is PatchKind.FOREHEAD else RollAxis.VERTICAL


def roll_patch(patch: ImageBuffer, spec: RollSpec) -> ImageBuffer:
    """Circular shift: output column j = input column (j + roll_size) mod w.

    Horizontal rolls move content right-to-left; vertical rolls move it
    bottom-to-top. The pixel multiset is preserved exactly.
    """
    extent = patch.width if spec.axis is RollAxis.HORIZONTAL else patch.height
    if spec.roll_size >= extent:
        raise RollSpecError(f"roll_size {spec.roll_size} must be < extent {extent}")
    if spec.roll_size == 0:
        return patch
    axis = 1 if spec.axis is RollAxis.HORIZONTAL else 0
    return ImageBuffer(np.roll(patch.pixels, -spec.roll_size, axis=axis))


def balance_plan(hist: ClassHistogram, n_mild: int = 2, n_max: int = 10) -> AugmentationPlan:
    """Choose per-class roll counts that bring patch counts near a target.

    The mild class (3) is rolled exactly ``n_mild`` times; with class 3
    modal (the usual situation) that fixes the target T = (n_mild+1) x
    count(3), and every other class rolls min(n_max, ceil(T/count)-1)
    times. When class 3 is not modal the target anchors on the modal
    count instead, so no class overshoots it. Classes with zero count are
    left alone.
    """
    if n_mild < 0 or n_max < 0 or n_mild > n_max:
        raise ValueError(f"require 0 <= n_mild <= n_max, got n_mild={n_mild} n_max={n_max}")
    if hist.total == 0:
        raise EmptyDataset("cannot plan augmentation over an all-zero histogram")
    modal = hist.modal_count()
    mild_count = hist[SeverityLabel.MILD]
    anchor = mild_count if mild_count == modal else modal
    target = (n_mild + 1) * anchor
    rolls: dict[SeverityLabel, int] = {}
    for label in SeverityLabel:
        count = hist[label]
        if count == 0:
            rolls[label] = 0
        elif label is SeverityLabel.MILD:
            rolls[label] = n_mild
        else:
            rolls[label] = min(n_max, max(0, math.ceil(target / count) - 1))
    return AugmentationPlan(rolls, cap=max(n_max, n_mild))


def _patch_variants(patch: SkinPatch, n: int) -> list[SkinPatch]:
    axis = roll_direction_for(patch.kind)
    extent = patch.pixels.width if axis is RollAxis.HORIZONTAL else patch.pixels.height
    step = roll_size(extent, n)
    out = [patch]
    for k in range(1, n + 1):
        shift = k * step
        rolled = roll_patch(patch.pixels, RollSpec(axis, shift))
        out.append(replace(patch, pixels=rolled, shift=shift))
    return out


def augment_patch_set(patches: Sequence[SkinPatch], plan: AugmentationPlan) -> list[SkinPatch]:
    """Original plus N rolled copies per patch, N taken from the plan.

    Copy k is shifted by k * roll_size along the patch kind's direction;
    copies inherit kind and label. Output order is input order, then k
    ascending, so the result is deterministic regardless of how callers
    parallelize upstream work.
    """
    out: list[SkinPatch] = []
    for patch in patches:
        if patch.label is None:
            raise MissingLabel(f"patch {patch.kind} has no label; augmentation needs one")
        out.extend(_patch_variants(patch, plan[patch.label]))
    return out
