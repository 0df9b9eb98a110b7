"""RMSE against panel consensus, panel statistics, and classifier views.

The headline metric is RMSE between a predictor's scores and the 11-rater
consensus mean over the golden set. Each dermatologist is scored the same
way (their own labels as predictions), which yields the panel's worst and
median RMSE, the bars a model is compared against. For the classifier
view, both predictions and the fractional consensus are discretized with
the same [1.5, 2.5, 3.5, 4.5] boundaries before building the confusion
matrix.
"""

from __future__ import annotations

import math
import statistics
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Mapping, Sequence

import numpy as np

from .core import SeverityLabel
from .dataset import GoldenRecord
from .errors import (
    EmptyInput,
    EvaluationError,
    GeometryError,
    NoFaceFound,
    PanelError,
    ShapeError,
    UndefinedCorrelation,
)
from .model import ImageScore, discretize

N_CLASSES = 5


def rmse_vs_consensus(preds: Sequence[float], consensus: Sequence[float]) -> float:
    """sqrt(sum((y - ybar)^2) / N) in double precision."""
    if len(preds) != len(consensus):
        raise ShapeError(f"{len(preds)} predictions vs {len(consensus)} consensus values")
    if len(preds) == 0:
        raise EmptyInput("RMSE over zero images is undefined")
    p = np.asarray(preds, dtype=np.float64)
    c = np.asarray(consensus, dtype=np.float64)
    return float(np.sqrt(np.mean((p - c) ** 2)))


def baseline_rmse(consensus: Sequence[float]) -> float:
    """RMSE of the constant global-mean predictor.

    Definitionally the population standard deviation of the consensus
    values; computed here as the RMSE it is, for symmetry with the model.
    """
    if len(consensus) == 0:
        raise EmptyInput("baseline over zero images is undefined")
    c = np.asarray(consensus, dtype=np.float64)
    return rmse_vs_consensus([float(c.mean())] * len(consensus), consensus)


@dataclass(frozen=True)
class PanelReport:
    """Per-rater RMSE with the summary statistics the model is held to."""

    per_rater_rmse: dict[str, float]
    worst: float
    median: float
    model_rmse: float | None = None

    @classmethod
    def from_per_rater(
        cls, per_rater_rmse: Mapping[str, float], model_rmse: float | None = None
    ) -> "PanelReport":
        if not per_rater_rmse:
            raise EmptyInput("panel statistics need at least one rater")
        values = list(per_rater_rmse.values())
        return cls(
            per_rater_rmse=dict(per_rater_rmse),
            worst=max(values),
            median=statistics.median(values),
            model_rmse=model_rmse,
        )

    def model_beats_median(self) -> bool | None:
        if self.model_rmse is None:
            return None
        return self.model_rmse < self.median


def panel_report(
    golden: Sequence[GoldenRecord], model_preds: Sequence[float] | None = None
) -> PanelReport:
    """Score every rater against the consensus; optionally insert the model.

    Every record must carry the same rater set, otherwise the per-rater
    series would be incomparable.
    """
    if len(golden) == 0:
        raise EmptyInput("panel report needs at least one golden record")
    rater_ids = sorted(golden[0].labels)
    for rec in golden:
        if sorted(rec.labels) != rater_ids:
            raise PanelError(
                f"record {rec.image_id!r} has raters {sorted(rec.labels)}, expected {rater_ids}"
            )
    consensus = [rec.consensus for rec in golden]
    per_rater = {
        rater: rmse_vs_consensus([float(rec.labels[rater]) for rec in golden], consensus)
        for rater in rater_ids
    }
    model_rmse = None
    if model_preds is not None:
        model_rmse = rmse_vs_consensus(model_preds, consensus)
    return PanelReport.from_per_rater(per_rater, model_rmse)


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """5x5 counts; rows are predicted severity, columns are true severity."""

    counts: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.counts, dtype=np.int64)
        if arr.shape != (N_CLASSES, N_CLASSES):
            raise ShapeError(f"confusion matrix must be 5x5, got {arr.shape}")
        if (arr < 0).any():
            raise ValueError("confusion counts must be non-negative")
        arr.setflags(write=False)
        object.__setattr__(self, "counts", arr)

    def __getitem__(self, key: tuple[SeverityLabel | int, SeverityLabel | int]) -> int:
        pred, true = key
        return int(self.counts[int(pred) - 1, int(true) - 1])

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def row_totals(self) -> list[int]:
        return [int(v) for v in self.counts.sum(axis=1)]

    def column_totals(self) -> list[int]:
        return [int(v) for v in self.counts.sum(axis=0)]

    def to_lists(self) -> list[list[int]]:
        return [[int(v) for v in row] for row in self.counts]


def confusion(
    preds: Sequence[SeverityLabel], truths: Sequence[SeverityLabel]
) -> ConfusionMatrix:
    if len(preds) != len(truths):
        raise ShapeError(f"{len(preds)} predictions vs {len(truths)} truths")
    counts = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    for p, t in zip(preds, truths):
        counts[int(p) - 1, int(t) - 1] += 1
    return ConfusionMatrix(counts)


def recall_per_class(m: ConfusionMatrix) -> list[Fraction | None]:
    """Diagonal over column totals, exact; None marks 0/0 (no such truths)."""
    out: list[Fraction | None] = []
    col_totals = m.column_totals()
    for c in range(N_CLASSES):
        if col_totals[c] == 0:
            out.append(None)
        else:
            out.append(Fraction(int(m.counts[c, c]), col_totals[c]))
    return out


def pearson(preds: Sequence[float], truths: Sequence[float]) -> float:
    """Sample Pearson correlation; constant inputs are undefined."""
    if len(preds) != len(truths):
        raise ShapeError(f"{len(preds)} predictions vs {len(truths)} truths")
    if len(preds) < 2:
        raise EmptyInput("correlation needs at least two points")
    p = np.asarray(preds, dtype=np.float64)
    t = np.asarray(truths, dtype=np.float64)
    dp, dt = p - p.mean(), t - t.mean()
    denom = math.sqrt(float(dp @ dp) * float(dt @ dt))
    if denom == 0.0:
        raise UndefinedCorrelation("at least one input series is constant")
    r = float(dp @ dt) / denom
    return max(-1.0, min(1.0, r))


@dataclass(frozen=True)
class EvaluationSummary:
    model_rmse: float
    baseline_rmse: float
    panel: PanelReport
    confusion: ConfusionMatrix
    recall: list[Fraction | None]
    pearson: float | None
    failed_images: list[str]
    n_evaluated: int

    def to_json_dict(self) -> dict:
        return {
            "model_rmse": self.model_rmse,
            "baseline_rmse": self.baseline_rmse,
            "per_rater_rmse": dict(self.panel.per_rater_rmse),
            "worst": self.panel.worst,
            "median": self.panel.median,
            "confusion": self.confusion.to_lists(),
            "recall": [None if r is None else float(r) for r in self.recall],
            "pearson": self.pearson,
            "failed_images": list(self.failed_images),
            "n_evaluated": self.n_evaluated,
        }


def evaluate_model(
    golden: Sequence[GoldenRecord],
    score_fn: Callable[[GoldenRecord], ImageScore],
) -> EvaluationSummary:
    """Score each golden record and aggregate every metric.

    Records whose extraction fails (no face, insufficient skin area) are
    excluded from the metrics and listed in ``failed_images``; backend
    faults propagate. Correlation is None when the surviving set leaves
    it undefined.
    """
    if len(golden) == 0:
        raise EmptyInput("evaluation needs at least one golden record")
    scored: list[tuple[GoldenRecord, ImageScore]] = []
    failed: list[str] = []
    for rec in golden:
        try:
            scored.append((rec, score_fn(rec)))
        except (NoFaceFound, GeometryError):
            failed.append(rec.image_id)
    if not scored:
        raise EvaluationError(f"all {len(golden)} golden images failed extraction")
    survivors = [rec for rec, _ in scored]
    finals = [s.final for _, s in scored]
    consensus = [rec.consensus for rec in survivors]
    report = panel_report(survivors, finals)
    matrix = confusion([s.label for _, s in scored], [discretize(c) for c in consensus])
    try:
        corr = pearson(finals, consensus) if len(finals) >= 2 else None
    except UndefinedCorrelation:
        corr = None
    return EvaluationSummary(
        model_rmse=report.model_rmse,
        baseline_rmse=baseline_rmse(consensus),
        panel=report,
        confusion=matrix,
        recall=recall_per_class(matrix),
        pearson=corr,
        failed_images=failed,
        n_evaluated=len(scored),
    )


def format_panel_table(report: PanelReport) -> str:
    """Human-readable panel table with the model row inserted when present."""
    rows = sorted(report.per_rater_rmse.items(), key=lambda kv: -kv[1])
    width = max([len(r) for r, _ in rows] + [len("median"), len("model")])
    lines = [f"{'rater':<{width}}  rmse", f"{'-' * width}  ----"]
    for rater, value in rows:
        lines.append(f"{rater:<{width}}  {value:.3f}")
    lines.append(f"{'-' * width}  ----")
    lines.append(f"{'worst':<{width}}  {report.worst:.3f}")
    lines.append(f"{'median':<{width}}  {report.median:.3f}")
    if report.model_rmse is not None:
        verdict = "beats median" if report.model_beats_median() else "does not beat median"
        lines.append(f"{'model':<{width}}  {report.model_rmse:.3f}  ({verdict})")
    return "\n".join(lines)
