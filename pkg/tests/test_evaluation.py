import math
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from acnescore.core import Rect, SeverityLabel
from acnescore.dataset import GoldenRecord
from acnescore.errors import (
    EmptyInput,
    EvaluationError,
    NoFaceFound,
    PanelError,
    ShapeError,
    UndefinedCorrelation,
)
from acnescore.evaluation import (
    ConfusionMatrix,
    PanelReport,
    baseline_rmse,
    confusion,
    evaluate_model,
    format_panel_table,
    panel_report,
    pearson,
    recall_per_class,
    rmse_vs_consensus,
)
from acnescore.model import ImageScore, PatchScore, discretize

# Verbatim published confusion matrix: rows = predicted, columns = true.
FIG5_MATRIX = [
    [0, 0, 0, 0, 0],
    [1, 12, 22, 0, 0],
    [1, 25, 106, 35, 3],
    [0, 0, 1, 13, 8],
    [0, 0, 0, 1, 2],
]

# Published per-dermatologist RMSE values.
TABLE1_RMSE = {
    "1": 0.517, "2": 0.508, "3": 0.500, "4": 0.495, "5": 0.490, "6": 0.484,
    "7": 0.454, "8": 0.450, "9": 0.402, "10": 0.400, "11": 0.388,
}


def golden_from_matrix(label_matrix) -> list[GoldenRecord]:
    """Build records from a (n_images, 11) integer label matrix."""
    records = []
    for i, row in enumerate(label_matrix):
        labels = {f"r{j}": SeverityLabel(v) for j, v in enumerate(row)}
        records.append(GoldenRecord.from_labels(f"img{i}", Path(f"img{i}.png"), labels))
    return records


class TestRmse:
    def test_zero_when_equal(self):
        assert rmse_vs_consensus([3.0, 4.0], [3.0, 4.0]) == 0.0

    def test_constant_offset(self):
        assert rmse_vs_consensus([3.5, 4.5], [3.0, 4.0]) == pytest.approx(0.5)

    def test_hand_computed(self):
        assert rmse_vs_consensus([3.0, 5.0], [3.0, 4.0]) == pytest.approx(math.sqrt(0.5))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            rmse_vs_consensus([1.0], [1.0, 2.0])

    def test_empty(self):
        with pytest.raises(EmptyInput):
            rmse_vs_consensus([], [])

    @given(
        st.lists(
            st.tuples(
                st.floats(min_value=1, max_value=5), st.floats(min_value=1, max_value=5)
            ),
            min_size=1,
            max_size=50,
        )
    )
    def test_matches_directly_summed_oracle(self, pairs):
        preds = [p for p, _ in pairs]
        cons = [c for _, c in pairs]
        oracle = math.sqrt(sum((p - c) ** 2 for p, c in pairs) / len(pairs))
        assert rmse_vs_consensus(preds, cons) == pytest.approx(oracle, abs=1e-12)


class TestBaseline:
    def test_constant_consensus(self):
        assert baseline_rmse([3.0, 3.0, 3.0]) == 0.0

    def test_symmetric_pair(self):
        assert baseline_rmse([2.0, 4.0]) == pytest.approx(1.0)

    def test_definitional_identity(self):
        cons = [1.5, 2.25, 3.0, 4.75]
        mean = sum(cons) / len(cons)
        assert baseline_rmse(cons) == rmse_vs_consensus([mean] * len(cons), cons)

    def test_empty(self):
        with pytest.raises(EmptyInput):
            baseline_rmse([])

    @given(st.lists(st.floats(min_value=1, max_value=5), min_size=1, max_size=40))
    def test_equals_population_std(self, cons):
        assert baseline_rmse(cons) == pytest.approx(float(np.std(cons)), abs=1e-12)


class TestPanelReport:
    def test_rater_matching_consensus_scores_zero(self):
        # all raters agree -> consensus equals each rater's labels
        records = golden_from_matrix([[3] * 11, [4] * 11])
        report = panel_report(records)
        assert all(v == 0.0 for v in report.per_rater_rmse.values())

    def test_table1_statistics(self):
        report = PanelReport.from_per_rater(TABLE1_RMSE)
        assert report.worst == 0.517
        assert report.median == 0.484

    def test_model_beats_median(self):
        report = PanelReport.from_per_rater(TABLE1_RMSE, model_rmse=0.482)
        assert report.model_beats_median() is True
        assert (0.482 < report.median) is True

    def test_inconsistent_rater_sets(self):
        records = golden_from_matrix([[3] * 11])
        other = GoldenRecord.from_labels(
            "odd", Path("odd.png"), {f"q{j}": SeverityLabel(3) for j in range(11)}
        )
        with pytest.raises(PanelError):
            panel_report(records + [other])

    def test_brute_force_oracle(self):
        rng = np.random.default_rng(0)
        matrix = rng.integers(1, 6, size=(20, 11))
        records = golden_from_matrix(matrix)
        report = panel_report(records)
        consensus = [row.mean() for row in matrix.astype(float)]
        for j in range(11):
            expected = math.sqrt(
                sum((matrix[k, j] - consensus[k]) ** 2 for k in range(20)) / 20
            )
            assert report.per_rater_rmse[f"r{j}"] == pytest.approx(expected, abs=1e-12)

    def test_format_table_contains_model_row(self):
        text = format_panel_table(PanelReport.from_per_rater(TABLE1_RMSE, model_rmse=0.482))
        assert "median" in text and "model" in text and "0.482" in text


class TestConfusion:
    def test_perfect_diagonal(self):
        labels = [SeverityLabel(v) for v in (1, 2, 3, 4, 5, 3)]
        m = confusion(labels, labels)
        assert m.total == 6
        assert np.array_equal(np.diag(m.counts), np.array([1, 1, 2, 1, 1]))

    def test_fig5_total_is_golden_set_size(self):
        m = ConfusionMatrix(np.array(FIG5_MATRIX))
        assert m.total == 230

    def test_empty_input(self):
        m = confusion([], [])
        assert m.total == 0

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            confusion([SeverityLabel(1)], [])

    @given(
        st.lists(
            st.tuples(st.integers(1, 5), st.integers(1, 5)), min_size=0, max_size=60
        )
    )
    def test_totals_reconcile_with_histograms(self, pairs):
        preds = [SeverityLabel(p) for p, _ in pairs]
        truths = [SeverityLabel(t) for _, t in pairs]
        m = confusion(preds, truths)
        assert m.row_totals() == [sum(1 for p in preds if int(p) == c) for c in range(1, 6)]
        assert m.column_totals() == [sum(1 for t in truths if int(t) == c) for c in range(1, 6)]


class TestRecall:
    def test_fig5_mild_recall(self):
        recalls = recall_per_class(ConfusionMatrix(np.array(FIG5_MATRIX)))
        assert recalls[2] == Fraction(106, 129)
        assert float(recalls[2]) == pytest.approx(0.8217, abs=5e-5)

    def test_fig5_clear_recall(self):
        recalls = recall_per_class(ConfusionMatrix(np.array(FIG5_MATRIX)))
        assert recalls[0] == Fraction(0, 2)
        assert recalls[0] == 0

    def test_identity_matrix(self):
        recalls = recall_per_class(ConfusionMatrix(np.eye(5, dtype=int)))
        assert all(r == 1 for r in recalls)

    def test_zero_column_is_undefined_not_zero(self):
        m = np.zeros((5, 5), dtype=int)
        m[0, 0] = 3
        recalls = recall_per_class(ConfusionMatrix(m))
        assert recalls[0] == 1
        assert recalls[1] is None


class TestPearson:
    def test_identity(self):
        assert pearson([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]) == pytest.approx(1.0)

    def test_negation(self):
        assert pearson([1.0, 2.0, 3.0], [-1.0, -2.0, -3.0]) == pytest.approx(-1.0)

    def test_affine(self):
        truths = [1.0, 2.5, 4.0, 3.0]
        preds = [2 * t + 1 for t in truths]
        assert pearson(preds, truths) == pytest.approx(1.0)

    def test_constant_undefined(self):
        with pytest.raises(UndefinedCorrelation):
            pearson([3.0, 3.0, 3.0], [1.0, 2.0, 3.0])

    def test_too_short(self):
        with pytest.raises(EmptyInput):
            pearson([1.0], [1.0])

    @given(
        st.lists(st.floats(min_value=-100, max_value=100), min_size=3, max_size=30),
        st.floats(min_value=0.1, max_value=10),
        st.floats(min_value=-5, max_value=5),
    )
    def test_positive_affine_invariance(self, values, scale, shift):
        other = list(range(len(values)))
        if max(values) == min(values):
            return
        base = pearson(values, other)
        transformed = pearson([scale * v + shift for v in values], other)
        assert transformed == pytest.approx(base, abs=1e-9)


def fake_score(final: float) -> ImageScore:
    return ImageScore(None, [PatchScore(None, Rect(0, 0, 1, 1), final, final)], final, discretize(final))


class TestEvaluateModel:
    def test_exact_consensus_scorer(self):
        rng = np.random.default_rng(1)
        records = golden_from_matrix(rng.integers(1, 6, size=(12, 11)))
        summary = evaluate_model(records, lambda rec: fake_score(rec.consensus))
        assert summary.model_rmse == 0.0
        assert summary.n_evaluated == 12
        offdiag = summary.confusion.counts - np.diag(np.diag(summary.confusion.counts))
        assert offdiag.sum() == 0

    def test_global_mean_scorer_matches_baseline(self):
        rng = np.random.default_rng(2)
        records = golden_from_matrix(rng.integers(1, 6, size=(15, 11)))
        mean = sum(r.consensus for r in records) / len(records)
        summary = evaluate_model(records, lambda rec: fake_score(mean))
        assert summary.model_rmse == pytest.approx(summary.baseline_rmse, abs=1e-12)

    def test_failed_extractions_excluded_and_reported(self):
        rng = np.random.default_rng(3)
        records = golden_from_matrix(rng.integers(1, 6, size=(10, 11)))
        failing = {records[1].image_id, records[7].image_id}

        def scorer(rec):
            if rec.image_id in failing:
                raise NoFaceFound("fixture")
            return fake_score(rec.consensus)

        summary = evaluate_model(records, scorer)
        assert summary.n_evaluated == 8
        assert sorted(summary.failed_images) == sorted(failing)
        assert summary.confusion.total == 8

    def test_all_fail_is_error(self):
        records = golden_from_matrix([[3] * 11])

        def scorer(rec):
            raise NoFaceFound("fixture")

        with pytest.raises(EvaluationError):
            evaluate_model(records, scorer)

    def test_json_dict_is_serializable(self):
        import json

        rng = np.random.default_rng(4)
        records = golden_from_matrix(rng.integers(1, 6, size=(8, 11)))
        summary = evaluate_model(records, lambda rec: fake_score(rec.consensus))
        blob = json.dumps(summary.to_json_dict())
        assert "model_rmse" in blob and "confusion" in blob
