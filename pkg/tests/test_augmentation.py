import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from acnescore.augmentation import (
    AugmentationPlan,
    RollAxis,
    RollSpec,
    augment_patch_set,
    balance_plan,
    roll_direction_for,
    roll_patch,
    roll_size,
)
from acnescore.core import ImageBuffer, PatchKind, Rect, SeverityLabel
from acnescore.dataset import ClassHistogram
from acnescore.errors import EmptyDataset, MissingLabel, RollSpecError
from acnescore.face_patches import SkinPatch


def image_from_array(arr) -> ImageBuffer:
    return ImageBuffer(np.asarray(arr, dtype=np.uint8))


def random_image(rng, w, h) -> ImageBuffer:
    return ImageBuffer(rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8))


def labeled_patch(img: ImageBuffer, kind=PatchKind.FOREHEAD, label=SeverityLabel.MILD) -> SkinPatch:
    return SkinPatch(kind, Rect(0, 0, img.width, img.height), img, label=label)


class TestRollSize:
    @pytest.mark.parametrize("x,n,expected", [(300, 2, 100), (224, 3, 56), (7, 2, 2)])
    def test_examples(self, x, n, expected):
        assert roll_size(x, n) == expected

    def test_domain(self):
        with pytest.raises(RollSpecError):
            roll_size(0, 2)
        with pytest.raises(RollSpecError):
            roll_size(10, -1)

    @given(x=st.integers(min_value=1, max_value=10_000), n=st.integers(min_value=0, max_value=1000))
    def test_matches_floor_division(self, x, n):
        assert roll_size(x, n) == x // (n + 1)


class TestRollDirection:
    def test_table(self):
        assert roll_direction_for(PatchKind.FOREHEAD) is RollAxis.HORIZONTAL
        assert roll_direction_for(PatchKind.CHIN) is RollAxis.VERTICAL
        assert roll_direction_for(PatchKind.LEFT_CHEEK) is RollAxis.VERTICAL
        assert roll_direction_for(PatchKind.RIGHT_CHEEK) is RollAxis.VERTICAL


class TestRollPatch:
    def test_row_shift_semantics(self):
        # one row, four pixels a,b,c,d -> b,c,d,a after a shift of 1
        a, b, c, d = (10, 0, 0), (20, 0, 0), (30, 0, 0), (40, 0, 0)
        img = image_from_array([[a, b, c, d]])
        rolled = roll_patch(img, RollSpec(RollAxis.HORIZONTAL, 1))
        assert np.array_equal(rolled.pixels, np.asarray([[b, c, d, a]], dtype=np.uint8))

    def test_vertical_moves_bottom_to_top(self):
        a, b, c = (1, 1, 1), (2, 2, 2), (3, 3, 3)
        img = image_from_array([[a], [b], [c]])
        rolled = roll_patch(img, RollSpec(RollAxis.VERTICAL, 1))
        assert np.array_equal(rolled.pixels, np.asarray([[b], [c], [a]], dtype=np.uint8))

    def test_zero_shift_identity(self):
        rng = np.random.default_rng(0)
        img = random_image(rng, 9, 5)
        assert np.array_equal(roll_patch(img, RollSpec(RollAxis.HORIZONTAL, 0)).pixels, img.pixels)

    def test_inverse_composition(self):
        rng = np.random.default_rng(1)
        img = random_image(rng, 12, 6)
        once = roll_patch(img, RollSpec(RollAxis.HORIZONTAL, 5))
        back = roll_patch(once, RollSpec(RollAxis.HORIZONTAL, 12 - 5))
        assert np.array_equal(back.pixels, img.pixels)

    def test_shift_at_or_past_extent_rejected(self):
        img = random_image(np.random.default_rng(2), 8, 8)
        with pytest.raises(RollSpecError):
            roll_patch(img, RollSpec(RollAxis.HORIZONTAL, 8))

    @settings(max_examples=40)
    @given(
        seed=st.integers(min_value=0, max_value=2**31),
        w=st.integers(min_value=1, max_value=24),
        h=st.integers(min_value=1, max_value=24),
        data=st.data(),
    )
    def test_multiset_preserved_and_composition(self, seed, w, h, data):
        rng = np.random.default_rng(seed)
        img = random_image(rng, w, h)
        axis = data.draw(st.sampled_from([RollAxis.HORIZONTAL, RollAxis.VERTICAL]))
        extent = w if axis is RollAxis.HORIZONTAL else h
        s1 = data.draw(st.integers(min_value=0, max_value=extent - 1))
        s2 = data.draw(st.integers(min_value=0, max_value=extent - 1))
        rolled = roll_patch(img, RollSpec(axis, s1))
        assert np.array_equal(
            np.sort(rolled.pixels.reshape(-1, 3), axis=0),
            np.sort(img.pixels.reshape(-1, 3), axis=0),
        )
        twice = roll_patch(rolled, RollSpec(axis, s2))
        combined = roll_patch(img, RollSpec(axis, (s1 + s2) % extent))
        assert np.array_equal(twice.pixels, combined.pixels)


def hist(counts: dict[int, int]) -> ClassHistogram:
    return ClassHistogram({SeverityLabel(k): v for k, v in counts.items()})


class TestBalancePlan:
    def test_imbalanced_example(self):
        plan = balance_plan(hist({1: 50, 2: 100, 3: 400, 4: 80, 5: 20}), n_mild=2, n_max=10)
        assert plan.rolls_per_class == {
            SeverityLabel(1): 10,
            SeverityLabel(2): 10,
            SeverityLabel(3): 2,
            SeverityLabel(4): 10,
            SeverityLabel(5): 10,
        }

    def test_uncapped_values_before_cap(self):
        # target 1200: ceil(1200/50)-1 = 23, ceil(1200/100)-1 = 11, ceil(1200/20)-1 = 59
        plan = balance_plan(hist({1: 50, 2: 100, 3: 400, 4: 80, 5: 20}), n_mild=2, n_max=100)
        assert plan[SeverityLabel(1)] == 23
        assert plan[SeverityLabel(2)] == 11
        assert plan[SeverityLabel(4)] == 14
        assert plan[SeverityLabel(5)] == 59

    def test_already_balanced(self):
        plan = balance_plan(hist({1: 100, 2: 100, 3: 100, 4: 100, 5: 100}), n_mild=2, n_max=10)
        assert all(n == 2 for n in plan.rolls_per_class.values())

    def test_single_class(self):
        plan = balance_plan(hist({3: 400}))
        assert plan[SeverityLabel.MILD] == 2
        assert all(plan[c] == 0 for c in SeverityLabel if c is not SeverityLabel.MILD)

    def test_empty_histogram(self):
        with pytest.raises(EmptyDataset):
            balance_plan(hist({}))

    def test_zero_rolls_passthrough_plan(self):
        plan = balance_plan(hist({1: 3, 2: 3, 3: 3, 4: 3, 5: 3}), n_mild=0, n_max=0)
        assert all(n == 0 for n in plan.rolls_per_class.values())


class TestAugmentPatchSet:
    def test_forehead_width_300_two_rolls(self):
        rng = np.random.default_rng(3)
        patch = labeled_patch(random_image(rng, 300, 40))
        plan = AugmentationPlan({SeverityLabel.MILD: 2}, cap=2)
        out = augment_patch_set([patch], plan)
        assert [p.shift for p in out] == [0, 100, 200]
        assert all(p.kind is PatchKind.FOREHEAD for p in out)
        assert all(p.label is SeverityLabel.MILD for p in out)
        expected = np.roll(patch.pixels.pixels, -100, axis=1)
        assert np.array_equal(out[1].pixels.pixels, expected)

    def test_zero_plan_passthrough(self):
        patch = labeled_patch(random_image(np.random.default_rng(4), 20, 20))
        out = augment_patch_set([patch], AugmentationPlan({}, cap=0))
        assert len(out) == 1
        assert out[0] is patch

    def test_output_count_identity(self):
        rng = np.random.default_rng(5)
        patches = [
            labeled_patch(random_image(rng, 30, 30), label=SeverityLabel(1 + i % 5))
            for i in range(10)
        ]
        plan = AugmentationPlan({SeverityLabel(c): c for c in range(1, 6)}, cap=5)
        out = augment_patch_set(patches, plan)
        assert len(out) == sum(1 + plan[p.label] for p in patches)

    def test_unlabeled_patch_rejected(self):
        img = random_image(np.random.default_rng(6), 10, 10)
        unlabeled = SkinPatch(PatchKind.CHIN, Rect(0, 0, 10, 10), img)
        with pytest.raises(MissingLabel):
            augment_patch_set([unlabeled], AugmentationPlan({}, cap=0))

    def test_variants_distinct_for_aperiodic_patch(self):
        # strictly increasing column ramp: no nontrivial horizontal period
        ramp = np.zeros((4, 60, 3), dtype=np.uint8)
        ramp[:, :, 0] = np.arange(60, dtype=np.uint8)[None, :]
        patch = labeled_patch(ImageBuffer(ramp))
        out = augment_patch_set([patch], AugmentationPlan({SeverityLabel.MILD: 3}, cap=3))
        blobs = {p.pixels.pixels.tobytes() for p in out}
        assert len(blobs) == 4

    def test_vertical_kind_rolls_rows(self):
        rng = np.random.default_rng(7)
        patch = labeled_patch(random_image(rng, 20, 90), kind=PatchKind.CHIN)
        out = augment_patch_set([patch], AugmentationPlan({SeverityLabel.MILD: 2}, cap=2))
        assert out[1].shift == 30
        assert np.array_equal(out[1].pixels.pixels, np.roll(patch.pixels.pixels, -30, axis=0))

    def test_near_balance_on_synthetic_counts(self):
        rng = np.random.default_rng(8)
        counts = {1: 12, 2: 30, 3: 60, 4: 24, 5: 6}
        patches = []
        for cls, n in counts.items():
            patches += [
                labeled_patch(random_image(rng, 16, 16), label=SeverityLabel(cls))
                for _ in range(n)
            ]
        plan = balance_plan(hist(counts), n_mild=2, n_max=100)
        out = augment_patch_set(patches, plan)
        target = 3 * 60
        by_class = {c: sum(1 for p in out if p.label is c) for c in SeverityLabel}
        for cls, total in by_class.items():
            # one roll adds one full copy of the class, so the overshoot is
            # bounded by the class count
            assert abs(total - target) < counts[int(cls)]
