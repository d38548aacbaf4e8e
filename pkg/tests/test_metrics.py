import itertools
import os
import sys
import unittest

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.stats import rankdata

# Add the src directory to the path
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from src.errors import ArgumentError, ShapeError, UndefinedTestError
from src.metrics.dice import aggregate_dsc, dice_per_class, per_image_mean_dsc
from src.metrics.report import EvalReport
from src.metrics.wilcoxon import wilcoxon_signed_rank


def brute_force_dice(pred, gt, k):
    both = only_pred = only_gt = 0
    for p, g in zip(pred.ravel().tolist(), gt.ravel().tolist()):
        if p == k and g == k:
            both += 1
        elif p == k:
            only_pred += 1
        elif g == k:
            only_gt += 1
    total = 2 * both + only_pred + only_gt
    return None if total == 0 else 2.0 * both / total


def enumerated_p_value(diffs):
    """Two-sided exact p by listing every sign assignment"""
    diffs = np.asarray([d for d in diffs if d != 0])
    ranks = rankdata(np.abs(diffs))
    w_plus = ranks[diffs > 0].sum()
    statistic = min(w_plus, ranks.sum() - w_plus)
    extreme = 0
    for signs in itertools.product((0, 1), repeat=len(ranks)):
        t_plus = float(np.dot(signs, ranks))
        if min(t_plus, ranks.sum() - t_plus) <= statistic + 1e-9:
            extreme += 1
    return min(1.0, extreme / 2 ** len(ranks))


mask_pairs = st.integers(1, 6).flatmap(
    lambda side: st.tuples(
        arrays(np.int64, (side, side), elements=st.integers(0, 3)),
        arrays(np.int64, (side, side), elements=st.integers(0, 3)),
    )
)


class TestDice(unittest.TestCase):
    """Per-class and macro Dice"""

    def test_matches_brute_force(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            pred = rng.integers(0, 3, size=(4, 5))
            gt = rng.integers(0, 3, size=(4, 5))
            for k in range(4):
                expected = brute_force_dice(pred, gt, k)
                actual = dice_per_class(pred, gt, k)
                if expected is None:
                    self.assertIsNone(actual)
                else:
                    self.assertAlmostEqual(actual, expected, places=12)

    def test_known_values(self):
        gt = np.array([[1, 1], [0, 0]])
        self.assertEqual(dice_per_class(gt, gt, 1), 1.0)
        self.assertEqual(dice_per_class(np.array([[1, 0], [0, 0]]), gt, 1), 2.0 / 3.0)
        self.assertEqual(dice_per_class(np.zeros((2, 2)), gt, 1), 0.0)
        self.assertIsNone(dice_per_class(gt, gt, 2))

    def test_shape_mismatch(self):
        with self.assertRaises(ShapeError):
            dice_per_class(np.zeros((2, 2)), np.zeros((2, 3)), 0)

    @settings(max_examples=100, deadline=None)
    @given(mask_pairs, st.integers(0, 3))
    def test_symmetric_and_bounded(self, pair, k):
        pred, gt = pair
        forward, backward = dice_per_class(pred, gt, k), dice_per_class(gt, pred, k)
        self.assertEqual(forward, backward)
        if forward is not None:
            self.assertTrue(0.0 <= forward <= 1.0)

    @settings(max_examples=100, deadline=None)
    @given(mask_pairs, st.integers(1, 3))
    def test_resolution_invariant(self, pair, factor):
        """Upsampling both masks by pixel replication leaves every score unchanged"""
        pred, gt = pair
        block = np.ones((factor, factor), dtype=np.int64)
        big_pred, big_gt = np.kron(pred, block), np.kron(gt, block)
        for k in range(4):
            small, big = dice_per_class(pred, gt, k), dice_per_class(big_pred, big_gt, k)
            if small is None:
                self.assertIsNone(big)
            else:
                self.assertAlmostEqual(big, small, places=12)
        big_mean, small_mean = per_image_mean_dsc(big_pred, big_gt, range(4)), per_image_mean_dsc(pred, gt, range(4))
        self.assertAlmostEqual(big_mean, small_mean, places=12)

    def test_per_image_mean(self):
        gt = np.array([[0, 1], [1, 1]])
        pred = np.array([[0, 1], [1, 0]])
        # class 0: 2/3, class 1: 4/5, class 2 absent
        self.assertAlmostEqual(per_image_mean_dsc(pred, gt, [0, 1, 2]), (2.0 / 3.0 + 0.8) / 2.0)
        self.assertAlmostEqual(per_image_mean_dsc(pred, gt, [0, 1, 2], absent_policy="perfect"), (2.0 / 3.0 + 0.8 + 1.0) / 3.0)
        self.assertIsNone(per_image_mean_dsc(pred, gt, [5]))

    def test_aggregate_is_order_independent(self):
        rng = np.random.default_rng(1)
        samples = [(rng.integers(0, 4, size=(6, 6)), rng.integers(0, 4, size=(6, 6))) for _ in range(20)]
        report = aggregate_dsc(samples, [0, 1, 2, 3])
        for seed in range(5):
            order = np.random.default_rng(seed).permutation(len(samples))
            shuffled = aggregate_dsc([samples[i] for i in order], [0, 1, 2, 3])
            self.assertEqual(shuffled.mean_dsc, report.mean_dsc)
            self.assertEqual(shuffled.per_class_dsc, report.per_class_dsc)

    def test_aggregate_averages_over_images_where_class_occurs(self):
        a = (np.array([[1, 1]]), np.array([[1, 1]]))
        b = (np.array([[0, 0]]), np.array([[0, 0]]))
        report = aggregate_dsc([a, b], [0, 1, 2], class_names=["bg", "gran", "slough"])
        self.assertEqual(report.per_class_dsc, {"bg": 1.0, "gran": 1.0, "slough": None})
        self.assertEqual(report.mean_dsc, 1.0)
        self.assertEqual(report.per_image_mean_dsc, [1.0, 1.0])
        self.assertEqual(report.n_images, 2)

    def test_aggregate_errors(self):
        with self.assertRaises(ArgumentError):
            aggregate_dsc([], [0, 1])
        with self.assertRaises(ArgumentError):
            aggregate_dsc([(np.zeros((1, 1)), np.zeros((1, 1)))], [])
        with self.assertRaises(ArgumentError):
            aggregate_dsc([(np.zeros((1, 1)), np.zeros((1, 1)))], [0, 1], class_names=["bg"])


class TestEvalReport(unittest.TestCase):
    def setUp(self):
        self.report = EvalReport(
            per_class_dsc={"Background": 0.98, "Granulation": 0.8125, "Bone": None},
            mean_dsc=0.5,
            n_images=3,
            per_image_mean_dsc=[0.9, 0.88, None],
        )

    def test_tsv_layout(self):
        lines = self.report.to_tsv(short_names=["BG", "Gran", "Bone"], label="spatial").strip().splitlines()
        self.assertEqual(lines[0].split("\t"), ["Model", "BG", "Gran", "Bone", "Avg."])
        self.assertEqual(lines[1].split("\t"), ["spatial", "98.0", "81.25", "--", "50.0"])

    def test_frame_name_count(self):
        with self.assertRaises(ValueError):
            self.report.to_frame(short_names=["BG"])

    def test_out_of_range_dsc(self):
        with self.assertRaises(ValueError):
            EvalReport(per_class_dsc={"a": 1.5}, mean_dsc=0.5, n_images=1)

    def test_text_is_json(self):
        self.assertIn('"mean_dsc": 0.5', self.report.to_text())


class TestWilcoxon(unittest.TestCase):
    """Signed-rank test against enumeration and known values"""

    def test_constant_shift_of_six_pairs(self):
        a = np.array([0.5, 0.6, 0.7, 0.8, 0.9, 0.4])
        result = wilcoxon_signed_rank(a + 0.1, a)
        self.assertEqual(result.statistic, 0.0)
        self.assertAlmostEqual(result.p_value, 0.03125)
        self.assertEqual(result.method, "exact")
        self.assertEqual(result.n_pairs, 6)
        self.assertGreater(result.effect_size_r, 0.85)

    def test_matches_enumeration(self):
        rng = np.random.default_rng(7)
        for trial in range(200):
            n = int(rng.integers(5, 13))
            a = rng.normal(size=n)
            b = a + rng.normal(0.3, 1.0, size=n)
            if trial % 3 == 0:
                # coarse values produce tied ranks
                a, b = np.round(a, 1), np.round(b, 1)
            diffs = a - b
            if np.count_nonzero(diffs) < 5:
                continue
            with self.subTest(trial=trial):
                result = wilcoxon_signed_rank(a, b)
                self.assertAlmostEqual(result.p_value, enumerated_p_value(diffs), places=12)

    def test_swapping_samples_keeps_p(self):
        rng = np.random.default_rng(3)
        a, b = rng.normal(size=30), rng.normal(size=30)
        forward, backward = wilcoxon_signed_rank(a, b), wilcoxon_signed_rank(b, a)
        self.assertEqual(forward.method, "normal")
        self.assertAlmostEqual(forward.p_value, backward.p_value)
        self.assertEqual(forward.statistic, backward.statistic)

    def test_large_shift_is_significant(self):
        rng = np.random.default_rng(4)
        a = rng.uniform(size=40)
        result = wilcoxon_signed_rank(a + 1.0, a)
        self.assertLess(result.p_value, 1e-6)

    def test_zero_differences_are_dropped(self):
        a = np.array([1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0])
        b = a.copy()
        b[:5] += 0.5
        self.assertEqual(wilcoxon_signed_rank(a, b).n_pairs, 5)

    def test_errors(self):
        with self.assertRaises(ArgumentError):
            wilcoxon_signed_rank([1.0, 2.0], [1.0])
        with self.assertRaises(UndefinedTestError):
            wilcoxon_signed_rank([0.5] * 6, [0.5] * 6)
        with self.assertRaises(ArgumentError):
            wilcoxon_signed_rank([1.0, 2.0, 3.0, 4.0], [0.0, 0.0, 0.0, 0.0])


if __name__ == '__main__':
    unittest.main()
