import os
import sys
import unittest

import numpy as np

# Add the src directory to the path
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from src.errors import LabelRangeError, ShapeError
from src.objectives.losses import (
    LossConfig,
    build_loss,
    cross_entropy,
    focal_dice,
    focal_loss,
    one_hot,
    soft_dice_loss,
)
from src.tensor_core.tensor import GradTape, Tensor


class TestLosses(unittest.TestCase):
    """Values of the training objectives"""

    def setUp(self):
        rng = np.random.default_rng(0)
        self.logits = rng.standard_normal((2, 4, 3, 3))
        self.labels = rng.integers(0, 4, size=(2, 3, 3))

    def test_one_hot(self):
        encoded = one_hot(np.array([[[0, 2]]]), 3)
        self.assertEqual(encoded.shape, (1, 3, 1, 2))
        np.testing.assert_array_equal(encoded[0, :, 0, 1], [0.0, 0.0, 1.0])

    def test_focal_with_zero_gamma_is_cross_entropy(self):
        focal = focal_loss(Tensor(self.logits), self.labels, gamma=0.0).item()
        ce = cross_entropy(Tensor(self.logits), self.labels).item()
        self.assertAlmostEqual(focal, ce, places=12)

    def test_focal_down_weights_easy_pixels(self):
        focal = focal_loss(Tensor(self.logits), self.labels, gamma=2.0).item()
        ce = cross_entropy(Tensor(self.logits), self.labels).item()
        self.assertLess(focal, ce)

    def test_focal_of_uniform_logits(self):
        loss = focal_loss(Tensor(np.zeros((1, 2, 2, 2))), np.zeros((1, 2, 2), dtype=int), gamma=2.0).item()
        self.assertAlmostEqual(loss, 0.25 * np.log(2.0))

    def test_soft_dice_of_uniform_logits(self):
        loss = soft_dice_loss(Tensor(np.zeros((1, 2, 2, 2))), np.zeros((1, 2, 2), dtype=int), smooth=1.0).item()
        # class 0: (2*2 + 1) / (6 + 1); class 1: (0 + 1) / (2 + 1)
        self.assertAlmostEqual(loss, 10.0 / 21.0)

    def test_soft_dice_of_confident_correct_prediction(self):
        labels = np.array([[[0, 1], [1, 0]]])
        logits = 50.0 * (one_hot(labels, 2) - 0.5)
        self.assertAlmostEqual(soft_dice_loss(Tensor(logits), labels).item(), 0.0, places=10)

    def test_focal_dice_is_the_sum(self):
        cfg = LossConfig(kind="focal_dice", focal_gamma=2.0, dice_smooth=1.0)
        total = focal_dice(Tensor(self.logits), self.labels, cfg).item()
        parts = focal_loss(Tensor(self.logits), self.labels, 2.0).item() + soft_dice_loss(Tensor(self.logits), self.labels, 1.0).item()
        self.assertAlmostEqual(total, parts, places=12)

    def test_class_weights(self):
        uniform = cross_entropy(Tensor(self.logits), self.labels, [1.0, 1.0, 1.0, 1.0]).item()
        plain = cross_entropy(Tensor(self.logits), self.labels).item()
        self.assertAlmostEqual(uniform, plain, places=12)
        with self.assertRaises(ShapeError):
            cross_entropy(Tensor(self.logits), self.labels, [1.0, 2.0])
        with self.assertRaises(ValueError):
            LossConfig(class_weights=[1.0, -1.0])

    def test_label_checks(self):
        bad = self.labels.copy()
        bad[0, 0, 0] = 4
        for loss in (lambda l, y: focal_loss(l, y), lambda l, y: soft_dice_loss(l, y)):
            with self.assertRaises(LabelRangeError):
                loss(Tensor(self.logits), bad)

    def test_build_loss(self):
        ce = build_loss(LossConfig())
        fd = build_loss(LossConfig(kind="focal_dice"))
        self.assertAlmostEqual(ce(Tensor(self.logits), self.labels).item(), cross_entropy(Tensor(self.logits), self.labels).item())
        self.assertAlmostEqual(fd(Tensor(self.logits), self.labels).item(), focal_dice(Tensor(self.logits), self.labels).item())

    def test_losses_are_differentiable(self):
        for kind in ("cross_entropy", "focal_dice"):
            with self.subTest(kind=kind):
                logits = Tensor(self.logits, requires_grad=True)
                with GradTape():
                    build_loss(LossConfig(kind=kind))(logits, self.labels).backward()
                self.assertTrue(np.all(np.isfinite(logits.grad)))
                self.assertGreater(np.abs(logits.grad).sum(), 0.0)


if __name__ == '__main__':
    unittest.main()
