import copy
import os
import sys
import unittest

import numpy as np

# Add the src directory to the path
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from src.config import RunConfig
from src.decoder.ablation import ABLATION_ROWS, AblationRow, ablation_row, build_ablation_decoder
from src.decoder.allmlp import AllMLPDecoder
from src.decoder.spatial import DecoderConfig, SpatialDecoder
from src.encoder.mit import FeaturePyramid
from src.errors import ArgumentError
from src.segmentation.model import build_model
from src.tensor_core import functional as F
from src.tensor_core.module import BatchNorm2d
from src.tensor_core.tensor import GradTape, Tensor

CHANNELS = [16, 32, 64, 128]


def random_pyramid(batch=1, finest=16, seed=0):
    rng = np.random.default_rng(seed)
    sizes = [finest // 2**i for i in range(4)]
    return FeaturePyramid(*[Tensor(rng.standard_normal((batch, c, s, s))) for c, s in zip(CHANNELS, sizes)])


class TestSpatialDecoder(unittest.TestCase):
    """Alignment, coarse-to-fine fusion, refinement and prediction"""

    def setUp(self):
        self.cfg = DecoderConfig(unified_channels=8)
        self.decoder = SpatialDecoder(CHANNELS, self.cfg, np.random.default_rng(0))

    def test_structure(self):
        self.assertEqual(len(self.decoder.align), 4)
        self.assertEqual(len(self.decoder.fuse), 3)
        self.assertEqual(len(self.decoder.refine), 2)
        self.assertEqual(self.decoder.classifier.weight.shape, (7, 8, 1, 1))

    def test_logits_at_finest_level(self):
        logits = self.decoder(random_pyramid(batch=2))
        self.assertEqual(logits.shape, (2, 7, 16, 16))

    def test_intermediate_state(self):
        state = self.decoder.forward_with_state(random_pyramid())
        self.assertEqual([a.shape for a in state.aligned], [(1, 8, s, s) for s in (16, 8, 4, 2)])
        self.assertEqual(state.fused.shape, (1, 8, 16, 16))
        self.assertEqual(state.refined.shape, (1, 8, 16, 16))
        self.assertEqual(state.logits.shape, (1, 7, 16, 16))

    def test_fusion_uses_all_levels(self):
        """Changing only the coarsest level changes the logits"""
        base = random_pyramid()
        changed = FeaturePyramid(base.f1, base.f2, base.f3, Tensor(base.f4.data + 1.0))
        self.decoder.eval()
        a = self.decoder(base).data
        b = self.decoder(changed).data
        self.assertFalse(np.allclose(a, b))

    def test_eval_is_deterministic(self):
        self.decoder.eval()
        pyramid = random_pyramid()
        np.testing.assert_array_equal(self.decoder(pyramid).data, self.decoder(pyramid).data)

    def test_gradients_reach_every_parameter(self):
        """Eval-mode statistics keep pre-norm conv biases live; a random projection avoids symmetric cancellation"""
        self.decoder.eval()
        pyramid = random_pyramid(batch=2)
        projection = Tensor(np.random.default_rng(7).standard_normal((2, 7, 16, 16)))
        with GradTape():
            (self.decoder(pyramid) * projection).sum().backward()
        for name, param in self.decoder.named_parameters():
            self.assertEqual(param.grad.shape, param.shape, msg=name)
            self.assertTrue(np.any(param.grad != 0.0), msg=name)

    def test_every_intermediate_stays_four_dimensional(self):
        with GradTape() as tape:
            self.decoder(random_pyramid())
        self.assertGreater(len(tape), 0)
        for record in tape.records:
            self.assertEqual(record.output.ndim, 4, msg=record.name)
        self.assertFalse({"Reshape", "Permute", "Matmul"} & set(tape.op_names()))

        allmlp = AllMLPDecoder(CHANNELS, 8, 7, np.random.default_rng(0))
        with GradTape() as tape:
            allmlp(random_pyramid())
        self.assertIn("Permute", tape.op_names())
        self.assertTrue(any(record.output.ndim == 3 for record in tape.records))

    def test_fusion_runs_coarse_to_fine(self):
        self.decoder.eval()
        aligned = self.decoder.align_channels(random_pyramid())
        x = aligned[3]
        for fuse, level in zip(self.decoder.fuse, (2, 1, 0)):
            target = aligned[level]
            upsampled = F.bilinear_upsample(x, target.shape[2], target.shape[3])
            x = fuse(F.concat([target, upsampled], axis=1))
        np.testing.assert_allclose(self.decoder.fuse_coarse_to_fine(aligned).data, x.data)

    def test_fusion_depends_on_level_order(self):
        self.decoder.eval()
        rng = np.random.default_rng(4)
        same_size = [Tensor(rng.standard_normal((1, 8, 4, 4))) for _ in range(4)]
        swapped = [same_size[3], same_size[1], same_size[2], same_size[0]]
        a = self.decoder.fuse_coarse_to_fine(same_size).data
        b = self.decoder.fuse_coarse_to_fine(swapped).data
        self.assertFalse(np.allclose(a, b))

    def test_zeroed_coarsest_level_matches_masked_fusion_weights(self):
        self.decoder.eval()
        aligned = self.decoder.align_channels(random_pyramid())
        zeroed = aligned[:3] + [Tensor(np.zeros(aligned[3].shape))]
        masked = copy.deepcopy(self.decoder)
        masked.fuse[0].conv.weight.data[:, self.cfg.unified_channels :] = 0.0
        noise = Tensor(np.random.default_rng(5).standard_normal(aligned[3].shape))
        np.testing.assert_allclose(
            self.decoder.fuse_coarse_to_fine(zeroed).data,
            masked.fuse_coarse_to_fine(aligned[:3] + [noise]).data,
            atol=1e-12,
        )

    def test_no_norm_or_activation(self):
        cfg = DecoderConfig(unified_channels=8, align_norm="none", align_activation="none", extra_convs=[])
        decoder = SpatialDecoder(CHANNELS, cfg, np.random.default_rng(0))
        self.assertFalse(any(isinstance(m, BatchNorm2d) for _, m in decoder.named_modules()))
        self.assertEqual(decoder(random_pyramid()).shape, (1, 7, 16, 16))


class TestAllMLPDecoder(unittest.TestCase):
    def test_logits_shape(self):
        decoder = AllMLPDecoder(CHANNELS, 8, 4, np.random.default_rng(0))
        self.assertEqual(decoder(random_pyramid(batch=2)).shape, (2, 4, 16, 16))


class TestAblationGrid(unittest.TestCase):
    """The eleven decoder ablation rows"""

    def test_row_count_and_bounds(self):
        self.assertEqual(len(ABLATION_ROWS), 11)
        with self.assertRaises(ArgumentError):
            ablation_row(0)
        with self.assertRaises(ArgumentError):
            ablation_row(12)

    def test_every_row_builds_and_runs(self):
        base = DecoderConfig(unified_channels=8)
        for index in range(1, 12):
            with self.subTest(row=index):
                plan = build_ablation_decoder(ablation_row(index), base)
                decoder = SpatialDecoder(CHANNELS, plan.decoder, np.random.default_rng(index))
                self.assertEqual(decoder(random_pyramid()).shape, (1, 7, 16, 16))

    def test_full_row_matches_default_decoder(self):
        plan = build_ablation_decoder(ablation_row(9))
        self.assertEqual(plan.decoder, DecoderConfig())
        self.assertEqual(plan.loss_kind, "cross_entropy")
        self.assertFalse(plan.augmentation)

    def test_first_row_is_bare(self):
        plan = build_ablation_decoder(ablation_row(1))
        self.assertEqual(plan.decoder.align_norm, "none")
        self.assertEqual(plan.decoder.align_activation, "none")
        self.assertEqual(plan.decoder.extra_convs, [])

    def test_augmented_rows(self):
        self.assertEqual(build_ablation_decoder(ablation_row(10)).loss_kind, "focal_dice")
        self.assertTrue(build_ablation_decoder(ablation_row(11)).augmentation)

    def test_table_cells(self):
        cells = ablation_row(5).table_cells()
        self.assertEqual(cells["Conv."], "3x3")
        self.assertEqual(cells["A. Conv."], "--")
        self.assertEqual(ablation_row(9).table_cells()["A. Conv."], "1x1, 3x3")

    def test_unsupported_row(self):
        with self.assertRaises(ArgumentError):
            build_ablation_decoder(AblationRow("5x5", True, "relu", (), "cross_entropy", False))
        with self.assertRaises(ArgumentError):
            build_ablation_decoder(AblationRow("1x1", True, "relu", (), "hinge", False))


class TestWoundFormer(unittest.TestCase):
    def setUp(self):
        self.model = build_model(RunConfig.micro())

    def test_forward_and_full_resolution(self):
        image = Tensor(np.random.default_rng(0).uniform(size=(1, 3, 64, 64)))
        self.assertEqual(self.model(image).shape, (1, 7, 16, 16))
        self.assertEqual(self.model.forward_full(image).shape, (1, 7, 64, 64))

    def test_predict(self):
        self.model.eval()
        labels = self.model.predict(np.random.default_rng(1).uniform(size=(2, 3, 64, 64)))
        self.assertEqual(labels.shape, (2, 64, 64))
        self.assertTrue(labels.min() >= 0 and labels.max() < 7)

    def test_initial_logits_are_near_zero(self):
        for kind in ("spatial", "allmlp"):
            with self.subTest(decoder=kind):
                model = build_model(RunConfig.micro(), kind)
                weight = model.decoder.classifier.weight.data
                self.assertLessEqual(float(np.abs(weight).max()), 0.02)
                np.testing.assert_array_equal(model.decoder.classifier.bias.data, 0.0)
                logits = model(Tensor(np.random.default_rng(2).uniform(size=(2, 3, 64, 64)))).data
                self.assertLess(float(logits.std()), 0.3)

    def test_allmlp_model_backpropagates_into_every_parameter(self):
        model = build_model(RunConfig.micro(), "allmlp").eval()
        rng = np.random.default_rng(6)
        image = Tensor(rng.uniform(size=(2, 3, 64, 64)))
        labels = rng.integers(0, 7, size=(2, 16, 16))
        with GradTape():
            F.cross_entropy(model(image), labels).backward()
        for name, param in model.named_parameters():
            self.assertTrue(np.any(param.grad != 0.0), msg=name)

    def test_decoder_kind_override(self):
        model = build_model(RunConfig.micro(), "allmlp")
        self.assertIsInstance(model.decoder, AllMLPDecoder)
        self.assertIsInstance(self.model.decoder, SpatialDecoder)


if __name__ == '__main__':
    unittest.main()
