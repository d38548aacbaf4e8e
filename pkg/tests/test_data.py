import os
import sys
import tempfile
import unittest
from pathlib import Path

import numpy as np
from scipy import ndimage

# Add the src directory to the path
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from src.data.augment import AugmentConfig, HorizontalFlip, augment, build_pipeline, sample_rng, warp
from src.data.dataset import (
    ClassPalette,
    SegSample,
    iterate_batches,
    load_manifest_samples,
    load_sample,
    read_manifest,
    resize_sample,
    save_sample,
    split_dataset,
    write_manifest,
)
from src.data.netpbm import decode_netpbm, encode_netpbm, read_pgm, write_pgm, write_ppm
from src.data.synthetic import class_frequencies, generate_synthetic_dataset
from src.errors import ArgumentError, CodecError, LabelRangeError, ShapeError


def make_sample(size=32, seed=0, n_cls=7, source_id="s"):
    rng = np.random.default_rng(seed)
    return SegSample(rng.uniform(size=(3, size, size)), rng.integers(0, n_cls, size=(size, size)), source_id)


class TestNetpbm(unittest.TestCase):
    """Binary PPM/PGM codec"""

    def test_encode_decode(self):
        rgb = np.arange(2 * 3 * 3, dtype=np.uint8).reshape(2, 3, 3)
        data = encode_netpbm(rgb)
        self.assertTrue(data.startswith(b"P6\n3 2\n255\n"))
        np.testing.assert_array_equal(decode_netpbm(data, "P6"), rgb)

    def test_header_comments(self):
        data = b"P5\n# written by hand\n2 1\n255\n" + bytes([3, 7])
        np.testing.assert_array_equal(decode_netpbm(data, "P5"), [[3, 7]])

    def test_malformed_inputs(self):
        cases = {
            "wrong magic": (b"P5\n1 1\n255\n\x00", "P6"),
            "truncated raster": (b"P6\n2 2\n255\n\x00\x00\x00", "P6"),
            "truncated header": (b"P6\n2 2", "P6"),
            "16-bit": (b"P5\n1 1\n65535\n\x00\x00", "P5"),
            "bad token": (b"P5\nx 1\n255\n\x00", "P5"),
            "zero extent": (b"P5\n0 1\n255\n", "P5"),
        }
        for name, (data, magic) in cases.items():
            with self.subTest(case=name):
                with self.assertRaises(CodecError):
                    decode_netpbm(data, magic)

    def test_encode_rejects_non_uint8(self):
        with self.assertRaises(CodecError):
            encode_netpbm(np.zeros((2, 2), dtype=np.float64))
        with self.assertRaises(CodecError):
            encode_netpbm(np.zeros((2, 2, 4), dtype=np.uint8))

    def test_file_round_trip(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "mask.pgm"
            grey = np.array([[0, 1], [6, 255]], dtype=np.uint8)
            write_pgm(path, grey)
            np.testing.assert_array_equal(read_pgm(path), grey)


class TestSamples(unittest.TestCase):
    """Loading, saving and manifests"""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)
        self.palette = ClassPalette.six_tissue()

    def tearDown(self):
        self.tmp.cleanup()

    def test_red_image_loads_to_unit_range(self):
        rgb = np.zeros((2, 2, 3), dtype=np.uint8)
        rgb[..., 0] = 255
        write_ppm(self.root / "red.ppm", rgb)
        write_pgm(self.root / "red.pgm", np.array([[0, 1], [2, 6]], dtype=np.uint8))
        sample = load_sample(self.root / "red.ppm", self.root / "red.pgm", self.palette)
        self.assertEqual(sample.image.shape, (3, 2, 2))
        np.testing.assert_array_equal(sample.image[0], 1.0)
        np.testing.assert_array_equal(sample.image[1:], 0.0)
        self.assertEqual(sample.source_id, "red")
        self.assertEqual(sample.mask.dtype, np.int64)

    def test_out_of_range_mask(self):
        write_ppm(self.root / "a.ppm", np.zeros((2, 2, 3), dtype=np.uint8))
        write_pgm(self.root / "a.pgm", np.array([[0, 9], [0, 0]], dtype=np.uint8))
        with self.assertRaises(LabelRangeError):
            load_sample(self.root / "a.ppm", self.root / "a.pgm", self.palette)

    def test_validate(self):
        with self.assertRaises(ShapeError):
            SegSample(np.zeros((3, 4, 4)), np.zeros((4, 5), dtype=int), "x").validate()
        with self.assertRaises(ShapeError):
            SegSample(np.zeros((1, 4, 4)), np.zeros((4, 4), dtype=int), "x").validate()

    def test_save_and_load_manifest(self):
        samples = [make_sample(32, seed=i, source_id=f"s{i}") for i in range(3)]
        entries = []
        for sample in samples:
            save_sample(sample, self.root / f"{sample.source_id}.ppm", self.root / f"{sample.source_id}.pgm")
            entries.append((f"{sample.source_id}.ppm", f"{sample.source_id}.pgm"))
        write_manifest(entries, self.root / "train.tsv")

        pairs = read_manifest(self.root / "train.tsv")
        self.assertEqual(pairs[0], (self.root / "s0.ppm", self.root / "s0.pgm"))
        loaded = load_manifest_samples(self.root / "train.tsv", self.palette)
        self.assertEqual(len(loaded), 3)
        for original, restored in zip(samples, loaded):
            np.testing.assert_array_equal(restored.mask, original.mask)
            np.testing.assert_allclose(restored.image, original.image, atol=0.5 / 255 + 1e-12)

    def test_manifest_errors(self):
        with self.assertRaises(CodecError):
            read_manifest(self.root / "missing.tsv")
        (self.root / "bad.tsv").write_text("only_one_column.ppm\n")
        with self.assertRaises(CodecError):
            read_manifest(self.root / "bad.tsv")

    def test_palettes(self):
        self.assertEqual(ClassPalette.six_tissue().num_classes, 7)
        self.assertEqual(ClassPalette.from_mode("dfu_tissue").names, ["Background", "Granulation", "Callus", "Fibrin"])
        with self.assertRaises(ArgumentError):
            ClassPalette.from_mode("eight_tissue")
        with self.assertRaises(ValueError):
            ClassPalette(names=["Wound", "Background"], short_names=["W", "B"], colors=[(0, 0, 0), (1, 1, 1)])


class TestResizeAndSplit(unittest.TestCase):
    def test_resize_identity_is_a_copy(self):
        sample = make_sample(32)
        resized = resize_sample(sample, 32)
        np.testing.assert_array_equal(resized.image, sample.image)
        self.assertIsNot(resized.mask, sample.mask)

    def test_resize_keeps_mask_labels(self):
        sample = SegSample(np.random.default_rng(0).uniform(size=(3, 40, 50)), np.random.default_rng(1).integers(1, 4, size=(40, 50)), "x")
        resized = resize_sample(sample, 64)
        self.assertEqual(resized.image.shape, (3, 64, 64))
        self.assertTrue(set(np.unique(resized.mask)).issubset({1, 2, 3}))
        self.assertTrue(resized.image.min() >= 0.0 and resized.image.max() <= 1.0)

    def test_resize_size_must_be_multiple_of_32(self):
        with self.assertRaises(ArgumentError):
            resize_sample(make_sample(32), 48)

    def test_split_sizes(self):
        samples = [make_sample(32, seed=i, source_id=f"s{i}") for i in range(147)]
        train, val, test = split_dataset(samples, (118 / 147, 14 / 147, 15 / 147), seed=0)
        self.assertEqual((len(train), len(val), len(test)), (118, 14, 15))
        ids = [s.source_id for s in train + val + test]
        self.assertEqual(len(set(ids)), 147)
        again = split_dataset(samples, (118 / 147, 14 / 147, 15 / 147), seed=0)
        self.assertEqual([s.source_id for s in again[0]], [s.source_id for s in train])

    def test_split_errors(self):
        with self.assertRaises(ArgumentError):
            split_dataset([], (0.5, 0.5), seed=0)
        with self.assertRaises(ArgumentError):
            split_dataset([], (0.5, 0.4, 0.4), seed=0)

    def test_iterate_batches(self):
        samples = [make_sample(32, seed=i) for i in range(5)]
        batches = list(iterate_batches(samples, 2))
        self.assertEqual([b[0].shape[0] for b in batches], [2, 2, 1])
        self.assertEqual(batches[0][1].shape, (2, 32, 32))
        shuffled = list(iterate_batches(samples, 2, np.random.default_rng(0), shuffle=True))
        self.assertEqual(sorted(np.concatenate([b[2] for b in shuffled]).tolist()), [0, 1, 2, 3, 4])
        with self.assertRaises(ArgumentError):
            list(iterate_batches(samples, 0))


class TestAugment(unittest.TestCase):
    """Paired augmentation"""

    def test_disabled_config_is_identity(self):
        sample = make_sample(32)
        out = augment(sample, AugmentConfig.disabled(), np.random.default_rng(0))
        np.testing.assert_array_equal(out.image, sample.image)
        np.testing.assert_array_equal(out.mask, sample.mask)

    def test_double_flip_is_identity(self):
        sample = make_sample(32)
        flip = HorizontalFlip(p=1.0)
        rng = np.random.default_rng(0)
        image, mask = flip(*flip(sample.image, sample.mask, rng), rng)
        np.testing.assert_array_equal(image, sample.image)
        np.testing.assert_array_equal(mask, sample.mask)

    def test_flip_moves_image_and_mask_together(self):
        image = np.zeros((3, 2, 2))
        image[:, 0, 0] = 1.0
        mask = np.array([[5, 0], [0, 0]])
        flipped, flipped_mask = HorizontalFlip(p=1.0)(image, mask, np.random.default_rng(0))
        self.assertEqual(flipped[0, 0, 1], 1.0)
        self.assertEqual(flipped_mask[0, 1], 5)

    def test_identity_warp(self):
        sample = make_sample(32)
        image, mask = warp(sample.image, sample.mask, 0.0, 1.0)
        np.testing.assert_allclose(image, sample.image, atol=1e-12)
        np.testing.assert_array_equal(mask, sample.mask)

    def test_warp_keeps_mask_labels(self):
        sample = make_sample(32, n_cls=3)
        _, mask = warp(sample.image, sample.mask, 0.4, 1.1)
        self.assertTrue(set(np.unique(mask)).issubset({0, 1, 2}))
        self.assertEqual(mask.dtype, sample.mask.dtype)

    def test_seeded_and_valid(self):
        cfg = AugmentConfig(enabled=True, hflip_p=1.0, affine_p=1.0, brightness_contrast_p=1.0, noise_p=1.0)
        sample = make_sample(32)
        first = augment(sample, cfg, sample_rng(cfg, 3, 7))
        second = augment(sample, cfg, sample_rng(cfg, 3, 7))
        np.testing.assert_array_equal(first.image, second.image)
        np.testing.assert_array_equal(first.mask, second.mask)
        first.validate(7)
        self.assertTrue(first.image.min() >= 0.0 and first.image.max() <= 1.0)
        other = augment(sample, cfg, sample_rng(cfg, 4, 7))
        self.assertFalse(np.array_equal(first.image, other.image))

    def test_input_is_not_modified(self):
        sample = make_sample(32)
        before = sample.image.copy()
        augment(sample, AugmentConfig(enabled=True, brightness_contrast_p=1.0), np.random.default_rng(0))
        np.testing.assert_array_equal(sample.image, before)

    def test_pipeline_order(self):
        names = [type(t).__name__ for t in build_pipeline(AugmentConfig()).transforms]
        self.assertEqual(names, ["HorizontalFlip", "VerticalFlip", "RandomAffine", "BrightnessContrast", "GaussianNoise"])


class TestSynthetic(unittest.TestCase):
    """Synthetic wound-like samples"""

    def test_shapes_and_labels(self):
        samples = generate_synthetic_dataset(8, 64, 7, seed=1)
        self.assertEqual(len(samples), 8)
        for sample in samples:
            self.assertEqual(sample.image.shape, (3, 64, 64))
            sample.validate(7)
            self.assertTrue(sample.image.min() >= 0.0 and sample.image.max() <= 1.0)
            self.assertGreater(int((sample.mask > 0).sum()), 0)
        self.assertEqual(samples[3].source_id, "synthetic-1-0003")

    def test_deterministic(self):
        a = generate_synthetic_dataset(3, 32, 4, seed=5, style="boundary")
        b = generate_synthetic_dataset(3, 32, 4, seed=5, style="boundary")
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.image, y.image)
            np.testing.assert_array_equal(x.mask, y.mask)
        c = generate_synthetic_dataset(3, 32, 4, seed=6, style="boundary")
        self.assertFalse(np.array_equal(a[0].mask, c[0].mask) and np.array_equal(a[1].mask, c[1].mask))

    def test_class_imbalance(self):
        samples = generate_synthetic_dataset(200, 32, 7, seed=2)
        counts = np.bincount(np.concatenate([s.mask.ravel() for s in samples]), minlength=7)
        self.assertGreater(counts[1], counts[6])
        np.testing.assert_allclose(class_frequencies(7)[[0, -1]], [1.0, 1.0 / 20.0])

    def test_mask_edge_follows_colour_edge(self):
        """Labelled pixels on the region edge are mostly tissue colour, the pixels just outside mostly skin"""
        inside, outside = [], []
        for sample in generate_synthetic_dataset(8, 64, 2, seed=3):
            region = sample.mask == 1
            green = sample.image[1]
            inside.append(green[region & ~ndimage.binary_erosion(region)])
            outside.append(green[ndimage.binary_dilation(region) & ~region])
        # skin green is 0.68, granulation green 0.16, their midpoint 0.42
        self.assertLess(float(np.concatenate(inside).mean()), 0.36)
        self.assertGreater(float(np.concatenate(outside).mean()), 0.5)

    def test_two_classes(self):
        samples = generate_synthetic_dataset(2, 32, 2, seed=0)
        self.assertTrue(all(set(np.unique(s.mask)).issubset({0, 1}) for s in samples))

    def test_errors(self):
        with self.assertRaises(ArgumentError):
            generate_synthetic_dataset(1, 48, 7, seed=0)
        with self.assertRaises(ArgumentError):
            generate_synthetic_dataset(1, 32, 1, seed=0)
        with self.assertRaises(ArgumentError):
            generate_synthetic_dataset(1, 32, 7, seed=0, style="smooth")


if __name__ == '__main__':
    unittest.main()
