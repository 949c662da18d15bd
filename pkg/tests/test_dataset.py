"""Tests for feature sequences, the FSEQ format, splits and class weights."""

import os
import shutil
import tempfile
import unittest

import numpy as np

from processor.dataset import (
    HEADER,
    MAX_LABEL,
    Dataset,
    FeatureSequence,
    absent_classes,
    decode_sequence,
    encode_sequence,
    kfold_split,
    load_dataset,
    median_frequency_weights,
    read_sequence,
    subsample,
    write_dataset,
    write_sequence,
)
from processor.errors import FormatError, InvalidArgumentError, NumericError
from processor.ontology import default_ontology


def make_sequence(video_id="v0", frames=10, dim=3, fps=25.0, seed=0):
    rng = np.random.default_rng(seed)
    return FeatureSequence(video_id, rng.standard_normal((frames, dim)), rng.integers(0, 11, frames),
                           rng.integers(0, 44, frames), fps)


class TestFeatureSequence(unittest.TestCase):

    def test_features_stored_as_float32(self):
        seq = make_sequence()
        self.assertEqual(seq.features.dtype, np.float32)
        self.assertEqual(seq.num_frames, 10)
        self.assertEqual(seq.feature_dim, 3)

    def test_label_length_mismatch(self):
        with self.assertRaises(InvalidArgumentError):
            FeatureSequence("v", np.zeros((3, 2)), np.zeros(2, dtype=int), np.zeros(3, dtype=int))

    def test_negative_label(self):
        with self.assertRaises(InvalidArgumentError):
            FeatureSequence("v", np.zeros((2, 2)), np.array([0, -1]), np.zeros(2, dtype=int))

    def test_non_finite_features(self):
        features = np.zeros((2, 2))
        features[0, 1] = np.inf
        with self.assertRaises(NumericError):
            FeatureSequence("v", features, np.zeros(2, dtype=int), np.zeros(2, dtype=int))


class TestSequenceFormat(unittest.TestCase):

    def setUp(self):
        self.temp_dir = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.temp_dir)

    def test_round_trip(self):
        seq = make_sequence(frames=17, dim=5, fps=1.0)
        path = write_sequence(seq, os.path.join(self.temp_dir, "v0.fseq"))
        self.assertEqual(read_sequence(path), seq)

    def test_subsampled_sequence_round_trip(self):
        sub = subsample(make_sequence(frames=30, fps=25.0), 3)
        self.assertEqual(sub.fps, 8.333)
        path = write_sequence(sub, os.path.join(self.temp_dir, "v0.fseq"))
        self.assertEqual(read_sequence(path), sub)

    def test_random_contents_round_trip(self):
        rng = np.random.default_rng(11)
        for trial in range(200):
            frames = 1 if trial < 5 else int(rng.integers(1, 40))
            dim = int(rng.integers(1, 9))
            top = int(rng.choice([1, 44, MAX_LABEL + 1]))
            seq = FeatureSequence(f"v{trial}", rng.standard_normal((frames, dim)) * 10 ** rng.uniform(-3, 3),
                                  rng.integers(0, top, frames), rng.integers(0, top, frames),
                                  float(rng.uniform(0.001, 240.0)))
            data = encode_sequence(seq)
            back = decode_sequence(data, seq.video_id)
            self.assertEqual(back, seq)
            self.assertEqual(encode_sequence(back), data)

    def test_frame_rate_resolution(self):
        self.assertEqual(make_sequence(fps=25 / 3).fps, 8.333)
        self.assertEqual(make_sequence(fps=0.0015).fps, 0.002)
        for fps in (0.0, -1.0, 1e-4, float("inf"), float("nan")):
            with self.assertRaises(InvalidArgumentError):
                make_sequence(fps=fps)

    def test_bad_magic(self):
        data = bytearray(encode_sequence(make_sequence()))
        data[:4] = b"XSEQ"
        with self.assertRaises(FormatError) as ctx:
            decode_sequence(bytes(data), "v0")
        self.assertEqual(ctx.exception.offset, 0)

    def test_bad_version(self):
        data = bytearray(encode_sequence(make_sequence()))
        data[4] = 2
        with self.assertRaises(FormatError) as ctx:
            decode_sequence(bytes(data), "v0")
        self.assertEqual(ctx.exception.offset, 4)

    def test_truncated_payload(self):
        data = encode_sequence(make_sequence())
        with self.assertRaises(FormatError):
            decode_sequence(data[:-1], "v0")
        with self.assertRaises(FormatError):
            decode_sequence(data[:HEADER.size - 2], "v0")

    def test_trailing_bytes(self):
        data = encode_sequence(make_sequence())
        with self.assertRaises(FormatError) as ctx:
            decode_sequence(data + b"\x00", "v0")
        self.assertEqual(ctx.exception.offset, len(data))

    def test_empty_sequence_is_not_written(self):
        seq = FeatureSequence("empty", np.zeros((0, 4)), np.zeros(0, dtype=int), np.zeros(0, dtype=int))
        with self.assertRaises(InvalidArgumentError):
            encode_sequence(seq)


class TestSubsample(unittest.TestCase):

    def test_stride_one_is_identity(self):
        seq = make_sequence()
        self.assertEqual(subsample(seq, 1), seq)

    def test_keeps_every_stride_frame(self):
        seq = make_sequence(frames=10)
        sub = subsample(seq, 3)
        np.testing.assert_array_equal(sub.features, seq.features[[0, 3, 6, 9]])
        np.testing.assert_array_equal(sub.step_labels, seq.step_labels[[0, 3, 6, 9]])

    def test_frame_rate(self):
        self.assertEqual(subsample(make_sequence(frames=50, fps=25.0), 25).fps, 1.0)

    def test_composition(self):
        seq = make_sequence(frames=40)
        self.assertEqual(subsample(subsample(seq, 2), 3), subsample(seq, 6))

    def test_invalid_stride(self):
        for stride in (0, -2, 1.5):
            with self.subTest(stride=stride), self.assertRaises(InvalidArgumentError):
                subsample(make_sequence(), stride)


class TestKFoldSplit(unittest.TestCase):

    def ids(self, count):
        return [f"video_{i:03d}" for i in range(count)]

    def test_sizes(self):
        plan = kfold_split(self.ids(40), 4, 6, seed=0)
        for fold in plan.folds:
            self.assertEqual((len(fold.test), len(fold.train), len(fold.val)), (10, 24, 6))

    def test_test_blocks_partition_the_videos(self):
        ids = self.ids(40)
        plan = kfold_split(ids, 4, 6, seed=7)
        tested = [v for fold in plan.folds for v in fold.test]
        self.assertCountEqual(tested, ids)
        for fold in plan.folds:
            self.assertEqual(set(fold.test) | set(fold.train) | set(fold.val), set(ids))
            self.assertFalse(set(fold.test) & set(fold.train))
            self.assertFalse(set(fold.val) & (set(fold.train) | set(fold.test)))

    def test_small_dataset(self):
        plan = kfold_split(self.ids(8), 4, 1, seed=0)
        for fold in plan.folds:
            self.assertEqual((len(fold.test), len(fold.train), len(fold.val)), (2, 5, 1))

    def test_too_few_videos(self):
        with self.assertRaises(InvalidArgumentError):
            kfold_split(self.ids(3), 4, 0, seed=0)
        with self.assertRaises(InvalidArgumentError):
            kfold_split(self.ids(8), 4, 6, seed=0)

    def test_seeded(self):
        ids = self.ids(20)
        self.assertEqual(kfold_split(ids, 4, 2, seed=3), kfold_split(ids, 4, 2, seed=3))
        self.assertNotEqual(kfold_split(ids, 4, 2, seed=3).folds, kfold_split(ids, 4, 2, seed=4).folds)


class TestMedianFrequencyWeights(unittest.TestCase):

    def test_known_counts(self):
        labels = [np.array([0] * 5 + [1] * 3), np.array([2, 2])]
        np.testing.assert_array_equal(median_frequency_weights(labels, 3), [0.6, 1.0, 1.5])

    def test_uniform_counts(self):
        np.testing.assert_array_equal(median_frequency_weights([np.arange(4).repeat(7)], 4), np.ones(4))

    def test_absent_class_gets_zero(self):
        labels = [np.array([0, 0, 0, 0, 2, 2])]
        with self.assertLogs("processor.dataset", "WARNING") as logs:
            weights = median_frequency_weights(labels, 3)
        np.testing.assert_array_equal(weights, [0.75, 0.0, 1.5])
        self.assertEqual(absent_classes(weights), [1])
        self.assertIn("[1]", logs.output[0])

    def test_random_counts(self):
        rng = np.random.default_rng(5)
        for _ in range(300):
            num_classes = int(rng.integers(1, 12))
            counts = rng.integers(0, 40, num_classes) * rng.integers(0, 2, num_classes)
            counts[rng.integers(num_classes)] += 1
            labels = rng.permutation(np.repeat(np.arange(num_classes), counts))
            pieces = np.array_split(labels, int(rng.integers(1, 4)))
            weights = median_frequency_weights(pieces, num_classes)

            present = counts > 0
            np.testing.assert_array_equal(weights[~present], 0.0)
            self.assertEqual(absent_classes(weights), np.flatnonzero(~present).tolist())
            self.assertTrue((weights[present] > 0).all())
            for a in np.flatnonzero(present):
                for b in np.flatnonzero(present):
                    if counts[a] < counts[b]:
                        self.assertGreater(weights[a], weights[b])
                    elif counts[a] == counts[b]:
                        self.assertEqual(weights[a], weights[b])
            if present.sum() % 2 == 1:
                median = np.median(counts[present])
                np.testing.assert_array_equal(weights[counts == median], 1.0)

    def test_no_frames(self):
        with self.assertRaises(InvalidArgumentError):
            median_frequency_weights([], 3)

    def test_label_out_of_range(self):
        with self.assertRaises(InvalidArgumentError):
            median_frequency_weights([np.array([0, 3])], 3)


class TestDatasetDirectory(unittest.TestCase):

    def setUp(self):
        self.temp_dir = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.temp_dir)

    def test_write_and_load(self):
        dataset = Dataset(default_ontology(), tuple(make_sequence(f"v{i}", frames=12, seed=i) for i in range(3)))
        write_dataset(dataset, self.temp_dir, {"source": "test"})
        self.assertTrue(os.path.exists(os.path.join(self.temp_dir, "manifest.json")))
        loaded = load_dataset(self.temp_dir)
        self.assertEqual(loaded.ids, ["v0", "v1", "v2"])
        self.assertEqual(loaded.metadata, {"source": "test"})
        self.assertEqual(loaded.sequences[1], dataset.sequences[1])
        self.assertEqual(loaded.ontology, default_ontology())

    def test_load_with_stride(self):
        dataset = Dataset(default_ontology(), (make_sequence("v0", frames=12),))
        write_dataset(dataset, self.temp_dir)
        loaded = load_dataset(self.temp_dir, stride=4)
        self.assertEqual(loaded.sequences[0], subsample(dataset.sequences[0], 4))

    def test_corrupt_manifest(self):
        with open(os.path.join(self.temp_dir, "manifest.json"), "w") as f:
            f.write("{not json")
        with self.assertRaises(FormatError):
            load_dataset(self.temp_dir)

    def test_duplicate_ids(self):
        with self.assertRaises(InvalidArgumentError):
            Dataset(default_ontology(), (make_sequence("v0"), make_sequence("v0", seed=1)))

    def test_labels_beyond_ontology(self):
        seq = FeatureSequence("v", np.zeros((2, 2)), np.array([0, 11]), np.array([0, 1]))
        with self.assertRaises(InvalidArgumentError):
            Dataset(default_ontology(), (seq,))

    def test_histogram(self):
        seq = FeatureSequence("v", np.zeros((4, 2)), np.array([0, 0, 1, 1]), np.array([0, 2, 2, 2]))
        dataset = Dataset(default_ontology(), (seq,))
        self.assertEqual(dataset.histogram("step")[:3].tolist(), [1, 0, 3])
        self.assertEqual(int(dataset.histogram("phase").sum()), 4)


if __name__ == "__main__":
    unittest.main()
