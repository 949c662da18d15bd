"""Tests for the synthetic workflow generator."""

import unittest

import numpy as np

from processor.errors import InvalidArgumentError
from processor.ontology import default_ontology
from processor.synthetic import (
    SyntheticSpec,
    default_synthetic_spec,
    generate_synthetic,
    long_range_spec,
    separable_spec,
)


class TestGenerateSynthetic(unittest.TestCase):

    def test_noise_free_frames_sit_on_their_centers(self):
        spec = default_synthetic_spec(feature_dim=16, seed=1, noise_scale=0.0, smoothing_window=1)
        dataset = generate_synthetic(spec, 3, seed=1)
        centers = spec.centers.astype(np.float32)
        for seq in dataset:
            distances = ((seq.features[:, None, :] - centers[None, :, :]) ** 2).sum(axis=-1)
            np.testing.assert_array_equal(distances.argmin(axis=1), seq.step_labels)

    def test_steps_belong_to_their_phase(self):
        spec = default_synthetic_spec(feature_dim=8, seed=2)
        dataset = generate_synthetic(spec, 5, seed=2)
        self.assertTrue(dataset.ontology.hierarchy)
        for seq in dataset:
            for phase, step in zip(seq.phase_labels, seq.step_labels):
                self.assertTrue(dataset.ontology.is_consistent(int(phase), int(step)))

    def test_null_step_is_shared_by_every_phase(self):
        ontology = default_synthetic_spec(feature_dim=4, seed=2).ontology
        blocks = [ontology.steps_of(p) - {0} for p in range(ontology.num_phases)]
        for phase in range(ontology.num_phases):
            self.assertIn(0, ontology.steps_of(phase))
        self.assertEqual(sum(len(b) for b in blocks), len(frozenset().union(*blocks)))
        self.assertEqual(ontology.steps_of(ontology.num_phases), frozenset())

    def test_phases_run_left_to_right(self):
        dataset = generate_synthetic(default_synthetic_spec(feature_dim=4, seed=3), 6, seed=3)
        for seq in dataset:
            self.assertTrue((np.diff(seq.phase_labels) >= 0).all())
            self.assertEqual(int(seq.phase_labels[0]), 0)
            self.assertEqual(int(seq.phase_labels[-1]), 10)

    def test_histogram_follows_mean_dwells(self):
        spec = default_synthetic_spec(feature_dim=4, seed=4, dwell_spread=0.1, skip_probability=0.0)
        counts = generate_synthetic(spec, 20, seed=4).histogram("step")
        # the null step opens every phase, so it is left out of the ranking
        by_mean = [s for s in np.argsort(spec.dwell_means) if s != 0][::8]
        observed = counts[by_mean]
        self.assertTrue((np.diff(observed) > 0).all(), observed)

    def test_seeded(self):
        spec = default_synthetic_spec(feature_dim=8, seed=5)
        a = generate_synthetic(spec, 4, seed=11)
        b = generate_synthetic(spec, 4, seed=11)
        c = generate_synthetic(spec, 4, seed=12)
        self.assertEqual(a.sequences, b.sequences)
        self.assertEqual(a.metadata, b.metadata)
        self.assertNotEqual(a.sequences, c.sequences)

    def test_video_ids(self):
        dataset = generate_synthetic(default_synthetic_spec(feature_dim=2), 3, seed=0)
        self.assertEqual(dataset.ids, ["video_000", "video_001", "video_002"])
        self.assertEqual(dataset.metadata["num_videos"], 3)

    def test_invalid_count(self):
        with self.assertRaises(InvalidArgumentError):
            generate_synthetic(default_synthetic_spec(feature_dim=2), 0, seed=0)


class TestSpecs(unittest.TestCase):

    def test_invalid_spec(self):
        spec = default_synthetic_spec(feature_dim=4)
        with self.assertRaises(InvalidArgumentError):
            SyntheticSpec(spec.ontology, spec.phase_order, spec.skip_probabilities, spec.phase_steps,
                          spec.dwell_means, spec.dwell_stds, spec.centers, noise_scale=-1.0)
        with self.assertRaises(InvalidArgumentError):
            SyntheticSpec(spec.ontology, spec.phase_order, spec.skip_probabilities, spec.phase_steps,
                          spec.dwell_means[:-1], spec.dwell_stds, spec.centers)
        with self.assertRaises(InvalidArgumentError):
            default_synthetic_spec(feature_dim=0)
        with self.assertRaises(InvalidArgumentError):
            default_synthetic_spec(feature_dim=4, imbalance=0.5)

    def test_default_spec_imbalance(self):
        spec = default_synthetic_spec(feature_dim=4, imbalance=8.0)
        self.assertAlmostEqual(spec.dwell_means.max() / spec.dwell_means.min(), 8.0)
        self.assertEqual(spec.ontology.num_steps, default_ontology().num_steps)

    def test_separable_spec_gives_each_phase_its_own_steps(self):
        spec = separable_spec(feature_dim=8)
        owners = {}
        for phase, steps in spec.phase_steps.items():
            for step in steps:
                owners.setdefault(step, set()).add(phase)
        self.assertTrue(all(len(phases) == 1 for phases in owners.values()))
        self.assertEqual(len(owners), spec.ontology.num_steps)
        self.assertEqual(spec.smoothing_window, 1)

    def test_long_range_spec(self):
        spec = long_range_spec(feature_dim=4, num_phases=3, steps_per_phase=2)
        self.assertEqual((spec.ontology.num_phases, spec.ontology.num_steps), (3, 7))
        dataset = generate_synthetic(spec, 2, seed=0)
        for seq in dataset:
            dwells = np.diff(np.flatnonzero(np.diff(seq.step_labels) != 0))
            self.assertGreater(dwells.mean(), 500)


if __name__ == "__main__":
    unittest.main()
