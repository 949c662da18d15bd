"""Tests for accuracy, class-wise precision/recall/F1 and fold aggregation."""

import csv
import math
import os
import shutil
import tempfile
import unittest

import numpy as np

from processor.errors import InvalidArgumentError
from processor.metrics import (
    aggregate_folds,
    critical_class_rows,
    dataset_accuracy,
    dataset_joint_accuracy,
    evaluate_task,
    frame_accuracy,
    joint_accuracy,
    per_class_prf,
    rank_videos,
    write_label_csv,
)
from processor.ontology import default_ontology


def set_based_prf(gt, pred, num_classes):
    """Class-wise scores from explicit frame-index sets."""
    per_class, included = [], []
    for c in range(num_classes):
        gt_c = {t for t, label in enumerate(gt) if label == c}
        pred_c = {t for t, label in enumerate(pred) if label == c}
        both = len(gt_c & pred_c)
        precision = both / len(pred_c) if pred_c else 0.0
        recall = both / len(gt_c) if gt_c else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
        per_class.append((precision, recall, f1))
        if gt_c or pred_c:
            included.append((precision, recall, f1))
    macro = tuple(math.fsum(row[i] for row in included) / len(included) for i in range(3))
    return per_class, macro


class TestAccuracy(unittest.TestCase):

    def test_identical(self):
        self.assertEqual(frame_accuracy([3, 1, 2], [3, 1, 2]), 1.0)

    def test_half_correct(self):
        self.assertEqual(frame_accuracy([0, 0, 1, 1], [0, 1, 1, 0]), 0.5)

    def test_dataset_accuracy_averages_videos(self):
        gts = [np.array([0, 1]), np.array([0, 0, 1, 1])]
        preds = [np.array([0, 1]), np.array([0, 1, 1, 0])]
        self.assertEqual(dataset_accuracy(gts, preds), 0.75)
        self.assertAlmostEqual(dataset_accuracy(gts, preds, pooled=True), 4 / 6)

    def test_length_mismatch(self):
        with self.assertRaises(InvalidArgumentError):
            frame_accuracy([0, 1], [0])
        with self.assertRaises(InvalidArgumentError):
            dataset_accuracy([np.array([0])], [])


class TestPerClassPrf(unittest.TestCase):

    def test_perfect_prediction(self):
        report = per_class_prf([0, 1, 2, 1], [0, 1, 2, 1], 3)
        for scores in report.per_class:
            self.assertEqual((scores.precision, scores.recall, scores.f1), (1.0, 1.0, 1.0))

    def test_hand_example(self):
        report = per_class_prf([0, 0, 1], [0, 1, 1], 2)
        self.assertEqual((report.per_class[0].precision, report.per_class[0].recall), (1.0, 0.5))
        self.assertEqual((report.per_class[1].precision, report.per_class[1].recall), (0.5, 1.0))
        self.assertAlmostEqual(report.macro_f1, 2 / 3, places=15)

    def test_absent_class_is_excluded(self):
        report = per_class_prf([0, 0, 1], [0, 1, 1], 3)
        self.assertEqual(report.excluded_classes, (2,))
        self.assertAlmostEqual(report.macro_f1, 2 / 3, places=15)

    def test_missed_class_scores_zero(self):
        report = per_class_prf([0, 1], [0, 0], 2)
        self.assertEqual(report.per_class[1].precision, 0.0)
        self.assertEqual(report.per_class[1].f1, 0.0)
        self.assertEqual(report.excluded_classes, ())

    def test_matches_set_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            num_classes = int(rng.integers(1, 8))
            frames = int(rng.integers(1, 51))
            gt = rng.integers(0, num_classes, frames)
            pred = rng.integers(0, num_classes, frames)
            report = per_class_prf(gt, pred, num_classes)
            per_class, macro = set_based_prf(gt.tolist(), pred.tolist(), num_classes)
            self.assertEqual([(s.precision, s.recall, s.f1) for s in report.per_class], per_class)
            self.assertEqual((report.macro_precision, report.macro_recall, report.macro_f1), macro)

    def test_swapping_inputs_swaps_precision_and_recall(self):
        rng = np.random.default_rng(1)
        gt, pred = rng.integers(0, 5, 40), rng.integers(0, 5, 40)
        forward = per_class_prf(gt, pred, 5)
        backward = per_class_prf(pred, gt, 5)
        for a, b in zip(forward.per_class, backward.per_class):
            self.assertEqual((a.precision, a.recall), (b.recall, b.precision))

    def test_relabelling_keeps_macro_scores(self):
        rng = np.random.default_rng(2)
        gt, pred = rng.integers(0, 6, 60), rng.integers(0, 6, 60)
        mapping = rng.permutation(6)
        original = per_class_prf(gt, pred, 6)
        relabelled = per_class_prf(mapping[gt], mapping[pred], 6)
        self.assertEqual(original.summary(), relabelled.summary())

    def test_label_out_of_range(self):
        with self.assertRaises(InvalidArgumentError):
            per_class_prf([0, 3], [0, 1], 3)
        with self.assertRaises(InvalidArgumentError):
            per_class_prf([0, 1], [0], 3)

    def test_evaluate_task_pools_frames(self):
        gts = [np.array([0, 0]), np.array([1])]
        preds = [np.array([0, 1]), np.array([1])]
        report = evaluate_task(gts, preds, 2)
        self.assertEqual(report.accuracy, 0.75)
        self.assertEqual(report.per_class[1].precision, 0.5)


class TestJointAccuracy(unittest.TestCase):

    def test_perfect(self):
        self.assertEqual(joint_accuracy([0, 1], [0, 1], [2, 3], [2, 3]), 1.0)

    def test_overlap(self):
        # phase right on frames 0-2, step right on frames 1-3
        self.assertEqual(joint_accuracy([0, 0, 0, 0], [0, 0, 0, 1], [5, 5, 5, 5], [4, 5, 5, 5]), 0.5)

    def test_never_exceeds_task_accuracy(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            frames = int(rng.integers(1, 30))
            pg, pp, sg, sp = (rng.integers(0, 3, frames) for _ in range(4))
            joint = joint_accuracy(pg, pp, sg, sp)
            self.assertLessEqual(joint, min(frame_accuracy(pg, pp), frame_accuracy(sg, sp)))
            self.assertGreaterEqual(joint, 0.0)

    def test_dataset_level(self):
        videos = ([np.array([0, 0])], [np.array([0, 1])], [np.array([1, 1])], [np.array([1, 1])])
        self.assertEqual(dataset_joint_accuracy(*videos), 0.5)

    def test_length_mismatch(self):
        with self.assertRaises(InvalidArgumentError):
            joint_accuracy([0, 1], [0, 1], [0], [0])


class TestAggregateFolds(unittest.TestCase):

    def test_two_folds(self):
        aggregate = aggregate_folds([{"accuracy": 0.90}, {"accuracy": 0.92}])
        self.assertAlmostEqual(aggregate.mean["accuracy"], 0.91)
        self.assertAlmostEqual(aggregate.std["accuracy"], 0.0141421356, places=9)
        self.assertEqual(aggregate.folds, 2)

    def test_single_fold(self):
        self.assertEqual(aggregate_folds([{"accuracy": 0.8}]).std["accuracy"], 0.0)

    def test_identical_folds(self):
        self.assertEqual(aggregate_folds([{"accuracy": 0.7}] * 4).std["accuracy"], 0.0)

    def test_empty(self):
        with self.assertRaises(InvalidArgumentError):
            aggregate_folds([])

    def test_translation(self):
        values = [0.61, 0.73, 0.58, 0.66]
        base = aggregate_folds([{"accuracy": v} for v in values])
        shifted = aggregate_folds([{"accuracy": v + 0.2} for v in values])
        self.assertAlmostEqual(shifted.mean["accuracy"], base.mean["accuracy"] + 0.2, places=12)
        self.assertAlmostEqual(shifted.std["accuracy"], base.std["accuracy"], places=12)

    def test_metrics_reports(self):
        reports = [per_class_prf([0, 1], [0, 1], 2), per_class_prf([0, 1], [0, 0], 2)]
        aggregate = aggregate_folds(reports)
        self.assertEqual(set(aggregate.mean), {"accuracy", "macro_precision", "macro_recall", "macro_f1"})
        self.assertEqual(aggregate.mean["accuracy"], 0.75)

    def test_mismatched_names(self):
        with self.assertRaises(InvalidArgumentError):
            aggregate_folds([{"accuracy": 0.5}, {"macro_f1": 0.5}])


class TestReporting(unittest.TestCase):

    def setUp(self):
        self.temp_dir = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.temp_dir)

    def test_write_label_csv(self):
        path = write_label_csv(os.path.join(self.temp_dir, "labels.csv"), {"gt": [0, 2], "tcn": [1, 2]})
        with open(path, newline="") as f:
            rows = list(csv.reader(f))
        self.assertEqual(rows, [["frame", "gt", "tcn"], ["0", "0", "1"], ["1", "2", "2"]])

    def test_rank_videos(self):
        best, worst = rank_videos({"a": 0.5, "b": 0.9, "c": 0.5, "d": 0.1}, count=2)
        self.assertEqual(best, ["b", "a"])
        self.assertEqual(worst, ["d", "a"])

    def test_critical_class_rows(self):
        ontology = default_ontology()
        labels = np.arange(ontology.num_steps)
        rows = critical_class_rows(per_class_prf(labels, labels, ontology.num_steps), ontology, "step")
        self.assertEqual([row["code"] for row in rows],
                         ["S4", "S5", "S6", "S7", "S8", "S16", "S18", "S25", "S30", "S32", "S39"])
        self.assertTrue(all(row["f1"] == 1.0 for row in rows))


if __name__ == "__main__":
    unittest.main()
