"""Tests for cross-validation, reporting artifacts and model evaluation."""

import json
import os
import shutil
import tempfile
import unittest

import numpy as np

from processor.dataset import kfold_split
from processor.errors import InvalidArgumentError
from processor.experiments import (
    VARIANTS,
    comparison_table,
    crossval,
    evaluate_models,
    resolve_variants,
    stage_name,
    train_variant,
    write_crossval_artifacts,
)
from processor.modelparams import TcnConfig, build_model
from processor.synthetic import generate_synthetic, long_range_spec
from processor.training import TrainConfig


def tiny_dataset(num_videos=8, seed=0):
    spec = long_range_spec(feature_dim=4, seed=seed, num_phases=3, steps_per_phase=2, base_dwell=5.0,
                           noise_scale=0.5)
    return generate_synthetic(spec, num_videos, seed)


def tiny_config(**overrides):
    values = dict(num_phases=3, num_steps=7, input_dim=4, num_stages=2, layers_per_stage=2, filters=4,
                  lstm_hidden=3, framewise_hidden=4)
    values.update(overrides)
    return TcnConfig(**values)


class TestVariants(unittest.TestCase):

    def test_resolve(self):
        self.assertEqual([v.label for v in resolve_variants(["tcn", "mtms-tcn"])], ["TCN", "MTMS-TCN"])
        with self.assertRaises(InvalidArgumentError):
            resolve_variants(["gru"])
        with self.assertRaises(InvalidArgumentError):
            resolve_variants([])

    def test_stage_names(self):
        self.assertEqual([stage_name(i) for i in range(3)], ["Stage I", "Stage II", "Stage III"])
        self.assertEqual(stage_name(9), "Stage 10")

    def test_single_task_variant_trains_one_model_per_task(self):
        dataset = tiny_dataset(num_videos=3)
        trained = train_variant(VARIANTS["tcn"], dataset, dataset, tiny_config(), TrainConfig(epochs=1))
        self.assertEqual(set(trained.histories), {"phase", "step"})
        self.assertEqual(trained.models["phase"].config.tasks, ("phase",))
        self.assertEqual(trained.models["step"].config.tasks, ("step",))

    def test_multi_task_variant_shares_one_model(self):
        dataset = tiny_dataset(num_videos=3)
        trained = train_variant(VARIANTS["mt-lstm"], dataset, dataset, tiny_config(), TrainConfig(epochs=1))
        self.assertEqual(set(trained.histories), {"joint"})
        self.assertIs(trained.models["phase"], trained.models["step"])


class TestEvaluateModels(unittest.TestCase):

    def test_stage_rows_and_joint_bound(self):
        dataset = tiny_dataset(num_videos=3)
        params = build_model(tiny_config(num_stages=3), 0)
        evaluation = evaluate_models({"phase": params, "step": params}, dataset)
        self.assertEqual(len(evaluation.stages), 3)
        self.assertEqual(evaluation.violations, ())
        for stage in evaluation.stages:
            ceiling = min(stage.reports["phase"].accuracy, stage.reports["step"].accuracy)
            self.assertLessEqual(stage.joint_accuracy, ceiling)
        self.assertEqual(set(evaluation.predictions), set(dataset.ids))

    def test_single_task_has_no_joint(self):
        dataset = tiny_dataset(num_videos=2)
        params = build_model(tiny_config(multi_task=False, single_task="step"), 0)
        evaluation = evaluate_models({"step": params}, dataset)
        self.assertIsNone(evaluation.final.joint_accuracy)

    def test_empty_test_split(self):
        dataset = tiny_dataset(num_videos=2)
        with self.assertRaises(InvalidArgumentError):
            evaluate_models({"step": build_model(tiny_config(), 0)}, dataset.subset([]))


class TestCrossval(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.dataset = tiny_dataset()
        cls.plan = kfold_split(cls.dataset.ids, 4, 1, seed=0)
        cls.train_cfg = TrainConfig(epochs=1, framewise_epochs=1)
        cls.result = crossval(cls.dataset, cls.plan, ["tcn", "mtms-tcn"], tiny_config(), cls.train_cfg)

    def setUp(self):
        self.temp_dir = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.temp_dir)

    def test_every_fold_and_stage_is_reported(self):
        self.assertEqual(len(self.result.folds), 4)
        for name in ("tcn", "mtms-tcn"):
            self.assertEqual(len(self.result.aggregates[name]), 2)
        self.assertEqual(self.result.violations, [])

    def test_comparison_table(self):
        table = comparison_table(self.result)
        self.assertIn("Stage I ", table)
        self.assertIn("Stage II", table)
        self.assertIn("MTMS-TCN", table)
        self.assertEqual(len(table.strip().splitlines()), 2 + 4)

    def test_artifacts(self):
        run = {"command": "crossval", "seed": 0}
        paths = write_crossval_artifacts(self.result, self.dataset, self.temp_dir, run)
        for name in ("fold_0.json", "fold_3.json", "aggregate.json", "comparison.md"):
            self.assertIn(os.path.join(self.temp_dir, name), paths)
        with open(os.path.join(self.temp_dir, "fold_1.json")) as f:
            fold = json.load(f)
        self.assertEqual(fold["run"], run)
        self.assertEqual(len(fold["variants"]["mtms-tcn"]["stages"]), 2)
        self.assertTrue(any(p.endswith(".svg") for p in paths))

    def test_rerun_is_identical(self):
        again = crossval(self.dataset, self.plan, ["tcn", "mtms-tcn"], tiny_config(), self.train_cfg)
        first = os.path.join(self.temp_dir, "first")
        second = os.path.join(self.temp_dir, "second")
        write_crossval_artifacts(self.result, self.dataset, first, {"seed": 0})
        write_crossval_artifacts(again, self.dataset, second, {"seed": 0})
        for name in ("aggregate.json", "fold_2.json", "comparison.md"):
            with open(os.path.join(first, name), "rb") as a, open(os.path.join(second, name), "rb") as b:
                self.assertEqual(a.read(), b.read(), name)

    def test_worker_threads_match_serial_run(self):
        threaded = crossval(self.dataset, self.plan, ["tcn", "mtms-tcn"], tiny_config(), self.train_cfg, workers=2)
        self.assertEqual(comparison_table(threaded), comparison_table(self.result))
        for serial, parallel in zip(self.result.folds, threaded.folds):
            for video, labels in serial.evaluations["mtms-tcn"].predictions.items():
                np.testing.assert_array_equal(labels["step"],
                                              parallel.evaluations["mtms-tcn"].predictions[video]["step"])

    def test_too_few_videos(self):
        small = tiny_dataset(num_videos=3)
        with self.assertRaises(InvalidArgumentError):
            crossval(small, self.plan, ["tcn"], tiny_config(), self.train_cfg)


if __name__ == "__main__":
    unittest.main()
