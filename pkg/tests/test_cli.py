"""End-to-end tests for the command-line interface."""

import json
import os
import shutil
import tempfile
import unittest

import numpy as np
from click.testing import CliRunner

from cli import cli
from processor.dataset import FeatureSequence, write_sequence

SMALL_SETTINGS = {
    "num_videos": 8,
    "feature_dim": 4,
    "num_stages": 2,
    "layers_per_stage": 2,
    "filters": 4,
    "lstm_hidden": 3,
    "framewise_hidden": 4,
    "epochs": 1,
    "framewise_epochs": 1,
    "models": ["tcn", "mtms-tcn"],
}


def write_config(path, **settings):
    with open(path, "w", encoding="utf-8") as f:
        json.dump({**SMALL_SETTINGS, **settings}, f)
    return path


class TestGenerate(unittest.TestCase):

    def generate_once(self, runner):
        with runner.isolated_filesystem():
            config = write_config("settings.json", dataset_path="data")
            result = runner.invoke(cli, ["--config", config, "generate", "--seed", "3"])
            self.assertEqual(result.exit_code, 0, result.output)
            files = {}
            for name in sorted(os.listdir("data")):
                with open(os.path.join("data", name), "rb") as f:
                    files[name] = f.read()
            return result.output, files

    def test_same_seed_gives_identical_bytes(self):
        runner = CliRunner()
        output_a, files_a = self.generate_once(runner)
        output_b, files_b = self.generate_once(runner)
        self.assertEqual(files_a, files_b)
        self.assertEqual(output_a, output_b)
        self.assertIn("Videos: 8", output_a)
        self.assertIn("step histogram: S0=", output_a)
        manifest = json.loads(files_a["manifest.json"])
        self.assertEqual(len(manifest["videos"]), 8)
        self.assertEqual(manifest["metadata"]["run"]["seed"], 3)

    def test_missing_config_file(self):
        runner = CliRunner()
        with runner.isolated_filesystem():
            result = runner.invoke(cli, ["--config", "absent.json", "generate"])
        self.assertEqual(result.exit_code, 3)
        self.assertIn("Error", result.output)

    def test_unknown_profile(self):
        result = CliRunner().invoke(cli, ["--profile", "huge", "generate"])
        self.assertEqual(result.exit_code, 2)

    def test_invalid_value(self):
        runner = CliRunner()
        with runner.isolated_filesystem():
            config = write_config("settings.json", dataset_path="data")
            result = runner.invoke(cli, ["--config", config, "generate", "--num-videos", "0"])
        self.assertEqual(result.exit_code, 2)


class TestWorkflow(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.temp_dir = tempfile.mkdtemp()
        cls.data = os.path.join(cls.temp_dir, "data")
        cls.out = os.path.join(cls.temp_dir, "out")
        cls.config = write_config(os.path.join(cls.temp_dir, "settings.json"), dataset_path=cls.data,
                                  output_directory=cls.out)
        cls.runner = CliRunner()
        for args in (["generate"], ["train", "--model", "mtms-tcn"]):
            result = cls.runner.invoke(cli, ["--config", cls.config, *args])
            assert result.exit_code == 0, result.output
        cls.checkpoint = os.path.join(cls.out, "mtms-tcn.mtck")
        cls.sequence = os.path.join(cls.data, "video_000.fseq")

    @classmethod
    def tearDownClass(cls):
        shutil.rmtree(cls.temp_dir)

    def invoke(self, *args):
        return self.runner.invoke(cli, ["--config", self.config, *args])

    def test_train_writes_checkpoint_and_history(self):
        self.assertTrue(os.path.exists(self.checkpoint))
        with open(os.path.join(self.out, "mtms-tcn_history.json")) as f:
            history = json.load(f)
        self.assertEqual(history["run"]["variant"], "mtms-tcn")
        self.assertIn("joint", history["histories"])

    def test_online_and_offline_predictions_match(self):
        offline = os.path.join(self.temp_dir, "offline.json")
        online = os.path.join(self.temp_dir, "online.json")
        for path, flags in ((offline, []), (online, ["--online"])):
            result = self.invoke("predict", self.sequence, "--checkpoint", self.checkpoint, "--output", path, *flags)
            self.assertEqual(result.exit_code, 0, result.output)
        with open(offline, "rb") as a, open(online, "rb") as b:
            self.assertEqual(a.read(), b.read())

    def test_predict_csv_and_ribbon(self):
        csv_path = os.path.join(self.temp_dir, "labels.csv")
        ribbon_path = os.path.join(self.temp_dir, "ribbon.svg")
        result = self.invoke("predict", self.sequence, "--checkpoint", self.checkpoint,
                             "--output", os.path.join(self.temp_dir, "p.json"),
                             "--csv", csv_path, "--ribbon", ribbon_path)
        self.assertEqual(result.exit_code, 0, result.output)
        with open(csv_path) as f:
            self.assertEqual(f.readline().strip(), "frame,phase_gt,phase_pred,step_gt,step_pred")
        with open(ribbon_path, "rb") as f:
            self.assertIn(b"<svg", f.read())

    def test_predict_missing_checkpoint(self):
        result = self.invoke("predict", self.sequence, "--checkpoint", os.path.join(self.temp_dir, "none.mtck"))
        self.assertEqual(result.exit_code, 3)

    def test_predict_dimension_mismatch(self):
        path = os.path.join(self.temp_dir, "wide.fseq")
        write_sequence(FeatureSequence("wide", np.zeros((5, 6)), np.zeros(5, dtype=int), np.zeros(5, dtype=int)),
                       path)
        result = self.invoke("predict", path, "--checkpoint", self.checkpoint)
        self.assertEqual(result.exit_code, 2)

    def test_evaluate(self):
        report = os.path.join(self.temp_dir, "evaluation.json")
        result = self.invoke("evaluate", "--checkpoint", self.checkpoint, "--fold", "0", "--report", report)
        self.assertEqual(result.exit_code, 0, result.output)
        with open(report) as f:
            data = json.load(f)
        self.assertEqual([s["stage"] for s in data["stages"]], ["Stage I", "Stage II"])
        self.assertEqual(data["violations"], [])
        self.assertEqual(len(data["videos"]), 2)

    def test_crossval(self):
        out = os.path.join(self.temp_dir, "crossval")
        result = self.invoke("crossval", "--output", out)
        self.assertEqual(result.exit_code, 0, result.output)
        for index in range(4):
            self.assertTrue(os.path.exists(os.path.join(out, f"fold_{index}.json")))
        self.assertTrue(os.path.exists(os.path.join(out, "aggregate.json")))
        self.assertTrue(os.path.exists(os.path.join(out, "run.log")))
        with open(os.path.join(out, "comparison.md")) as f:
            self.assertIn("Stage II", f.read())


class TestGradcheckCommand(unittest.TestCase):

    def test_passes(self):
        result = CliRunner().invoke(cli, ["gradcheck"])
        self.assertEqual(result.exit_code, 0, result.output)
        self.assertIn("mtms_tcn", result.output)
        self.assertNotIn("FAIL", result.output)

    def test_corrupted_operation(self):
        result = CliRunner().invoke(cli, ["gradcheck", "--corrupt-op", "relu"])
        self.assertEqual(result.exit_code, 5)
        self.assertIn("FAIL", result.output)


if __name__ == "__main__":
    unittest.main()
