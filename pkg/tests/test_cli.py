#!/usr/bin/env python3
"""
test_cli.py - end-to-end run of the command-line pipeline on the fixtures
"""

import contextlib
import io
import json
import os
import shutil
import sys
import tempfile
import unittest

# Add project root to path
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

PROJECT_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
FIXTURES = os.path.join(PROJECT_ROOT, "tests", "fixtures")

import match_core
from CheckpointStore import load_checkpoint


class TestPipeline(unittest.TestCase):

    def setUp(self):
        self.tmpdir = tempfile.mkdtemp()
        config_dir = os.path.join(self.tmpdir, "config")
        shutil.copytree(os.path.join(PROJECT_ROOT, "config"), config_dir)
        self._old_config_dir = os.environ.get("CONFIG_DIR")
        os.environ["CONFIG_DIR"] = config_dir
        self.prepared = os.path.join(self.tmpdir, "prepared")

    def tearDown(self):
        if self._old_config_dir is None:
            os.environ.pop("CONFIG_DIR", None)
        else:
            os.environ["CONFIG_DIR"] = self._old_config_dir
        shutil.rmtree(self.tmpdir)

    def run_cli(self, *argv):
        out, err = io.StringIO(), io.StringIO()
        with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
            status = match_core.main(list(argv))
        return status, out.getvalue(), err.getvalue()

    def prepare(self):
        return self.run_cli("prepare", "--train", os.path.join(FIXTURES, "snli_mini.jsonl"),
                            "--embeddings", os.path.join(FIXTURES, "glove_mini.txt"),
                            "--dim", "4", "--out", self.prepared)

    def train(self, name="model.ckpt", *extra):
        out = os.path.join(self.tmpdir, name)
        status, stdout, _ = self.run_cli("train", "--data", self.prepared, "--epochs", "1", "--d", "4",
                                         "--out", out, *extra)
        self.assertEqual(status, 0)
        return out, stdout

    def test_prepare(self):
        status, stdout, _ = self.prepare()
        self.assertEqual(status, 0)
        self.assertIn("train: 3 kept / 1 dropped", stdout)
        for name in ("vocab.txt", "oov.txt", "embeddings.npy", "train.tsv", "stats.json"):
            self.assertTrue(os.path.exists(os.path.join(self.prepared, name)), name)
        with open(os.path.join(self.prepared, "oov.txt")) as f:
            self.assertEqual(f.read().split(), ["soccer"])

    def test_train_log_header_uses_defaults(self):
        self.prepare()
        checkpoint, stdout = self.train()
        self.assertIn("checkpoint:", stdout)
        with open(os.path.splitext(checkpoint)[0] + ".train.jsonl") as f:
            lines = [json.loads(line) for line in f]
        header = lines[0]
        self.assertEqual((header["lr"], header["beta1"], header["beta2"]), (0.001, 0.9, 0.999))
        self.assertEqual(header["batch_size"], 30)
        self.assertTrue(header["shuffle"])
        self.assertTrue(header["shared_encoder"])
        self.assertEqual(header["adam_epsilon"], 1e-8)
        self.assertEqual(header["epochs"], 1)
        self.assertEqual(len(lines), 2)

    def test_train_optimizer_and_encoder_flags(self):
        self.prepare()
        checkpoint, _ = self.train("separate.ckpt", "--separate-encoders", "--no-shuffle", "--beta1", "0.8",
                                   "--beta2", "0.99", "--adam-epsilon", "1e-6")
        with open(os.path.splitext(checkpoint)[0] + ".train.jsonl") as f:
            header = json.loads(f.readline())
        self.assertEqual((header["beta1"], header["beta2"], header["adam_epsilon"]), (0.8, 0.99, 1e-6))
        self.assertFalse(header["shuffle"])
        self.assertFalse(header["shared_encoder"])
        model = load_checkpoint(checkpoint).to_model()
        self.assertFalse(model.config.shared_encoder)
        names = model.store.names()
        self.assertIn("enc_p.W_i", names)
        self.assertIn("enc_h.W_i", names)
        self.assertNotIn("enc.W_i", names)

    def test_train_shared_encoder_flag(self):
        self.prepare()
        checkpoint, _ = self.train("shared.ckpt", "--shared-encoder")
        names = load_checkpoint(checkpoint).to_model().store.names()
        self.assertIn("enc.W_i", names)
        self.assertNotIn("enc_p.W_i", names)

    def test_encoder_flags_are_exclusive(self):
        with self.assertRaises(SystemExit), contextlib.redirect_stderr(io.StringIO()):
            match_core.main(["train", "--data", self.prepared, "--epochs", "1", "--out", "x.ckpt",
                             "--shared-encoder", "--separate-encoders"])

    def test_runs_are_deterministic(self):
        self.prepare()
        first, _ = self.train("a.ckpt")
        second, _ = self.train("b.ckpt")
        with open(os.path.splitext(first)[0] + ".train.jsonl") as f:
            epoch_a = f.read().splitlines()[1]
        with open(os.path.splitext(second)[0] + ".train.jsonl") as f:
            epoch_b = f.read().splitlines()[1]
        self.assertEqual(epoch_a, epoch_b)
        with open(first, "rb") as fa, open(second, "rb") as fb:
            self.assertEqual(fa.read(), fb.read())

    def test_downstream_commands(self):
        self.prepare()
        checkpoint, _ = self.train()
        data = os.path.join(FIXTURES, "snli_mini.jsonl")

        status, stdout, _ = self.run_cli("eval", "--checkpoint", checkpoint, "--data", data)
        self.assertEqual(status, 0)
        self.assertTrue(stdout.startswith("accuracy: "))
        self.assertIn("pred\\gold", stdout)

        status, stdout, _ = self.run_cli("infer", "--checkpoint", checkpoint,
                                         "--premise", "A dog jumps over a log .", "--hypothesis", "A dog jumps")
        self.assertEqual(status, 0)
        lines = stdout.splitlines()
        self.assertIn(lines[0], ("entailment", "contradiction", "neutral"))
        self.assertEqual([line.split("\t")[0] for line in lines[1:]], ["entailment", "contradiction", "neutral"])
        self.assertAlmostEqual(sum(float(line.split("\t")[1]) for line in lines[1:]), 1.0, places=5)

        trace = os.path.join(self.tmpdir, "trace.tsv")
        status, _, _ = self.run_cli("inspect", "--checkpoint", checkpoint, "--premise", "A man sleeps",
                                    "--hypothesis", "The man is running", "--out", trace)
        self.assertEqual(status, 0)
        self.assertTrue(os.path.exists(trace))

        stats_out = os.path.join(self.tmpdir, "stats.jsonl")
        status, _, _ = self.run_cli("stats", "--checkpoint", checkpoint, "--data", data, "--out", stats_out)
        self.assertEqual(status, 0)
        with open(stats_out) as f:
            records = [json.loads(line) for line in f]
        self.assertIn({"group": "token:not", "gate": "input", "warning": "empty group"}, records)

        status, stdout, _ = self.run_cli("null-align", "--checkpoint", checkpoint, "--data", data,
                                         "--threshold", "0.5")
        self.assertEqual(status, 0)
        for line in stdout.splitlines():
            self.assertGreater(json.loads(line)["null_mass"], 0.5)

    def test_checkgrad(self):
        status, stdout, _ = self.run_cli("checkgrad", "--variant", "mlstm", "--d", "6")
        self.assertEqual(status, 0)
        self.assertIn("max relative error", stdout)

    def test_incompatible_checkpoint_version(self):
        self.prepare()
        checkpoint, _ = self.train()
        with open(checkpoint, "rb") as f:
            header, payload = f.read().split(b"\n", 1)
        record = json.loads(header)
        record["format_version"] = 99
        with open(checkpoint, "wb") as f:
            f.write(json.dumps(record, sort_keys=True).encode() + b"\n" + payload)
        status, _, stderr = self.run_cli("eval", "--checkpoint", checkpoint,
                                         "--data", os.path.join(FIXTURES, "snli_mini.jsonl"))
        self.assertEqual(status, 1)
        self.assertIn("version", stderr)

    def test_malformed_input_exits_nonzero(self):
        bad = os.path.join(self.tmpdir, "bad_train.jsonl")
        with open(bad, "w") as f:
            f.write('{"gold_label": "neutral", "sentence1": "A dog", "sentence2": ""}\n')
        status, _, stderr = self.run_cli("prepare", "--train", bad,
                                         "--embeddings", os.path.join(FIXTURES, "glove_mini.txt"),
                                         "--dim", "4", "--out", self.prepared)
        self.assertEqual(status, 1)
        self.assertIn(":1:", stderr)


if __name__ == "__main__":
    unittest.main()
