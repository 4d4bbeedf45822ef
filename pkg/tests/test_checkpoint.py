#!/usr/bin/env python3
"""
test_checkpoint.py - checkpoint header, byte layout and reload
"""

import json
import os
import shutil
import sys
import tempfile
import unittest

import numpy as np
import numpy.testing as npt

# Add project root to path
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from CheckpointStore import FORMAT_VERSION, Checkpoint, load_checkpoint, save_checkpoint
from Embeddings import RESERVED, EmbeddingTable
from MatchErrors import CheckpointError, CheckpointVersionError
from Matcher import MODEL_VARIANTS, MatchModel, ModelConfig, forward


class TestCheckpoint(unittest.TestCase):

    def setUp(self):
        self.tmpdir = tempfile.mkdtemp()
        self.path = os.path.join(self.tmpdir, "model.ckpt")

    def tearDown(self):
        shutil.rmtree(self.tmpdir)

    def _read(self, path):
        with open(path, "rb") as f:
            return f.read()

    def test_save_load_save_is_byte_identical(self):
        for variant in MODEL_VARIANTS:
            with self.subTest(variant=variant):
                model = MatchModel(ModelConfig(variant=variant, d=3, l=4, seed=5))
                save_checkpoint(Checkpoint.from_model(model, best_epoch=2), self.path)
                again = os.path.join(self.tmpdir, "again.ckpt")
                save_checkpoint(load_checkpoint(self.path), again)
                self.assertEqual(self._read(self.path), self._read(again))

    def test_reloaded_model_gives_same_output(self):
        matrix = np.random.default_rng(1).normal(size=(RESERVED + 6, 4))
        matrix[:RESERVED] = 0.0
        table = EmbeddingTable(matrix)
        model = MatchModel(ModelConfig(variant="mlstm_bilstm", d=3, l=4, seed=2))
        save_checkpoint(Checkpoint.from_model(model), self.path)
        reloaded = load_checkpoint(self.path).to_model()
        before, _ = forward(model, [2, 3, 4], [5, 6], table)
        after, _ = forward(reloaded, [2, 3, 4], [5, 6], table)
        self.assertEqual(before.data.tobytes(), after.data.tobytes())
        self.assertEqual(reloaded.store.names(), model.store.names())

    def test_header_is_self_describing(self):
        model = MatchModel(ModelConfig(variant="mlstm", d=3, l=4, seed=7))
        save_checkpoint(Checkpoint.from_model(model, embedding_checksum="abc"), self.path)
        with open(self.path, "rb") as f:
            header = json.loads(f.readline())
        self.assertEqual(header["format_version"], FORMAT_VERSION)
        self.assertEqual(header["variant"], "mlstm")
        self.assertEqual(header["dims"], {"d": 3, "l": 4, "d_out": 3})
        self.assertEqual(header["class_order"], ["entailment", "contradiction", "neutral"])
        self.assertEqual(header["init"]["seed"], 7)
        self.assertEqual(header["dtype"], "<f8")
        self.assertEqual([name for name, _ in header["blocks"]], model.store.names())
        self.assertEqual(header["metadata"], {"embedding_checksum": "abc"})

    def test_payload_is_little_endian_float64(self):
        model = MatchModel(ModelConfig(variant="mlstm", d=2, l=3))
        save_checkpoint(Checkpoint.from_model(model), self.path)
        payload = self._read(self.path).split(b"\n", 1)[1]
        self.assertEqual(len(payload), 8 * model.store.num_scalars())
        first = model.store.names()[0]
        size = model.store.value(first).size
        npt.assert_array_equal(np.frombuffer(payload[:8 * size], dtype="<f8"),
                               model.store.value(first).reshape(-1))

    def test_version_mismatch(self):
        model = MatchModel(ModelConfig(variant="mlstm", d=2, l=3))
        save_checkpoint(Checkpoint.from_model(model), self.path)
        data = self._read(self.path)
        header, payload = data.split(b"\n", 1)
        record = json.loads(header)
        record["format_version"] = FORMAT_VERSION + 1
        with open(self.path, "wb") as f:
            f.write(json.dumps(record, sort_keys=True).encode() + b"\n" + payload)
        with self.assertRaises(CheckpointVersionError):
            load_checkpoint(self.path)

    def test_truncated_file(self):
        model = MatchModel(ModelConfig(variant="mlstm", d=2, l=3))
        save_checkpoint(Checkpoint.from_model(model), self.path)
        data = self._read(self.path)
        with open(self.path, "wb") as f:
            f.write(data[:-16])
        with self.assertRaises(CheckpointError):
            load_checkpoint(self.path)

    def test_trailing_bytes(self):
        model = MatchModel(ModelConfig(variant="mlstm", d=2, l=3))
        save_checkpoint(Checkpoint.from_model(model), self.path)
        with open(self.path, "ab") as f:
            f.write(b"\x00" * 8)
        with self.assertRaises(CheckpointError):
            load_checkpoint(self.path)

    def test_not_a_checkpoint(self):
        with open(self.path, "wb") as f:
            f.write(b'{"format": "something-else"}\n')
        with self.assertRaises(CheckpointError):
            load_checkpoint(self.path)

    def test_layout_mismatch(self):
        model = MatchModel(ModelConfig(variant="mlstm", d=2, l=3))
        checkpoint = Checkpoint.from_model(model)
        checkpoint.blocks = checkpoint.blocks[:-1]
        with self.assertRaises(CheckpointError):
            checkpoint.to_model()


if __name__ == "__main__":
    unittest.main()
