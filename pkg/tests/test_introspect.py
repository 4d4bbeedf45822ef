#!/usr/bin/env python3
"""
test_introspect.py - trace files, gate statistics and NULL alignment reports
"""

import os
import shutil
import sys
import tempfile
import unittest

import numpy as np
import numpy.testing as npt

# Add project root to path
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from Embeddings import RESERVED, EmbeddingTable, build_vocab
from Introspect import (
    NULL_LABEL, StopwordList, export_trace, gate_statistics, null_alignment_report, read_trace, summarize,
)
from MatchErrors import EmptyInputError, ParseError
from Matcher import BASELINE, MatchModel, ModelConfig
from SnliData import load_fixture_tsv

PROJECT_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
FIXTURES = os.path.join(PROJECT_ROOT, "tests", "fixtures")


def fixture_setup(variant="mlstm", l=4, seed=0, positive=False):
    corpus = load_fixture_tsv(os.path.join(FIXTURES, "overfit_64.tsv"))
    vocab = build_vocab(corpus)
    rng = np.random.default_rng(seed)
    if positive:
        matrix = rng.uniform(0.5, 1.5, size=(len(vocab), l))
    else:
        matrix = rng.normal(size=(len(vocab), l))
    matrix[:RESERVED] = 0.0
    model = MatchModel(ModelConfig(variant=variant, d=3, l=l, seed=seed))
    return corpus, vocab, EmbeddingTable(matrix), model


def stopwords():
    return StopwordList.load(os.path.join(PROJECT_ROOT, "config", "stopwords_en_v1.txt"))


class TestStopwordList(unittest.TestCase):

    def test_versioned_resource(self):
        words = stopwords()
        self.assertEqual(words.version, "1")
        self.assertIn("a", words)
        self.assertIn("The", words)
        self.assertIn("not", words)
        self.assertNotIn("dog", words)

    def test_groups(self):
        words = stopwords()
        self.assertEqual(words.group_of("the"), "stop_word")
        self.assertEqual(words.group_of("frisbee"), "content_word")
        self.assertIsNone(words.group_of("."))

    def test_empty_list(self):
        with self.assertRaises(EmptyInputError):
            StopwordList([])


class TestSummarize(unittest.TestCase):

    def test_population_statistics(self):
        stats = summarize("g", "input", [0.2, 0.4])
        self.assertAlmostEqual(stats.mean, 0.3, places=15)
        self.assertAlmostEqual(stats.std, 0.1, places=15)
        self.assertEqual(stats.n, 2)
        self.assertEqual(stats.to_record()["std_kind"], "population")


class TestGateStatistics(unittest.TestCase):

    def test_zero_weights_give_half_open_gates(self):
        corpus, vocab, table, model = fixture_setup()
        for p in model.store:
            p.value.data[...] = 0.0
        stats, warnings = gate_statistics(corpus, model, vocab, table, stopwords())
        self.assertEqual(warnings, [])
        for s in stats:
            with self.subTest(group=s.group, gate=s.gate):
                self.assertEqual(s.mean, 0.5)
                self.assertEqual(s.std, 0.0)

    def test_groups_present(self):
        corpus, vocab, table, model = fixture_setup()
        stats, _ = gate_statistics(corpus, model, vocab, table, stopwords())
        keys = [(s.group, s.gate) for s in stats]
        self.assertEqual(keys, [("stop_word", "input"), ("content_word", "input"), ("token:not", "input"),
                                ("label:entailment", "forget"), ("label:contradiction", "forget"),
                                ("label:neutral", "forget")])
        by_key = {(s.group, s.gate): s for s in stats}
        self.assertEqual(by_key[("token:not", "input")].n, 21)
        for s in stats:
            self.assertTrue(0.0 < s.mean < 1.0)

    def test_corpus_order_does_not_matter(self):
        corpus, vocab, table, model = fixture_setup(seed=3)
        forward_stats, _ = gate_statistics(corpus, model, vocab, table, stopwords())
        reversed_stats, _ = gate_statistics(list(reversed(corpus.pairs)), model, vocab, table, stopwords())
        self.assertEqual(forward_stats, reversed_stats)

    def test_empty_group_warns(self):
        corpus, vocab, table, model = fixture_setup()
        with self.assertLogs("Introspect", level="WARNING"):
            stats, warnings = gate_statistics(corpus, model, vocab, table, stopwords(), tokens=("frisbee",))
        self.assertEqual(warnings, [{"group": "token:frisbee", "gate": "input", "warning": "empty group"}])
        self.assertNotIn("token:frisbee", [s.group for s in stats])

    def test_baseline_has_no_gates(self):
        corpus, vocab, table, model = fixture_setup(variant=BASELINE)
        with self.assertRaises(ValueError):
            gate_statistics(corpus, model, vocab, table, stopwords())

    def test_empty_corpus(self):
        corpus, vocab, table, model = fixture_setup()
        with self.assertRaises(EmptyInputError):
            gate_statistics([], model, vocab, table, stopwords())


class TestTraceFiles(unittest.TestCase):

    def setUp(self):
        self.tmpdir = tempfile.mkdtemp()
        self.path = os.path.join(self.tmpdir, "trace.tsv")

    def tearDown(self):
        shutil.rmtree(self.tmpdir)

    def test_round_trip_is_bitwise(self):
        corpus, vocab, table, model = fixture_setup(seed=4)
        pair = corpus[1]
        trace = export_trace(pair, model, vocab, table, self.path)
        loaded = read_trace(self.path)
        self.assertEqual(loaded.premise_labels, [NULL_LABEL] + list(pair.premise_tokens))
        self.assertEqual(loaded.hypothesis_tokens, list(pair.hypothesis_tokens))
        self.assertEqual(loaded.meta["gold"], pair.label)
        self.assertEqual(loaded.meta["variant"], "mlstm")
        for name in ("alpha", "input_gates", "forget_gates", "output_gates", "hidden"):
            self.assertEqual(loaded.blocks[name].tobytes(), getattr(trace, name).tobytes(), name)
        npt.assert_allclose(loaded.blocks["alpha"].sum(axis=1), np.ones(trace.length), rtol=0, atol=1e-12)

    def test_baseline_trace_has_no_gate_blocks(self):
        corpus, vocab, table, model = fixture_setup(variant=BASELINE)
        export_trace(corpus[0], model, vocab, table, self.path)
        loaded = read_trace(self.path)
        self.assertEqual(sorted(loaded.blocks), ["alpha", "hidden"])

    def test_malformed_file(self):
        with open(self.path, "w") as f:
            f.write("format\tsomething-else\n")
        with self.assertRaises(ParseError):
            read_trace(self.path)


class TestNullAlignment(unittest.TestCase):

    def _null_seeking_model(self):
        corpus, vocab, table, model = fixture_setup(variant="mlstm_word_embedding", positive=True)
        for p in model.store:
            p.value.data[...] = 0.0
        model.store.value("att.W_s")[...] = 100.0 * np.eye(4)
        model.store.value("att.w_e")[...] = -100.0
        return corpus, vocab, table, model

    def test_forced_null_alignment(self):
        corpus, vocab, table, model = self._null_seeking_model()
        pairs = corpus.pairs[:5]
        report = null_alignment_report(pairs, model, vocab, table, threshold=0.5)
        self.assertEqual(len(report), sum(len(p.hypothesis_tokens) for p in pairs))
        for record in report:
            self.assertAlmostEqual(record["null_mass"], 1.0, places=9)
        self.assertEqual(report[0], {"pair": 0, "position": 0, "token": pairs[0].hypothesis_tokens[0],
                                     "null_mass": report[0]["null_mass"], "label": pairs[0].label})

    def test_threshold_one_is_empty(self):
        corpus, vocab, table, model = self._null_seeking_model()
        self.assertEqual(null_alignment_report(corpus.pairs[:3], model, vocab, table, threshold=1.0), [])

    def test_threshold_range(self):
        corpus, vocab, table, model = fixture_setup()
        with self.assertRaises(ValueError):
            null_alignment_report(corpus, model, vocab, table, threshold=0.0)


if __name__ == "__main__":
    unittest.main()
