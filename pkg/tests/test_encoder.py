#!/usr/bin/env python3
"""
test_encoder.py - LSTM step, sentence encoders and their parameter layout
"""

import os
import sys
import unittest

import numpy as np
import numpy.testing as npt

# Add project root to path
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import scalar_oracle
from Encoder import EncoderConfig, LstmParams, encode, encoder_params, lstm_step, register_encoder
from MatchErrors import DimensionError, EmptyInputError
from Numerics import ParameterStore, Tensor, zeros


def zero_params(d, l_in):
    store = ParameterStore()
    for name in LstmParams.field_names():
        shape = (d, l_in) if name.startswith("W_") else (d, d) if name.startswith("V_") else (d,)
        store.add(f"z.{name}", np.zeros(shape))
    return LstmParams.from_bound(store.bind(), "z"), store


def encoder_store(variant, d, l, seed=0, shared=True):
    store = ParameterStore()
    config = EncoderConfig(d=d, variant=variant, shared=shared)
    register_encoder(store, config, l, np.random.default_rng(seed))
    return store, config


class TestLstmStep(unittest.TestCase):

    def test_zero_parameters(self):
        params, _ = zero_params(4, 3)
        h, c, gates = lstm_step(Tensor([0.7, -1.2, 3.0]), zeros(4), zeros(4), params)
        npt.assert_array_equal(gates.i, np.full(4, 0.5))
        npt.assert_array_equal(gates.f, np.full(4, 0.5))
        npt.assert_array_equal(gates.o, np.full(4, 0.5))
        npt.assert_array_equal(h.data, np.zeros(4))
        npt.assert_array_equal(c.data, np.zeros(4))
        for gate in (gates.i, gates.f, gates.o):
            self.assertFalse(gate.flags.writeable)

    def test_zero_parameters_halve_memory(self):
        params, _ = zero_params(2, 2)
        h, c, _ = lstm_step(Tensor([1.0, 1.0]), zeros(2), Tensor([0.8, -0.4]), params)
        npt.assert_allclose(c.data, [0.4, -0.2], rtol=1e-15)
        npt.assert_allclose(h.data, 0.5 * np.tanh([0.4, -0.2]), rtol=1e-15)

    def test_shape_checks(self):
        params, _ = zero_params(3, 2)
        with self.assertRaises(DimensionError):
            lstm_step(Tensor([1.0, 2.0, 3.0]), zeros(3), zeros(3), params)
        with self.assertRaises(DimensionError):
            lstm_step(Tensor([1.0, 2.0]), zeros(2), zeros(3), params)

    def test_matches_scalar_reference(self):
        store = ParameterStore()
        rng = np.random.default_rng(11)
        LstmParams.register(store, "enc", 3, 4, rng)
        params = LstmParams.from_bound(store.bind(), "enc")
        x, h0, c0 = rng.normal(size=4), rng.normal(size=3), rng.normal(size=3)
        h, c, gates = lstm_step(Tensor(x), Tensor(h0), Tensor(c0), params)
        ref_h, ref_c, (ref_i, ref_f, ref_o) = scalar_oracle.lstm_step(
            scalar_oracle.params_of(store), "enc", list(x), list(h0), list(c0))
        npt.assert_allclose(h.data, ref_h, rtol=0, atol=1e-12)
        npt.assert_allclose(c.data, ref_c, rtol=0, atol=1e-12)
        npt.assert_allclose(gates.f, ref_f, rtol=0, atol=1e-12)


class TestEncode(unittest.TestCase):

    def setUp(self):
        self.rng = np.random.default_rng(5)
        self.embedded = self.rng.normal(size=(5, 4))

    def test_lstm_matches_reference(self):
        store, config = encoder_store("lstm", 3, 4)
        out = encode(Tensor(self.embedded), encoder_params(store.bind(), config, "premise"), config)
        ref = scalar_oracle.encode(scalar_oracle.params_of(store), "lstm", self.embedded.tolist())
        self.assertEqual(out.shape, (5, 3))
        npt.assert_allclose(out.data, ref, rtol=0, atol=1e-12)

    def test_bilstm_matches_reference(self):
        store, config = encoder_store("bilstm", 3, 4)
        out = encode(Tensor(self.embedded), encoder_params(store.bind(), config, "hypothesis"), config)
        ref = scalar_oracle.encode(scalar_oracle.params_of(store), "bilstm", self.embedded.tolist())
        self.assertEqual(out.shape, (5, 6))
        npt.assert_allclose(out.data, ref, rtol=0, atol=1e-12)

    def test_bilstm_padding_invariance(self):
        store, config = encoder_store("bilstm", 3, 4)
        params = encoder_params(store.bind(), config, "premise")
        real = self.embedded[:3]
        padded = np.vstack([real, np.zeros((4, 4))])
        plain = encode(Tensor(real), params, config)
        with_pad = encode(Tensor(padded), params, config, length=3)
        npt.assert_allclose(with_pad.data[:3], plain.data, rtol=0, atol=1e-15)

    def test_identity_passes_embeddings_through(self):
        config = EncoderConfig(d=0, variant="identity")
        embedded = Tensor(self.embedded)
        self.assertIs(encode(embedded, None, config), embedded)
        self.assertEqual(config.output_dim(4), 4)

    def test_length_bounds(self):
        store, config = encoder_store("lstm", 2, 4)
        params = encoder_params(store.bind(), config, "premise")
        with self.assertRaises(IndexError):
            encode(Tensor(self.embedded), params, config, length=6)
        with self.assertRaises(EmptyInputError):
            encode(Tensor(self.embedded), params, config, length=0)


class TestEncoderLayout(unittest.TestCase):

    def test_lstm_parameter_count(self):
        store = ParameterStore()
        LstmParams.register(store, "enc", 150, 300, np.random.default_rng(0))
        self.assertEqual(store.num_scalars(), 270600)
        self.assertEqual(len(store), 12)

    def test_biases_start_at_zero(self):
        store, _ = encoder_store("lstm", 4, 3)
        for gate in "ifoc":
            npt.assert_array_equal(store.value(f"enc.b_{gate}"), np.zeros(4))

    def test_separate_encoders(self):
        store, config = encoder_store("lstm", 2, 3, shared=False)
        self.assertIn("enc_p.W_i", store)
        self.assertIn("enc_h.W_i", store)
        self.assertEqual(config.prefixes(), {"premise": "enc_p", "hypothesis": "enc_h"})

    def test_bilstm_output_dim(self):
        self.assertEqual(EncoderConfig(d=7, variant="bilstm").output_dim(300), 14)
        self.assertEqual(EncoderConfig(d=7, variant="lstm").output_dim(300), 7)

    def test_unknown_variant(self):
        with self.assertRaises(ValueError):
            EncoderConfig(d=2, variant="gru")


if __name__ == "__main__":
    unittest.main()
