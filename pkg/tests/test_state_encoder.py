#!/usr/bin/env python3
"""
Tests for the frozen state encoders.
"""

import unittest

import numpy as np

from rpprec.core.dataset import EmbeddingKind, embeddings_from_arrays
from rpprec.core.exceptions import ValidationError
from rpprec.core.state_encoder import GruEncoder, HashTextEncoder, MeanPoolEncoder, StateEncoder, StateVector
from rpprec.core.types import ItemRef


class TestHashTextEncoder(unittest.TestCase):

    def setUp(self):
        self.encoder = HashTextEncoder(dim=64)

    def test_unit_norm_and_deterministic(self):
        """Test vectors are L2-normalized and stable across instances."""
        vec = self.encoder.encode('You are a movie expert.')
        self.assertEqual(vec.shape, (64,))
        self.assertAlmostEqual(float(np.linalg.norm(vec)), 1.0)
        np.testing.assert_array_equal(vec, HashTextEncoder(dim=64).encode('You are a movie expert.'))

    def test_case_and_punctuation_insensitive(self):
        np.testing.assert_array_equal(self.encoder.encode('Movie Expert!'), self.encoder.encode('movie expert'))

    def test_empty_text_is_zero(self):
        self.assertFalse(np.any(self.encoder.encode('')))

    def test_bad_dim(self):
        with self.assertRaises(ValidationError):
            HashTextEncoder(dim=0)


class TestSequenceEncoders(unittest.TestCase):

    def test_gru_is_frozen_and_seeded(self):
        """Test GRU weights are read-only and reproducible from the seed."""
        a = GruEncoder(4, 6, seed=11)
        b = GruEncoder(4, 6, seed=11)
        np.testing.assert_array_equal(a.U_h, b.U_h)
        with self.assertRaises(ValueError):
            a.W_z[0, 0] = 1.0

    def test_gru_recurrent_weights_are_orthogonal(self):
        gru = GruEncoder(3, 5, seed=2)
        np.testing.assert_allclose(gru.U_z @ gru.U_z.T, np.eye(5), atol=1e-10)

    def test_gru_is_order_sensitive(self):
        gru = GruEncoder(3, 5, seed=4)
        x1, x2 = np.array([1.0, 0.0, -1.0]), np.array([0.0, 2.0, 0.5])
        self.assertFalse(np.allclose(gru.run([x1, x2]), gru.run([x2, x1])))
        self.assertTrue(np.all(np.abs(gru.run([x1, x2])) < 1.0))

    def test_mean_pool_is_order_insensitive(self):
        pool = MeanPoolEncoder(3, 5, seed=4)
        x1, x2 = np.array([1.0, 0.0, -1.0]), np.array([0.0, 2.0, 0.5])
        np.testing.assert_allclose(pool.run([x1, x2]), pool.run([x2, x1]))
        np.testing.assert_array_equal(pool.run([]), np.zeros(5))


class TestStateEncoder(unittest.TestCase):
    """Initial states, prompt/ranking updates and embedding fallbacks."""

    def setUp(self):
        self.items = [ItemRef(i, f"Movie {i}") for i in range(4)]
        self.encoder = StateEncoder(HashTextEncoder(32), state_dim=8, gru_input_dim=6, seed=3, fallback_dim=32)

    def test_state_shapes(self):
        state = self.encoder.init_state(5)
        self.assertIsInstance(state, StateVector)
        self.assertEqual(state.dim, 8)
        self.assertEqual(state.step, 0)
        updated = self.encoder.update_state('Please rank these.', self.items, 1)
        self.assertEqual(updated.dim, 8)
        self.assertEqual(updated.step, 1)

    def test_same_seed_same_states(self):
        """Test two encoders built from one seed agree exactly."""
        other = StateEncoder(HashTextEncoder(32), state_dim=8, gru_input_dim=6, seed=3, fallback_dim=32)
        np.testing.assert_array_equal(self.encoder.init_state(2).values, other.init_state(2).values)
        np.testing.assert_array_equal(
            self.encoder.update_state('p', self.items, 1).values,
            other.update_state('p', self.items, 1).values,
        )

    def test_ranking_order_changes_state(self):
        forward = self.encoder.update_state('p', self.items, 1).values
        backward = self.encoder.update_state('p', list(reversed(self.items)), 1).values
        self.assertFalse(np.allclose(forward, backward))

    def test_users_differ(self):
        self.assertFalse(np.allclose(self.encoder.init_state(0).values, self.encoder.init_state(1).values))

    def test_embedding_table_used_when_present(self):
        """Test pretrained user vectors replace the hashed fallback."""
        users = embeddings_from_arrays(EmbeddingKind.USER, {0: [1.0, 0.0, 0.0], 1: [0.0, 1.0, 0.0]})
        encoder = StateEncoder(HashTextEncoder(32), state_dim=8, gru_input_dim=6, seed=3,
                               user_embeddings=users, fallback_dim=32)
        np.testing.assert_allclose(encoder.init_state(0).values, encoder.P_user[0])
        # user 7 is absent from the table
        np.testing.assert_allclose(
            encoder.init_state(7).values,
            encoder.fallback_encoder.encode('user:7') @ encoder.P_user_fallback,
        )

    def test_unknown_output_encoder(self):
        with self.assertRaises(ValidationError):
            StateEncoder(HashTextEncoder(32), output_encoder='lstm')

    def test_non_finite_state_rejected(self):
        with self.assertRaises(ValidationError):
            StateVector(values=np.array([1.0, np.nan]))


if __name__ == '__main__':
    unittest.main()
